import filecmp
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshlift.datagen import augment as aug
from meshlift.datagen import cloth as cl
from meshlift.datagen import dataset as ds
from meshlift.datagen import occlude, render, scene, textures
from meshlift.geometry import Camera, MeshGrid3D, project

CAM = Camera.centered(64.0, 64)


def flat_mesh(N=9, z=2.0, half=0.5):
    xs = np.linspace(-half, half, N)
    X, Y = np.meshgrid(xs, xs)
    return MeshGrid3D(np.stack([X.ravel(), Y.ravel(), np.full(N * N, z)], axis=1))


def white():
    return np.ones((16, 16, 3))


class TestCloth:
    def test_equilibrium_without_forces(self):
        s = cl.make_cloth(6, material=1, gravity=0.0)
        start = s.positions.copy()
        cl.step_cloth(s, 500)
        np.testing.assert_array_equal(s.positions, start)

    def test_pins_fixed_and_interior_sags(self):
        N = 7
        corners = (0, N - 1, N * (N - 1), N * N - 1)
        s = cl.make_cloth(N, material=2, pins=corners)
        start = s.positions.copy()
        cl.step_cloth(s, 2000)
        np.testing.assert_array_equal(s.positions[list(corners)], start[list(corners)])
        centre = (N // 2) * N + N // 2
        assert s.positions[centre, 1] < start[centre, 1] - 1e-3

    def test_pins_fixed_under_wind(self):
        s, meta = scene.sample_cloth(5, np.random.default_rng(11))
        start = s.positions.copy()
        cl.step_cloth(s, 1000, seed=3)
        np.testing.assert_array_equal(s.positions[meta["pins"]], start[meta["pins"]])

    def test_pin_validation(self):
        with pytest.raises(ValueError):
            cl.make_cloth(3, pins=(0, 1, 2, 3, 4))
        with pytest.raises(ValueError):
            cl.make_cloth(3, pins=(9,))

    def test_edge_distortion_stiffest_material(self):
        vals = []
        for seed in range(6):
            rng = np.random.default_rng(seed)
            s, _ = scene.sample_cloth(9, rng)
            s = cl.make_cloth(9, s.width, s.height, material=0, pins=s.pins, wind=s.wind)
            k = cl.substeps(9)
            cl.step_cloth(s, 1500 * k, 1e-3 / k, seed=seed)
            vals.append(cl.edge_distortion(s.positions, s))
        assert np.mean(vals) < 0.10

    @pytest.mark.parametrize("material", range(4))
    def test_mechanical_energy_non_increasing(self, material):
        # wind off, damping on; total (kinetic + spring + gravity) energy
        s = cl.make_cloth(5, material=material, pins=(0, 4))
        energy = []
        for _ in range(1500):
            cl.step_cloth(s, 1)
            energy.append(s.kinetic_energy() + s.potential_energy())
        rise = np.diff(energy[10:])
        assert rise.max() <= 1e-12 * np.abs(energy).max()
        assert energy[-1] < energy[10]

    def test_kinetic_energy_non_increasing_free_drift(self):
        s = cl.make_cloth(5, material=0, gravity=0.0)
        s.velocities[:] = [0.3, -0.2, 0.5]
        ke = []
        for _ in range(300):
            cl.step_cloth(s, 1)
            ke.append(s.kinetic_energy())
        assert np.all(np.diff(ke[10:]) <= 1e-15)

    @pytest.mark.parametrize("N", [3, 5, 9, 13])
    def test_substeps_keep_all_materials_stable(self, N):
        k = cl.substeps(N)
        for seed in range(3):
            s0, _ = scene.sample_cloth(N, np.random.default_rng(seed))
            for m in range(4):
                s = cl.make_cloth(N, s0.width, s0.height, material=m, pins=s0.pins, wind=s0.wind)
                cl.step_cloth(s, 800 * k, 1e-3 / k, seed=seed)

    def test_unstable_step_detected(self):
        s = cl.make_cloth(5, material=0, pins=(0, 4))
        with pytest.raises(cl.SimulationError):
            cl.step_cloth(s, 50, dt=0.05)

    def test_simulate_cloth_camera_frame(self):
        s = cl.make_cloth(5, pins=(0, 4))
        X = cl.simulate_cloth(s, 300)
        assert np.all(X.vertices[:, 2] > 0)
        assert s.time == 0.0  # input left untouched


class TestRender:
    def test_lambert_falloff_monotone(self):
        light = render.Light((0.0, 0.0, 0.0), intensity=2.0, ambient=0.0, diffuse=1.0)
        img = render.render(flat_mesh(), CAM, white(), light, 1.0, background=0.0)
        g = img[..., 0]
        assert g.max() < 1.0  # no clamping in the tested range
        r, c = np.unravel_index(g.argmax(), g.shape)
        assert abs(r - CAM.vc) <= 0.5 and abs(c - CAM.uc) <= 0.5
        covered = np.arange(18, 46)
        row = g[32, covered]
        half = len(row) // 2
        assert np.all(np.diff(row[half:]) < 0) and np.all(np.diff(row[:half]) > 0)
        col = g[covered, 32]
        assert np.all(np.diff(col[half:]) < 0)

    def test_ambient_only(self):
        tex = textures.make_texture("noise-rich", 3)
        light = render.Light((0.3, -0.4, 0.5), intensity=5.0, ambient=0.4, diffuse=0.0)
        mesh = flat_mesh()
        img, mask = render.render(mesh, CAM, tex, light, 0.7, return_mask=True)
        tri_id, bary, _, tris = render.rasterize_mesh(mesh, CAM)
        hit = tri_id >= 0
        N = mesh.N
        jj, kk = np.divmod(np.arange(N * N), N)
        uv_v = np.stack([kk / (N - 1), jj / (N - 1)], axis=1)
        uv = np.einsum("pk,pkd->pd", bary[hit], uv_v[tris[tri_id[hit]]])
        expect = 0.7 * textures.sample_bilinear(tex, uv) * 0.4
        np.testing.assert_allclose(img[hit], expect, atol=1e-12)
        assert np.all(img[~mask] == render.BACKGROUND)

    @pytest.mark.parametrize("back_first", [False, True])
    def test_zbuffer_keeps_near_layer(self, back_first):
        # rows 0-2: front sheet at z=2; row 3 folds back behind it at z=3
        N = 4
        ys = [-0.5, 0.0, 0.5, -0.5]
        zs = [2.0, 2.0, 2.0, 3.0]
        xs = np.linspace(-0.5, 0.5, N)
        rows = list(range(N))[::-1] if back_first else list(range(N))
        V = np.array([[x, ys[j], zs[j]] for j in rows for x in xs])
        tri_id, _, depth, _ = render.rasterize_mesh(MeshGrid3D(V), CAM)
        front = np.zeros_like(tri_id, dtype=bool)
        n_front = 2 * (N - 1) * 2
        ids = tri_id[tri_id >= 0]
        is_front = (ids >= 2 * (N - 1)) if back_first else (ids < n_front)
        front[tri_id >= 0] = is_front
        # the back sheet spans v in [~22.7, 40]; all those pixels lie inside the front sheet
        overlap = np.zeros_like(front)
        overlap[24:39, 20:44] = True
        assert np.all(front[overlap])
        np.testing.assert_allclose(depth[overlap], 2.0, atol=1e-12)

    def test_supersample_shape(self):
        light = render.Light((0.0, 0.0, 0.0))
        assert render.render(flat_mesh(), CAM, white(), light, supersample=3).shape == (64, 64, 3)


class TestTextures:
    @pytest.mark.parametrize("kind", textures.KINDS)
    def test_deterministic(self, kind):
        np.testing.assert_array_equal(textures.make_texture(kind, 5), textures.make_texture(kind, 5))
        assert textures.make_texture(kind, 5).min() >= 0 and textures.make_texture(kind, 5).max() <= 1

    def test_checker_seed_changes_pattern(self):
        assert not np.array_equal(textures.make_texture("checker", 1), textures.make_texture("checker", 2))

    def test_plain_has_no_variance(self):
        t = textures.make_texture("plain", 9)
        assert np.all(t == t[0, 0])

    @pytest.mark.parametrize("seed", range(20))
    def test_noise_rich_std(self, seed):
        t = textures.make_texture("noise-rich", seed)
        assert t.reshape(-1, 3).std(axis=0).min() > 0.1

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            textures.make_texture("marble", 0)

    def test_spec_cycles_patterned_kinds(self):
        assert {textures.texture_spec(i, 0)[0] for i in range(6)} == {"checker", "stripes", "noise-rich"}
        assert textures.texture_spec(4, 0, plain=True)[0] == "plain"


class TestOccluders:
    def test_zero_count_unchanged(self, rng):
        img = rng.uniform(size=(32, 32, 3))
        np.testing.assert_array_equal(occlude.add_occluders(img, 0, 1), img)

    def test_exact_gray(self, rng):
        img = rng.uniform(size=(32, 32, 3))
        out = occlude.add_occluders(img, 3, 7, gray=0.5)
        rects, _ = occlude.occluder_rects(3, 7, (0, 32, 0, 32))
        for a, b, c, d in rects:
            assert np.all(out[a:b, c:d] == 0.5)
        assert (out != img).any(axis=-1).sum() > 0

    def test_fraction_over_1000_seeds(self):
        rng = np.random.default_rng(2024)
        for seed in range(1000):
            r0, c0 = (int(x) for x in rng.integers(0, 20, 2))
            bbox = (r0, r0 + int(rng.integers(8, 44)), c0, c0 + int(rng.integers(8, 44)))
            count = int(rng.integers(1, 6))
            rects, frac = occlude.occluder_rects(count, seed, bbox)
            mask = np.zeros((70, 70), dtype=bool)
            for a, b, c, d in rects:
                assert bbox[0] <= a < b <= bbox[1] and bbox[2] <= c < d <= bbox[3]
                mask[a:b, c:d] = True
            box_area = (bbox[1] - bbox[0]) * (bbox[3] - bbox[2])
            measured = mask.sum() / box_area
            assert measured == pytest.approx(frac)
            assert 0.05 <= measured <= 0.40, (seed, measured)


@pytest.fixture(scope="module")
def one_sample():
    cfg = ds.GenConfig(image_size=32, N=3, train=1, val=0, test_known=0, test_new=0, test_plain=0,
                       warmup_steps=200, frame_interval=50, frames_per_sequence=1)
    return ds.generate_split(cfg, "train")[0]


def occluded(sample):
    cfg = ds.GenConfig(image_size=32, N=3)
    return ds.occlude_split(cfg, [sample], "train")[0]


class TestAugment:
    @pytest.mark.parametrize("flip", [aug.flip_h, aug.flip_v, aug.flip_hv])
    def test_flip_involution(self, one_sample, flip):
        back = flip(flip(one_sample))
        assert np.array_equal(back.image, one_sample.image)
        assert np.array_equal(back.mesh3d.vertices, one_sample.mesh3d.vertices)
        assert np.array_equal(back.mesh2d.vertices, one_sample.mesh2d.vertices)
        assert back.camera == one_sample.camera
        assert back.metadata == one_sample.metadata

    def test_flip_h_mirrors_pixels(self, one_sample):
        f = aug.flip_h(one_sample)
        W = one_sample.camera.width
        N = one_sample.mesh2d.N
        u = one_sample.mesh2d.vertices[:, 0].reshape(N, N)
        np.testing.assert_allclose(f.mesh2d.vertices[:, 0].reshape(N, N), (W - 1) - u[:, ::-1], atol=1e-9)
        assert f.metadata["flips"] == "h"
        assert aug.flip_v(f).metadata["flips"] == "hv"

    def test_all_variants_satisfy_invariant(self, one_sample):
        for s in aug.augment(one_sample, seed=4) + aug.augment(occluded(one_sample), seed=5):
            s.check()
            assert s.image.shape == one_sample.image.shape

    def test_rigid_rerenders_occluders(self, one_sample):
        s = aug.rigid_variant(occluded(one_sample), np.random.default_rng(0))
        assert s.metadata["rigid"] == 1
        assert np.any(np.all(s.image == occlude.GRAY, axis=-1))

    def test_color_jitter_touches_image_only(self, one_sample):
        j = aug.jitter_sample(one_sample, np.random.default_rng(1))
        assert j.mesh3d is one_sample.mesh3d and j.mesh2d is one_sample.mesh2d
        assert not np.array_equal(j.image, one_sample.image)
        assert 0 <= j.image.min() and j.image.max() <= 1


class TestScene:
    def test_mesh_catalogue(self):
        dims = np.array([scene.mesh_dims(i) for i in range(scene.NUM_MESHES)])
        aspect = dims[:, 0] / dims[:, 1]
        assert aspect.min() == pytest.approx(0.5) and aspect.max() == pytest.approx(2.0)
        assert len({tuple(d) for d in dims.round(12)}) == scene.NUM_MESHES

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_placement_in_frame(self, seed):
        rng = np.random.default_rng(seed)
        s, _ = scene.sample_cloth(4, rng)
        P = scene.place_in_camera(s.positions, CAM, rng)
        assert scene._fits(P, CAM.fu, CAM, scene.MARGIN)

    def test_quantize(self):
        q = scene.quantize(np.array([0.0, 0.5, 1.2, -0.1]))
        np.testing.assert_array_equal(q * 255, np.round(q * 255))

    def test_contour_corruption(self):
        cfg = ds.GenConfig(image_size=32, N=3, train=1, warmup_steps=200, frame_interval=50,
                           frames_per_sequence=1, contour_noise_px=1.0)
        s = ds.generate_split(cfg, "train")[0]
        assert s.metadata["blurred_contours"]
        s.check()


class TestDataset:
    def test_every_sample_valid(self, tiny_dataset):
        man = ds.read_manifest(tiny_dataset)
        for split in man["splits"]:
            for s in ds.load_split(tiny_dataset, split):
                s.check()
                assert 0 <= s.image.min() and s.image.max() <= 1

    def test_manifest_counts_match_config(self, tiny_dataset, tiny_gen_config):
        man = ds.read_manifest(tiny_dataset)
        for name, (_, count) in tiny_gen_config.splits().items():
            assert man["splits"][name]["count"] == count
            assert len(ds.load_split(tiny_dataset, name)) == count
        assert not set(man["texture_pools"]["train"]) & set(man["texture_pools"]["new"])

    def test_conditions(self, tiny_dataset, tiny_gen_config):
        train_pool = set(tiny_gen_config.texture_pool("train"))
        for s in ds.load_split(tiny_dataset, "test_new"):
            assert s.metadata["texture_id"] not in train_pool
        for s in ds.load_split(tiny_dataset, "test_known"):
            assert s.metadata["texture_id"] in train_pool
        for s in ds.load_split(tiny_dataset, "test_plain"):
            assert s.metadata["texture_kind"] == "plain"
        for s in ds.load_split(tiny_dataset, "test_known_occ"):
            assert s.metadata["occluded"] and 1 <= s.metadata["occluders"] <= tiny_gen_config.max_occluders

    def test_deterministic_regeneration(self, tiny_dataset, tiny_gen_config, tmp_path):
        ds.generate_dataset(tiny_gen_config, tmp_path)
        names = sorted(p.name for p in tiny_dataset.iterdir())
        assert names == sorted(p.name for p in tmp_path.iterdir())
        for n in names:
            assert filecmp.cmp(tiny_dataset / n, tmp_path / n, shallow=False), n

    def test_round_trip_bytes(self, tiny_dataset, tmp_path):
        for split in ("train", "test_known_occ"):
            src = tiny_dataset / f"{split}.bin"
            ds.save_samples(tmp_path / "copy.bin", ds.load_samples(src))
            assert (tmp_path / "copy.bin").read_bytes() == src.read_bytes()
            assert (tmp_path / "copy.meta.jsonl").read_bytes() == (tiny_dataset / f"{split}.meta.jsonl").read_bytes()

    def test_corrupt_files_rejected(self, tiny_dataset):
        buf = (tiny_dataset / "val.bin").read_bytes()
        with pytest.raises(ValueError):
            ds.decode_samples(b"XXXX" + buf[4:])
        with pytest.raises(ValueError):
            ds.decode_samples(buf + b"\0")

    def test_seed_changes_data(self, tiny_gen_config):
        a = ds.generate_split(replace(tiny_gen_config, val=2), "val")
        b = ds.generate_split(replace(tiny_gen_config, val=2, seed=tiny_gen_config.seed + 1), "val")
        assert not np.array_equal(a[0].image, b[0].image)

    def test_augmented_train_split(self, tiny_gen_config):
        cfg = replace(tiny_gen_config, train=9, augment=True)
        out = ds.generate_split(cfg, "train")
        assert len(out) == 9
        assert any("flips" in s.metadata for s in out)
        for s in out:
            s.check()

    def test_validate(self):
        with pytest.raises(ValueError):
            ds.GenConfig(N=1).validate()
        with pytest.raises(ValueError):
            ds.GenConfig(train=-1).validate()

    def test_projection_invariant_example(self, tiny_dataset):
        s = ds.load_split(tiny_dataset, "val")[0]
        np.testing.assert_allclose(project(s.camera, s.mesh3d).vertices, s.mesh2d.vertices, atol=1e-9)
