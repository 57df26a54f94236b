import numpy as np
import pytest

from partsdf import shapegen as sg


class TestGenerate:
    def test_barbell_normalized(self):
        shapes = sg.generate_dataset("barbell", 1, seed=42)
        assert len(shapes) == 1
        shape = shapes[0]
        assert shape.n_slots == 3
        lo, hi = shape.bounds()
        assert np.all(lo >= -0.9 - 1e-9) and np.all(hi <= 0.9 + 1e-9)

    def test_missing_fraction(self):
        shapes = sg.generate_dataset("table", 100, seed=7, missing_fraction=0.2)
        n_missing = sum(1 for s in shapes if not all(s.present()))
        assert 10 <= n_missing <= 30

    def test_determinism(self):
        a = sg.generate_dataset("rocket", 4, seed=3)
        b = sg.generate_dataset("rocket", 4, seed=3)
        for sa, sb in zip(a, b):
            for pa, pb in zip(sa.parts, sb.parts):
                if pa is None:
                    assert pb is None
                    continue
                assert np.array_equal(pa.q, pb.q)
                assert np.array_equal(pa.t, pb.t)
                for k in pa.params:
                    assert np.array_equal(pa.params[k], pb.params[k])

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            sg.generate_dataset("teapot", 1, seed=0)

    def test_all_families(self):
        for family in sg.FAMILIES:
            shapes = sg.generate_dataset(family, 2, seed=1)
            for s in shapes:
                lo, hi = s.bounds()
                assert np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))
                assert max(hi - lo) <= 1.8 + 1e-9


class TestNormalize:
    def test_sphere_diameter(self):
        part = sg.AnalyticPart("sphere", [1, 0, 0, 0], [0, 0, 0], {"radius": 1.0})
        shape = sg.CompositeShape("unit", [part])
        out = sg.normalize_shape(shape)
        assert abs(out.parts[0].params["radius"] - 0.9) < 1e-12

    def test_box_extent(self):
        part = sg.AnalyticPart("box", [1, 0, 0, 0], [2.0, 0.5, 0.5],
                               {"half": np.array([2.0, 0.5, 0.5])})
        shape = sg.CompositeShape("slab", [part])
        out = sg.normalize_shape(shape)
        lo, hi = out.bounds()
        assert abs((hi[0] - lo[0]) - 1.8) < 1e-9
        assert np.allclose((lo + hi) / 2, 0, atol=1e-9)

    def test_idempotent(self):
        shape = sg.generate_dataset("barbell", 1, seed=9)[0]
        again = sg.normalize_shape(shape)
        for pa, pb in zip(shape.parts, again.parts):
            assert np.allclose(pa.t, pb.t, atol=1e-12)
            for k in pa.params:
                assert np.allclose(pa.params[k], pb.params[k], atol=1e-12)


class TestShapeSdf:
    def test_sphere_center(self):
        shape = sg.generate_dataset("barbell", 1, seed=42)[0]
        # slots 0 and 1 are the spheres
        part = shape.parts[0]
        s, p = sg.shape_sdf(shape, part.t[None, :])
        assert p[0] == 0
        assert abs(s[0] + part.params["radius"]) < 1e-12

    def test_min_matches_brute_force(self):
        shape = sg.generate_dataset("table", 1, seed=1)[0]
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(10000, 3))
        s, p = sg.shape_sdf(shape, x)
        per_part = shape.part_sdfs(x)
        assert np.array_equal(s, per_part.min(axis=1))
        assert np.array_equal(p, per_part.argmin(axis=1))

    def test_far_point_distance(self):
        part = sg.AnalyticPart("sphere", [1, 0, 0, 0], [0, 0, 0], {"radius": 0.5})
        shape = sg.CompositeShape("one", [part])
        s, _ = sg.shape_sdf(shape, np.array([[2.0, 0.0, 0.0]]))
        assert abs(s[0] - 1.5) < 1e-12

    def test_lipschitz_along_rays(self):
        shape = sg.generate_dataset("rocket", 1, seed=5)[0]
        rng = np.random.default_rng(1)
        for _ in range(20):
            o = rng.uniform(-1, 1, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            ts = np.sort(rng.uniform(0, 0.5, 50))
            s, _ = sg.shape_sdf(shape, o + ts[:, None] * d)
            gaps = np.abs(np.diff(s))
            assert np.all(gaps <= np.diff(ts) + 1e-6)

    def test_region_label_tie_lowest_index(self):
        a = sg.AnalyticPart("sphere", [1, 0, 0, 0], [-0.5, 0, 0], {"radius": 0.2})
        b = sg.AnalyticPart("sphere", [1, 0, 0, 0], [0.5, 0, 0], {"radius": 0.2})
        shape = sg.CompositeShape("pair", [a, b])
        lab = sg.part_region_label(shape, np.zeros((1, 3)))
        assert lab[0] == 0

    def test_region_label_matches_brute_force(self):
        shape = sg.generate_dataset("car", 1, seed=2)[0]
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, size=(10000, 3))
        lab = sg.part_region_label(shape, x)
        assert np.array_equal(lab, shape.part_sdfs(x).argmin(axis=1))


class TestPrimitiveSdfs:
    def test_signs(self):
        cases = [
            ("sphere", {"radius": 0.5}, [0, 0, 0], [0.8, 0, 0]),
            ("box", {"half": np.array([0.3, 0.2, 0.1])}, [0, 0, 0], [0.5, 0, 0]),
            ("capsule", {"radius": 0.2, "half_length": 0.3}, [0, 0, 0.3], [0.5, 0, 0]),
            ("cylinder", {"radius": 0.2, "half_length": 0.3}, [0, 0, 0.29], [0.5, 0, 0]),
            ("cone", {"radius": 0.3, "half_length": 0.3}, [0, 0, -0.29], [0, 0, 0.5]),
        ]
        for prim, params, inside, outside in cases:
            part = sg.AnalyticPart(prim, [1, 0, 0, 0], [0, 0, 0], params)
            assert part.sdf(np.array([inside], dtype=float))[0] < 0, prim
            assert part.sdf(np.array([outside], dtype=float))[0] > 0, prim

    def test_gradient_magnitude_near_one(self):
        """Exact SDFs have unit gradient away from skeleton points."""
        rng = np.random.default_rng(4)
        for prim, params in [
            ("sphere", {"radius": 0.4}),
            ("capsule", {"radius": 0.2, "half_length": 0.3}),
            ("box", {"half": np.array([0.3, 0.25, 0.2])}),
        ]:
            part = sg.AnalyticPart(prim, [1, 0, 0, 0], [0, 0, 0], params)
            x = rng.uniform(0.5, 0.9, size=(100, 3)) * rng.choice([-1, 1], size=(100, 3))
            eps = 1e-6
            g = np.stack(
                [(part.sdf(x + eps * np.eye(3)[i]) - part.sdf(x - eps * np.eye(3)[i]))
                 / (2 * eps) for i in range(3)], axis=1)
            assert np.abs(np.linalg.norm(g, axis=1) - 1.0).max() < 1e-4, prim


class TestSampling:
    def test_counts(self):
        shape = sg.generate_dataset("barbell", 1, seed=0)[0]
        smp = sg.sample_sdf(shape, 10000, seed=1)
        assert len(smp) == 10000
        uniform = np.all(np.abs(smp.points) <= 1.0, axis=1)
        assert uniform.sum() >= 500  # the 5% uniform tail is inside [-1,1]^3

    def test_labels_valid(self):
        shape = sg.generate_dataset("table", 1, seed=0)[0]
        smp = sg.sample_sdf(shape, 5000, seed=2)
        present = [j for j, _ in shape.present_parts()]
        assert set(np.unique(smp.part_label)) <= set(present)

    def test_sdf_values_match_oracle(self):
        shape = sg.generate_dataset("rocket", 1, seed=1)[0]
        smp = sg.sample_sdf(shape, 2000, seed=3)
        s, p = sg.shape_sdf(shape, smp.points)
        assert np.array_equal(smp.sdf, s)
        assert np.array_equal(smp.part_label, p)

    def test_min_count(self):
        shape = sg.generate_dataset("barbell", 1, seed=0)[0]
        with pytest.raises(ValueError):
            sg.sample_sdf(shape, 19, seed=0)

    def test_determinism(self):
        shape = sg.generate_dataset("car", 1, seed=4)[0]
        a = sg.sample_sdf(shape, 1000, seed=7)
        b = sg.sample_sdf(shape, 1000, seed=7)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.sdf, b.sdf)
        assert np.array_equal(a.part_label, b.part_label)

    def test_noise_scales(self):
        part = sg.AnalyticPart("sphere", [1, 0, 0, 0], [0, 0, 0], {"radius": 0.6})
        shape = sg.CompositeShape("one", [part])
        smp = sg.sample_sdf(shape, 200000, seed=5, near_fraction=1.0)
        r = np.linalg.norm(smp.points, axis=1)
        # radial deviation sees the normal component of the isotropic noise,
        # a 50/50 mixture of the two variances
        mix = np.mean((r - 0.6) ** 2)
        expect = (0.005 + 0.0005) / 2
        assert abs(mix - expect) / expect < 0.05


class TestSerialization:
    def test_samples_round_trip(self, tmp_path):
        shape = sg.generate_dataset("barbell", 1, seed=6)[0]
        smp = sg.sample_sdf(shape, 500, seed=8)
        path = tmp_path / "x.psmp"
        sg.save_samples(path, smp)
        back = sg.load_samples(path)
        assert np.array_equal(back.points, smp.points)
        assert np.array_equal(back.sdf, smp.sdf)
        assert np.array_equal(back.part_label, smp.part_label)
        assert back.n_slots == smp.n_slots

    def test_shape_round_trip(self, tmp_path):
        shape = sg.generate_dataset("table", 1, seed=7)[0]
        path = tmp_path / "x.shape"
        sg.save_shape(path, shape)
        back = sg.load_shape(path)
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, size=(500, 3))
        s0, p0 = sg.shape_sdf(shape, x)
        s1, p1 = sg.shape_sdf(back, x)
        assert np.allclose(s0, s1, atol=1e-15)
        assert np.array_equal(p0, p1)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.psmp"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            sg.load_samples(path)
