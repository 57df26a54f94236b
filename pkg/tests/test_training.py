import numpy as np
import pytest
from scipy.special import softmax

from partsdf import training as tr
from partsdf import shapegen as sg


class TestLossSdf:
    def test_perfect(self):
        assert tr.loss_sdf([0.1, -0.2], [0.1, -0.2], 0.1) == 0.0

    def test_both_clamped(self):
        assert tr.loss_sdf([0.5], [0.2], 0.1) == 0.0

    def test_hand_arithmetic(self):
        assert abs(tr.loss_sdf([-0.05, 0.02], [0.05, 0.02], 0.1) - 0.05) < 1e-15

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            tr.loss_sdf([], [], 0.1)


class TestLossPart:
    def test_perfect(self):
        s_hat = np.array([[0.1, 0.3], [-0.2, 0.4]])
        assert tr.loss_part(s_hat, [0.1, -0.2], [0, 0], 0.1) == 0.0

    def test_single_point(self):
        s_hat = np.array([[0.9, 0.03]])
        assert abs(tr.loss_part(s_hat, [0.01], [1], 0.1) - 0.02) < 1e-15

    def test_equals_loss_sdf_when_single_part(self):
        rng = np.random.default_rng(0)
        s_hat = rng.normal(scale=0.05, size=(100, 1))
        s = rng.normal(scale=0.05, size=100)
        assert tr.loss_part(s_hat, s, np.zeros(100, dtype=int), 0.1) == tr.loss_sdf(
            s_hat[:, 0], s, 0.1
        )


class TestLossInter:
    def test_empty_selection(self):
        s_hat = np.array([[-0.1, 0.2], [0.3, 0.4]])
        assert tr.loss_inter(s_hat, 0.02) == 0.0

    def test_symmetric_pair(self):
        s_hat = np.array([[-0.01, -0.01, 0.5]])
        assert abs(tr.loss_inter(s_hat, 0.02) - 0.01) < 1e-15

    def test_worked_example(self):
        s_hat = np.array([[-0.01, -0.03]])
        w = softmax(np.array([-0.01, -0.03]) / 0.02)
        expect = abs(w @ np.array([-0.01, -0.03]))
        assert abs(expect - 0.01538) < 1e-4  # reference softmax oracle
        assert abs(tr.loss_inter(s_hat, 0.02) - expect) < 1e-12
        assert abs(tr.loss_inter(s_hat, 0.02) - 0.01538) < 1e-5

    def test_weights_sum_to_one_positive_zero(self):
        rng = np.random.default_rng(1)
        s_hat = rng.normal(scale=0.05, size=(50, 4))
        w = tr._inter_weights(s_hat, 0.02)
        assert np.all(w >= 0)
        has_neg = (s_hat < 0).any(axis=1)
        assert np.allclose(w[has_neg].sum(axis=1), 1.0)
        assert np.all(w[~has_neg] == 0.0)
        assert np.all(w[s_hat >= 0] == 0.0)


class TestLossTotal:
    def test_zero_case(self):
        s_hat = np.array([[0.05, 0.3]])
        total, parts = tr.loss_total(s_hat, [0.05], [0], np.zeros((2, 4)), 1e-4, 0.1, 0.02)
        assert total == 0.0

    def test_latent_reg_value(self):
        s_hat = np.array([[0.05, 0.3]])
        z = np.zeros((2, 4))
        z[0, 0] = 2.0  # ||z||^2 = 4
        total, parts = tr.loss_total(s_hat, [0.05], [0], z, 1e-4, 0.1, 0.02)
        assert abs(total - 4e-4) < 1e-18
        assert parts["reg"] == total

    def test_decomposition(self):
        rng = np.random.default_rng(2)
        s_hat = rng.normal(scale=0.05, size=(64, 3))
        s = rng.normal(scale=0.05, size=64)
        lab = rng.integers(3, size=64)
        z = rng.normal(size=(3, 8))
        total, parts = tr.loss_total(s_hat, s, lab, z, 1e-4, 0.1, 0.02)
        assert abs(total - sum(parts.values())) < 1e-15
        # per-point recomputation of the sdf term
        per_point = np.abs(
            np.clip(s_hat.min(axis=1), -0.1, 0.1) - np.clip(s, -0.1, 0.1)
        ).mean()
        assert abs(parts["sdf"] - per_point) < 1e-15


class TestUpstream:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        s_hat = rng.normal(scale=0.04, size=(40, 3))
        s = rng.normal(scale=0.04, size=40)
        lab = rng.integers(3, size=40)
        z = np.zeros((3, 4))
        up = tr.loss_upstream(s_hat, s, lab, 0.1, 0.02)
        eps = 1e-7
        for _ in range(40):
            i, p = rng.integers(40), rng.integers(3)
            sp = s_hat.copy()
            sp[i, p] += eps
            sm = s_hat.copy()
            sm[i, p] -= eps
            fp, _ = tr.loss_total(sp, s, lab, z, 1e-4, 0.1, 0.02)
            fm, _ = tr.loss_total(sm, s, lab, z, 1e-4, 0.1, 0.02)
            fd = (fp - fm) / (2 * eps)
            assert abs(fd - up[i, p]) < 1e-6, (i, p)

    def test_reg_gradient(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(3, 5))
        lam = 1e-4
        eps = 1e-6
        s_hat = np.full((4, 3), 0.2)
        s = np.full(4, 0.2)
        lab = np.zeros(4, dtype=int)
        for idx in [(0, 0), (2, 4)]:
            zp = z.copy()
            zp[idx] += eps
            zm = z.copy()
            zm[idx] -= eps
            fp, _ = tr.loss_total(s_hat, s, lab, zp, lam, 0.1, 0.02)
            fm, _ = tr.loss_total(s_hat, s, lab, zm, lam, 0.1, 0.02)
            fd = (fp - fm) / (2 * eps)
            assert abs(fd - 2 * lam * z[idx]) < 1e-10


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = {"w": np.ones(3)}
        st = tr.AdamState.for_params(p)
        tr.adam_step(p, {"w": np.zeros(3)}, st, 0.1)
        assert np.array_equal(p["w"], np.ones(3))

    def test_first_step_magnitude(self):
        p = {"w": np.zeros(1)}
        st = tr.AdamState.for_params(p)
        tr.adam_step(p, {"w": np.ones(1)}, st, 0.1)
        assert abs(p["w"][0] + 0.1) < 1e-8

    def test_matches_reference_trace(self):
        # quadratic f(x) = 0.5 (x-3)^2, gradient x-3
        p = {"x": np.array([0.0])}
        st = tr.AdamState.for_params(p)
        x_ref, m, v = 0.0, 0.0, 0.0
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        for t in range(1, 101):
            g = x_ref - 3.0
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            tr.adam_step(p, {"x": p["x"] - 3.0}, st, lr)
            assert abs(p["x"][0] - x_ref) < 1e-12


class TestLatentTable:
    def test_absent_slot_average_pose(self):
        shapes = sg.generate_dataset("table", 40, seed=1, missing_fraction=0.5)
        table = tr.build_latent_table(shapes, z_dim=8, seed=0)
        slot = 4  # the optional slot of the table family
        absent = ~table.present[:, slot]
        present = table.present[:, slot]
        assert absent.any() and present.any()
        qa, ta, sa = tr.average_pose(
            table.q[present, slot], table.t[present, slot],
            table.s[present, slot], np.ones(present.sum(), dtype=bool),
        )
        i = np.where(absent)[0][0]
        assert np.allclose(table.q[i, slot], qa)
        assert np.allclose(table.t[i, slot], ta)
        assert np.allclose(table.s[i, slot], sa)

    def test_latent_norm_near_one(self):
        shapes = sg.generate_dataset("barbell", 200, seed=2)
        table = tr.build_latent_table(shapes, z_dim=256, seed=3)
        norms = np.linalg.norm(table.z, axis=-1)
        assert abs(norms.mean() - 1.0) < 0.02


class TestTrain:
    def test_loss_decreases_and_overfits(self):
        shapes = sg.generate_dataset("barbell", 1, seed=21)
        samples = [sg.sample_sdf(shapes[0], 3000, seed=1)]
        ds = tr.TrainingSet(shapes, samples)
        cfg = tr.TrainConfig(epochs=500, batch_size=1, points_per_shape=1024,
                             z_dim=16, hidden=64)
        params, table, history = tr.train(ds, cfg, seed=7)
        sdf = np.array([h["sdf"] for h in history])
        assert sdf[-1] < 0.005
        # 50-epoch moving average drops substantially from start to finish
        avg = np.convolve(sdf, np.ones(50) / 50, mode="valid")
        assert avg[-1] < 0.3 * avg[0]

    def test_determinism(self, tiny_dataset):
        cfg = tr.TrainConfig(epochs=4, batch_size=2, points_per_shape=128,
                             z_dim=8, hidden=16)
        p1, t1, _ = tr.train(tiny_dataset, cfg, seed=9)
        p2, t2, _ = tr.train(tiny_dataset, cfg, seed=9)
        for k in p1.tensors:
            assert np.array_equal(p1[k], p2[k]), k
        assert np.array_equal(t1.z, t2.z)

    def test_history_csv_shape(self, tiny_model):
        _, _, history = tiny_model
        text = tr.history_csv(history)
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,L_sdf,L_part,L_inter,reg,lr"
        assert len(lines) == len(history) + 1
