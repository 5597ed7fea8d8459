"""Unit tests for the optimizer, training loop, and persistence."""

import numpy as np
import pytest

from ldvi.estimator import get_method, init_params
from ldvi.targets import gaussian_toy_target
from ldvi.trainer import (AdamState, RunRecord, TrainPlan, TrainingDiverged,
                          adam_step, clip_gradients, global_grad_norm,
                          load_checkpoint, run_grid, save_checkpoint,
                          select_best, train)


class TestAdam:
    def test_single_step_hand_computed(self):
        """From zero state, bias correction makes the first update
        -lr * g / (|g| + eps')."""
        state = AdamState()
        params = {"x": np.array([1.0, -2.0])}
        g = np.array([0.5, -3.0])
        out = adam_step(state, params, {"x": g}, lr=0.1)
        # m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps)
        want = params["x"] - 0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(out["x"], want, rtol=1e-12)

    def test_two_steps_hand_computed(self):
        state = AdamState()
        params = {"x": np.array(0.0)}
        g1, g2 = 2.0, -1.0
        params = adam_step(state, params, {"x": np.array(g1)}, lr=0.01)
        params = adam_step(state, params, {"x": np.array(g2)}, lr=0.01)
        b1, b2, eps = 0.9, 0.999, 1e-8
        m = (1 - b1) * g1 * b1 + (1 - b1) * g2
        v = (1 - b2) * g1 ** 2 * b2 + (1 - b2) * g2 ** 2
        m_hat = m / (1 - b1 ** 2)
        v_hat = v / (1 - b2 ** 2)
        step1 = -0.01 * g1 / (abs(g1) + eps)
        want = step1 - 0.01 * m_hat / (np.sqrt(v_hat) + eps)
        assert float(params["x"]) == pytest.approx(want, rel=1e-12)

    def test_zero_gradient_leaves_params(self):
        state = AdamState()
        params = {"x": np.array([3.0])}
        out = adam_step(state, params, {"x": np.zeros(1)}, lr=0.5)
        np.testing.assert_array_equal(out["x"], params["x"])

    def test_quadratic_bowl_convergence(self):
        state = AdamState()
        params = {"x": np.array([0.0, 0.0])}
        target = np.array([1.5, -0.5])
        for _ in range(500):
            grad = 2.0 * (params["x"] - target)
            params = adam_step(state, params, {"x": grad}, lr=1e-2)
        assert np.max(np.abs(params["x"] - target)) < 1e-3

    def test_only_graded_keys_move(self):
        state = AdamState()
        params = {"a": np.array(1.0), "b": np.array(2.0)}
        out = adam_step(state, params, {"a": np.array(1.0)}, lr=0.1)
        assert float(out["b"]) == 2.0
        assert float(out["a"]) != 1.0


class TestClipping:
    def test_norm_and_clip(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert global_grad_norm(grads) == pytest.approx(5.0)
        clipped, was = clip_gradients(grads, 2.5)
        assert was
        assert global_grad_norm(clipped) == pytest.approx(2.5)
        same, was = clip_gradients(grads, 10.0)
        assert not was
        assert same is grads


def toy_plan(**kw):
    defaults = dict(method="plainvi", target="toy", num_steps=1, lr=1e-2,
                    steps=300, batch=16, eval_samples=64, seed=0,
                    pretrain_steps=0, record_every=100, toy_dim=2)
    defaults.update(kw)
    return TrainPlan(**defaults)


class TestTrain:
    def test_plain_vi_reaches_log_z(self):
        plan = toy_plan(steps=800)
        target = gaussian_toy_target(2, mean=1.0, cov_diag=1.5)
        record = train(plan, target=target)
        assert record.status == "ok"
        assert record.final_elbo == pytest.approx(target.log_z, abs=1e-3)

    def test_annealed_method_trains_and_records(self):
        plan = toy_plan(method="ula", num_steps=4, steps=60, lr=1e-2,
                        pretrain_steps=40, record_every=20)
        target = gaussian_toy_target(2, mean=0.5, cov_diag=2.0)
        record = train(plan, target=target)
        assert record.status == "ok"
        assert record.curve[0][0] == 0
        assert record.curve[-1][0] == plan.steps - 1
        assert record.skipped_steps == 0
        assert np.isfinite(record.final_elbo)
        assert record.final_stderr > 0
        assert record.metadata["trainable"] == ["beta", "delta", "q"]

    def test_deterministic_records(self):
        plan = toy_plan(method="uha", num_steps=3, steps=40,
                        pretrain_steps=20, eval_samples=32)
        target = gaussian_toy_target(2, mean=0.3, cov_diag=1.2)
        a = train(plan, target=target)
        b = train(plan, target=target)
        assert a.canonical_bytes() == b.canonical_bytes()
        assert a.wall_time != b.wall_time or True  # wall time excluded above
        for key in a.params:
            np.testing.assert_array_equal(a.params[key], b.params[key])

    def test_divergence_floor_aborts(self):
        plan = toy_plan(method="ula", num_steps=2, steps=10,
                        divergence_floor=1e9)  # unreachable bound
        target = gaussian_toy_target(1)
        with pytest.raises(TrainingDiverged, match="step 0"):
            train(plan, target=target)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            toy_plan(steps=0)
        with pytest.raises(ValueError):
            toy_plan(num_steps=0)

    def test_transform_safety_after_training(self):
        """delta, gamma, sigma stay positive and beta stays increasing."""
        plan = toy_plan(method="ldvi", num_steps=3, steps=30, lr=5e-2,
                        pretrain_steps=0, score_hidden=4)
        target = gaussian_toy_target(2, mean=0.4, cov_diag=0.9)
        record = train(plan, target=target)
        p = record.params
        assert np.logaddexp(0.0, p["raw_delta"]) > 0
        assert np.logaddexp(0.0, p["raw_gamma"]) > 0
        assert np.all(np.logaddexp(0.0, p["q.raw_scale"]) > 0)
        incr = np.logaddexp(0.0, p["schedule.weights"])
        betas = np.cumsum(incr) / incr.sum()
        assert np.all(np.diff(np.concatenate([[0.0], betas])) > 0)
        assert betas[-1] == pytest.approx(1.0)


class TestGrid:
    def make_records(self):
        plans = [toy_plan(steps=30, lr=lr, eval_samples=16)
                 for lr in (1e-2, 1e-3)]
        plans.append(toy_plan(steps=30, method="nope"))
        return run_grid(plans)

    def test_failures_recorded_grid_continues(self):
        records = self.make_records()
        assert [r.status for r in records] == ["ok", "ok", "failed"]
        assert "nope" in records[2].error

    def test_select_best(self):
        records = self.make_records()
        best = select_best(records)
        key = ("plainvi", "toy", 1)
        assert set(best) == {key}
        assert best[key].final_elbo == max(r.final_elbo for r in records[:2])


class TestPersistence:
    def test_record_round_trip(self):
        rec = RunRecord(plan=toy_plan().to_dict(), final_elbo=-1.25,
                        final_stderr=0.01, curve=[(0, -5.0), (10, -2.0)],
                        skipped_steps=1, clipped_steps=2, wall_time=3.3,
                        metadata={"target_dim": 2})
        back = RunRecord.from_json(rec.to_json())
        assert back == rec
        assert back.canonical_bytes() == rec.canonical_bytes()

    def test_canonical_bytes_ignore_wall_time(self):
        a = RunRecord(plan={"p": 1}, wall_time=1.0)
        b = RunRecord(plan={"p": 1}, wall_time=9.9)
        assert a.canonical_bytes() == b.canonical_bytes()
        c = RunRecord(plan={"p": 2}, wall_time=1.0)
        assert a.canonical_bytes() != c.canonical_bytes()

    def test_checkpoint_round_trip(self, tmp_path):
        params = init_params(get_method("ldvi"), 3, 4, seed=1)
        path = tmp_path / "ck.bin"
        save_checkpoint(params, path)
        back = load_checkpoint(path)
        assert set(back) == set(params)
        for key in params:
            got = back[key]
            want = np.asarray(params[key], dtype=np.float64)
            assert got.shape == want.shape
            np.testing.assert_array_equal(got, want)

    def test_checkpoint_rejects_truncation(self, tmp_path):
        params = {"x": np.arange(4.0)}
        path = tmp_path / "ck.bin"
        save_checkpoint(params, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)
