import numpy as np
import pytest

from atlas_opt import diagnostics, model
from atlas_opt.diagnostics import (
    BoundInputs,
    atlas_bound,
    estimate_beta,
    estimate_variances,
    full_gradient,
    alternating_deviation_check,
    smoothed_deviation_check,
    ls_bound,
    probe_smoothness,
    trajectory_bound_check,
    trajectory_bound_inputs,
)
from atlas_opt.harness import SyntheticTaskConfig, generate_task
from atlas_opt.trainer import LabelTables, TrainConfig, TrainMode, run_training

from conftest import make_samples


def _inputs(**overrides):
    base = dict(f0=1.0, eta=0.5, steps=100, theta=0.1, period=2, kappa=2.0, sigma2=1.0, beta_hat=2.0)
    base.update(overrides)
    return BoundInputs(**base)


class TestFullGradient:
    def test_single_sample_equals_grad(self, small_parts):
        s = make_samples(small_parts, 1, seed=2)
        v = np.zeros((small_parts.cfg.prompt_len, small_parts.cfg.prompt_dim))
        target = np.zeros(small_parts.num_classes)
        target[s[0].label] = 1.0
        want = model.grad_prompt(
            v, s[0], target, small_parts.encoder, small_parts.vocab, small_parts.cfg
        )
        np.testing.assert_allclose(full_gradient(v, s, small_parts), want, atol=1e-15)

    def test_duplication_invariance(self, small_parts):
        samples = make_samples(small_parts, 7, seed=3)
        v = model.init_prompt(small_parts.cfg, 1, 0.2)
        g1 = full_gradient(v, samples, small_parts)
        g2 = full_gradient(v, samples + samples, small_parts)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-16)

    def test_matches_finite_differences_of_mean_loss(self, small_parts):
        samples = make_samples(small_parts, 5, seed=4)
        _, images, labels = model.stack_samples(samples)
        onehot = model.onehot_rows(labels, small_parts.num_classes)
        v = model.init_prompt(small_parts.cfg, 2, 0.3)

        def mean_loss(vv):
            return float(np.mean(model.batch_losses(vv, images, onehot, small_parts)))

        h = 1e-5
        fd = np.zeros_like(v)
        for i in range(v.shape[0]):
            for j in range(v.shape[1]):
                vp, vm = v.copy(), v.copy()
                vp[i, j] += h
                vm[i, j] -= h
                fd[i, j] = (mean_loss(vp) - mean_loss(vm)) / (2 * h)
        g = full_gradient(v, samples, small_parts)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-6


class TestEstimateVariances:
    def test_identical_samples_error(self, small_parts):
        s = make_samples(small_parts, 1, seed=5)[0]
        clones = [
            model.ImageSample(id=f"c{i}", embedding=s.embedding.copy(), label=s.label)
            for i in range(4)
        ]
        v = model.init_prompt(small_parts.cfg, 0, 0.1)
        with pytest.raises(ValueError, match="zero one-hot variance"):
            estimate_variances(v, clones, small_parts)

    def test_two_sample_instance_against_fd_oracle(self, small_parts):
        """Brute-force oracle: per-sample gradients via central differences."""
        samples = make_samples(small_parts, 2, seed=6)
        samples[1].label = (samples[0].label + 1) % small_parts.num_classes
        v = model.init_prompt(small_parts.cfg, 3, 0.2)
        num_classes = small_parts.num_classes
        h = 1e-6

        def fd_grad(sample, target):
            out = np.zeros_like(v)
            for i in range(v.shape[0]):
                for j in range(v.shape[1]):
                    vp, vm = v.copy(), v.copy()
                    vp[i, j] += h
                    vm[i, j] -= h
                    lp = model.loss(vp, sample, target, small_parts.encoder,
                                    small_parts.vocab, small_parts.cfg)
                    lm = model.loss(vm, sample, target, small_parts.encoder,
                                    small_parts.vocab, small_parts.cfg)
                    out[i, j] = (lp - lm) / (2 * h)
            return out.ravel()

        onehots = [np.eye(num_classes)[s.label] for s in samples]
        uniform = np.full(num_classes, 1.0 / num_classes)
        g = [fd_grad(s, t) for s, t in zip(samples, onehots)]
        ghat = [fd_grad(s, uniform) for s in samples]
        grad_f = (g[0] + g[1]) / 2
        sigma2 = float(np.mean([np.sum((gi - grad_f) ** 2) for gi in g]))
        sigma_hat2 = float(np.mean([np.sum((gi - grad_f) ** 2) for gi in ghat]))

        est = estimate_variances(v, samples, small_parts)
        assert est.sigma2 == pytest.approx(sigma2, rel=1e-5)
        assert est.sigma_hat2 == pytest.approx(sigma_hat2, rel=1e-5)
        assert est.kappa == pytest.approx(sigma_hat2 / sigma2, rel=1e-5)

    def test_kappa_nonnegative_finite(self, small_parts):
        rng = np.random.default_rng(8)
        for trial in range(10):
            samples = make_samples(small_parts, int(rng.integers(2, 12)), seed=100 + trial)
            v = model.init_prompt(small_parts.cfg, trial, 0.3)
            est = estimate_variances(v, samples, small_parts)
            assert est.kappa >= 0.0 and np.isfinite(est.kappa)

    def test_duplication_invariance(self, small_parts):
        samples = make_samples(small_parts, 6, seed=9)
        v = model.init_prompt(small_parts.cfg, 1, 0.2)
        a = estimate_variances(v, samples, small_parts)
        b = estimate_variances(v, samples + samples, small_parts)
        assert a.sigma2 == pytest.approx(b.sigma2, rel=1e-12)
        assert a.sigma_hat2 == pytest.approx(b.sigma_hat2, rel=1e-12)

    def test_needs_two_samples(self, small_parts):
        with pytest.raises(ValueError, match="at least 2"):
            estimate_variances(
                np.zeros((2, 3)), make_samples(small_parts, 1), small_parts
            )


class TestDeviationBounds:
    def test_theta_zero_equality(self, small_parts):
        samples = make_samples(small_parts, 8, seed=10)
        v = model.init_prompt(small_parts.cfg, 0, 0.2)
        lhs, rhs, ok = smoothed_deviation_check(v, samples, small_parts, theta=0.0)
        assert ok and lhs == pytest.approx(rhs, rel=1e-12)
        lhs, rhs, ok = alternating_deviation_check(v, samples, small_parts, theta=0.0, period=3)
        assert ok and lhs == pytest.approx(rhs, rel=1e-12)

    def test_theta_one_hits_sigma_hat(self, small_parts):
        samples = make_samples(small_parts, 8, seed=11)
        v = model.init_prompt(small_parts.cfg, 0, 0.2)
        est = estimate_variances(v, samples, small_parts)
        lhs, rhs, ok = smoothed_deviation_check(v, samples, small_parts, theta=1.0)
        assert ok
        assert lhs == pytest.approx(est.sigma_hat2, rel=1e-9)
        assert rhs == pytest.approx(est.sigma_hat2, rel=1e-9)

    def test_huge_period_limit(self, small_parts):
        samples = make_samples(small_parts, 8, seed=12)
        v = model.init_prompt(small_parts.cfg, 0, 0.2)
        est = estimate_variances(v, samples, small_parts)
        lhs, rhs, ok = alternating_deviation_check(v, samples, small_parts, theta=0.5, period=10**6)
        assert ok
        assert lhs == pytest.approx(est.sigma2, rel=1e-5)
        assert rhs == pytest.approx(est.sigma2, rel=1e-5)

    def test_randomized_instances_always_pass(self, small_parts):
        rng = np.random.default_rng(13)
        for trial in range(15):
            samples = make_samples(small_parts, int(rng.integers(4, 16)), seed=200 + trial)
            v = model.init_prompt(small_parts.cfg, trial, float(rng.uniform(0.05, 0.5)))
            theta = float(rng.choice([0.0, 0.1, 0.5, 1.0]))
            period = int(rng.choice([1, 2, 3]))
            lhs, rhs, ok = alternating_deviation_check(v, samples, small_parts, theta, period)
            assert ok, f"trial {trial}: {lhs} > {rhs}"
            lhs, rhs, ok = smoothed_deviation_check(v, samples, small_parts, theta)
            assert ok, f"trial {trial}: {lhs} > {rhs}"


class TestBounds:
    def test_kappa_above_one_orders_atlas_below_ls(self):
        inputs = _inputs(f0=0.0, eta=1.0, steps=1, kappa=2.0, sigma2=1.0, beta_hat=1.0)
        assert atlas_bound(inputs) == pytest.approx(1.05, abs=1e-12)
        assert ls_bound(inputs) == pytest.approx(1.1, abs=1e-12)

    def test_kappa_below_one_orders_ls_below_atlas(self):
        inputs = _inputs(f0=0.0, eta=1.0, steps=1, kappa=0.5, sigma2=1.0, beta_hat=1.0)
        assert atlas_bound(inputs) == pytest.approx(0.975, abs=1e-12)
        assert ls_bound(inputs) == pytest.approx(0.95, abs=1e-12)

    def test_theta_zero_bounds_equal(self):
        inputs = _inputs(theta=0.0, f0=2.0, eta=0.25, steps=40, kappa=3.0, sigma2=0.7)
        expect = 2 * 2.0 / (0.25 * 40) + 0.7
        assert atlas_bound(inputs) == pytest.approx(expect, abs=1e-12)
        assert ls_bound(inputs) == pytest.approx(expect, abs=1e-12)

    def test_difference_identity_over_grid(self):
        # ls - atlas = theta * sigma2 * (kappa - 1) * (1 - 1/K)
        for theta in (0.05, 0.1, 0.3, 0.6):
            for period in (2, 3, 4, 5):
                for kappa in (0.25, 0.5, 1.0, 2.0, 4.0):
                    inputs = _inputs(theta=theta, period=period, kappa=kappa, sigma2=1.3)
                    diff = ls_bound(inputs) - atlas_bound(inputs)
                    want = theta * 1.3 * (kappa - 1.0) * (1.0 - 1.0 / period)
                    assert diff == pytest.approx(want, abs=1e-12)

    def test_monotonicity(self):
        kappas = np.linspace(0.1, 5, 20)
        vals = [atlas_bound(_inputs(kappa=float(k))) for k in kappas]
        assert np.all(np.diff(vals) > 0)
        thetas = np.linspace(0.0, 1.0, 20)
        vals = [atlas_bound(_inputs(theta=float(t), kappa=2.0)) for t in thetas]
        assert np.all(np.diff(vals) > 0)


class TestEstimateBeta:
    def test_quadratic_objective(self):
        # grad F(v) = v has Lipschitz constant exactly 1; doubled by safety
        beta = probe_smoothness(lambda v: v, np.zeros((3, 4)), num_probes=12, radius=0.1, seed=0)
        assert 1.0 <= beta <= 2.0 + 1e-12

    def test_positive_even_for_flat_objective(self):
        beta = probe_smoothness(
            lambda v: np.zeros_like(v), np.zeros((2, 2)), num_probes=10, radius=0.1, seed=0
        )
        assert beta > 0.0

    def test_radius_stability_on_model(self, small_parts):
        samples = make_samples(small_parts, 6, seed=14)
        v = model.init_prompt(small_parts.cfg, 0, 0.2)
        b1 = estimate_beta(v, samples, small_parts, num_probes=12, radius=1e-3, seed=1)
        b2 = estimate_beta(v, samples, small_parts, num_probes=12, radius=2e-3, seed=1)
        assert np.isfinite(b1) and np.isfinite(b2)
        assert 0.2 <= b1 / b2 <= 5.0

    def test_probe_count_precondition(self):
        with pytest.raises(ValueError, match="num_probes"):
            probe_smoothness(lambda v: v, np.zeros(3), num_probes=5)


class TestTrajectoryBound:
    def _run(self, seed=0, steps=60, theta=0.1, period=2):
        task = generate_task(
            SyntheticTaskConfig(seed=seed, shots=4, test_shots=2, model=model.ModelConfig(tau=0.5))
        )
        parts = task.train_parts()
        v0 = model.init_prompt(task.cfg.model, seed, 0.1)
        beta = estimate_beta(v0, task.train, parts, num_probes=12, radius=1e-3, seed=seed)
        per_epoch = -(-len(task.train) // 8)
        cfg = TrainConfig(
            mode=TrainMode.parse("atlas"), eta=1.0 / beta, epochs=-(-steps // per_epoch),
            batch_size=8, period=period, theta=theta, seed=seed, record_full_grad=True,
        )
        report = run_training(task.train, parts, LabelTables(), cfg, v0)
        return report, beta

    def test_passes_on_synthetic_task(self):
        report, beta = self._run()
        inputs = trajectory_bound_inputs(report, 0.1, 2, beta, steps=60)
        out = trajectory_bound_check(report, inputs)
        assert out.trajectory_pass
        assert out.measured_avg_sq_grad <= out.atlas_bound * 1.05

    def test_tiny_eta_bound_blows_up(self, small_parts):
        samples = make_samples(small_parts, 6, seed=15)
        v0 = model.init_prompt(small_parts.cfg, 0, 0.1)
        beta = 1e6  # deliberately huge smoothness -> tiny eta, huge f0 term
        cfg = TrainConfig(
            mode=TrainMode.parse("atlas"), eta=1.0 / beta, epochs=2, batch_size=3,
            period=2, theta=0.1, seed=0, record_full_grad=True,
        )
        report = run_training(samples, small_parts, LabelTables(), cfg, v0)
        inputs = trajectory_bound_inputs(report, 0.1, 2, beta)
        out = trajectory_bound_check(report, inputs)
        assert out.trajectory_pass
        assert out.atlas_bound > 100 * out.measured_avg_sq_grad

    def test_mismatched_eta_rejected(self):
        report, beta = self._run()
        inputs = BoundInputs(
            f0=report.loss_at_init, eta=report.eta * 2, steps=10, theta=0.1,
            period=2, kappa=1.0, sigma2=1.0, beta_hat=0.5 / report.eta,
        )
        with pytest.raises(ValueError, match="mismatched eta"):
            trajectory_bound_check(report, inputs)

    def test_requires_recorded_trace(self, small_parts):
        samples = make_samples(small_parts, 4, seed=16)
        cfg = TrainConfig(mode=TrainMode.parse("atlas"), eta=0.5, epochs=1, seed=0)
        report = run_training(
            samples, small_parts, LabelTables(), cfg, np.zeros((2, 3))
        )
        with pytest.raises(ValueError, match="full-gradient trace"):
            trajectory_bound_check(report, _inputs(eta=0.5, beta_hat=2.0))
