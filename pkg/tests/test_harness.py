import numpy as np
import pytest

from atlas_opt import harness, model
from atlas_opt.harness import (
    EvalResult,
    SweepSpec,
    SyntheticTaskConfig,
    evaluate,
    generate_task,
    harmonic_mean,
    run_ablation_grid,
    run_experiment,
    run_sweep,
)
from atlas_opt.model import ClassVocabulary, FrozenEncoder, ImageSample, ModelConfig, ModelParts
from atlas_opt.trainer import TrainConfig, TrainMode


def _small_task_cfg(**overrides):
    base = dict(shots=4, test_shots=4, model=ModelConfig(tau=0.5))
    base.update(overrides)
    return SyntheticTaskConfig(**base)


def _fast_train_cfg(mode="atlas", **overrides):
    base = dict(mode=TrainMode.parse(mode), eta=0.5, epochs=6, batch_size=8)
    base.update(overrides)
    return TrainConfig(**base)


class TestGenerateTask:
    def test_deterministic(self):
        a = generate_task(_small_task_cfg(seed=3))
        b = generate_task(_small_task_cfg(seed=3))
        np.testing.assert_array_equal(a.vocab.tokens, b.vocab.tokens)
        np.testing.assert_array_equal(a.encoder.weight, b.encoder.weight)
        for sa, sb in zip(a.train + a.test, b.train + b.test):
            assert sa.id == sb.id and sa.label == sb.label
            np.testing.assert_array_equal(sa.embedding, sb.embedding)

    def test_split_disjoint(self):
        task = generate_task(_small_task_cfg(seed=1))
        base = set(task.base_classes)
        assert all(s.label in base for s in task.train)
        assert set(task.new_classes).isdisjoint(base)
        assert {s.label for s in task.test} == base | set(task.new_classes)

    def test_zero_noise_perfect_zero_shot_on_good_seed(self):
        cfg = _small_task_cfg(seed=0, noise_std=0.0)
        task = generate_task(cfg)
        v0 = model.init_prompt(cfg.model, 0, cfg.init_scale)
        parts = task.eval_parts()
        assert evaluate(v0, task.test, parts, task.base_classes) == 1.0
        assert evaluate(v0, task.test, parts, task.new_classes) == 1.0

    def test_shapes(self):
        cfg = _small_task_cfg(seed=2, c_base=3, c_new=2, shots=5, test_shots=3)
        task = generate_task(cfg)
        assert len(task.train) == 3 * 5
        assert len(task.test) == (3 + 2) * 3
        assert task.vocab.num_classes == 5


class TestEvaluate:
    def _uniform_parts(self):
        # all classes encode identically -> every prediction ties -> class 0
        cfg = ModelConfig(tau=1.0, prompt_len=1, prompt_dim=1, token_dim=2, embed_dim=2)
        enc = FrozenEncoder(
            weight=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), prompt_input_dim=1
        )
        vocab = ClassVocabulary(tokens=np.array([[1.0, 1.0], [1.0, 1.0]]), names=["a", "b"])
        return ModelParts(enc, vocab, cfg)

    def test_tie_rule_gives_exact_balanced_accuracy(self):
        parts = self._uniform_parts()
        samples = [
            ImageSample(id=f"s{i}", embedding=np.array([1.0, float(i)]), label=i % 2)
            for i in range(10)
        ]
        # ties resolve to class 0, so exactly the label-0 half is right
        assert evaluate(np.zeros((1, 1)), samples, parts, [0, 1]) == 0.5

    def test_perfect_predictor(self):
        task = generate_task(_small_task_cfg(seed=0, noise_std=0.0))
        v0 = model.init_prompt(task.cfg.model, 0, task.cfg.init_scale)
        assert evaluate(v0, task.test, task.eval_parts(), task.base_classes) == 1.0

    def test_empty_intersection_rejected(self):
        task = generate_task(_small_task_cfg(seed=0))
        base_only = [s for s in task.test if s.label in task.base_classes]
        with pytest.raises(ValueError, match="no samples"):
            evaluate(
                np.zeros((4, 8)), base_only, task.eval_parts(), task.new_classes
            )

    def test_permutation_invariance(self):
        task = generate_task(_small_task_cfg(seed=4))
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)
        parts = task.eval_parts()
        fwd = evaluate(v0, task.test, parts, task.base_classes)
        rev = evaluate(v0, task.test[::-1], parts, task.base_classes)
        assert fwd == rev

    def test_subset_validation(self):
        task = generate_task(_small_task_cfg(seed=0))
        with pytest.raises(ValueError, match="empty class subset"):
            evaluate(np.zeros((4, 8)), task.test, task.eval_parts(), [])
        with pytest.raises(ValueError, match="outside"):
            evaluate(np.zeros((4, 8)), task.test, task.eval_parts(), [99])


class TestHarmonicMean:
    def test_published_reference_value(self):
        assert harmonic_mean(0.8269, 0.6323) == pytest.approx(0.7166, abs=1e-4)

    def test_equal_inputs_fixed_point(self):
        for x in (0.0, 0.25, 1.0):
            assert harmonic_mean(x, x) == pytest.approx(x, abs=1e-15)

    def test_zero_annihilates(self):
        assert harmonic_mean(1.0, 0.0) == 0.0
        assert harmonic_mean(0.0, 0.0) == 0.0

    def test_bounded_by_means(self):
        grid = np.linspace(0, 1, 21)
        for a in grid:
            for b in grid:
                h = harmonic_mean(float(a), float(b))
                assert h <= (a + b) / 2 + 1e-12
                assert h <= 2 * min(a, b) + 1e-12

    def test_range_validation(self):
        with pytest.raises(ValueError, match="base_acc"):
            harmonic_mean(1.2, 0.5)


class TestRunSweep:
    def test_single_point_grid(self):
        spec = SweepSpec(param="theta", grid=(0.1,), seeds=(0, 1))
        rows = run_sweep(spec, _fast_train_cfg(), _small_task_cfg())
        assert len(rows) == 2
        assert {r["seed"] for r in rows} == {0, 1}

    def test_period_one_matches_soft_only(self):
        spec = SweepSpec(param="K", grid=(1, 2), seeds=(0,))
        rows = run_sweep(spec, _fast_train_cfg("atlas"), _small_task_cfg())
        task = generate_task(_small_task_cfg(seed=0))
        _, soft_only = run_experiment(task, _fast_train_cfg("ls", period=1, seed=0))
        k1 = [r for r in rows if r["value"] == 1.0][0]
        assert k1["base_acc"] == soft_only.base_acc
        assert k1["new_acc"] == soft_only.new_acc
        assert k1["hmean"] == soft_only.harmonic

    def test_theta_zero_matches_onehot_baseline(self):
        spec = SweepSpec(param="theta", grid=(0.0,), seeds=(0, 1))
        rows = run_sweep(spec, _fast_train_cfg("atlas"), _small_task_cfg())
        for seed in (0, 1):
            task = generate_task(_small_task_cfg(seed=seed))
            _, baseline = run_experiment(task, _fast_train_cfg("onehot", seed=seed))
            row = [r for r in rows if r["seed"] == seed][0]
            assert row["base_acc"] == baseline.base_acc
            assert row["new_acc"] == baseline.new_acc

    def test_bit_reproducible(self):
        spec = SweepSpec(param="alpha", grid=(0.1, 0.5), seeds=(0,))
        cfg = _fast_train_cfg("atlas-isl")
        a = run_sweep(spec, cfg, _small_task_cfg())
        b = run_sweep(spec, cfg, _small_task_cfg())
        assert a == b

    def test_emits_files(self, tmp_path):
        spec = SweepSpec(param="K", grid=(1, 2), seeds=(0,))
        run_sweep(spec, _fast_train_cfg(), _small_task_cfg(), out_dir=str(tmp_path))
        assert (tmp_path / "sweep.csv").exists()
        assert (tmp_path / "sweep.svg").exists()

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="unknown sweep parameter"):
            SweepSpec(param="gamma", grid=(1,), seeds=(0,))
        with pytest.raises(ValueError, match="empty sweep grid"):
            SweepSpec(param="K", grid=(), seeds=(0,))

    def test_error_annotated_with_grid_point(self):
        spec = SweepSpec(param="tau_c", grid=(-1.0,), seeds=(0,))
        with pytest.raises(RuntimeError, match="tau_c=-1.0, seed=0"):
            run_sweep(spec, _fast_train_cfg("atlas-csl"), _small_task_cfg())


class TestAblationGrid:
    def test_shape_and_baseline_match(self):
        seeds = (0, 1)
        rows = run_ablation_grid(_small_task_cfg(), _fast_train_cfg(), seeds)
        assert len(rows) == len(harness.ABLATION_MODES) * (len(seeds) + 1)
        # the one-hot row must match a directly invoked run bit-exactly
        task = generate_task(_small_task_cfg(seed=0))
        _, direct = run_experiment(task, _fast_train_cfg("onehot", seed=0))
        row = [r for r in rows if r["mode"] == "onehot" and r["seed"] == 0][0]
        assert row["base_acc"] == direct.base_acc
        assert row["new_acc"] == direct.new_acc
        assert row["hmean"] == direct.harmonic

    def test_median_rows_present(self):
        rows = run_ablation_grid(_small_task_cfg(), _fast_train_cfg(), (0,))
        medians = [r for r in rows if r["seed"] == "median"]
        assert {r["mode"] for r in medians} == set(harness.ABLATION_MODES)
        check = harness.directional_check(rows)
        assert set(check) == {
            "atlas_isl_new", "onehot_new", "direction_new_acc_pass",
            "atlas_h", "ls_h", "direction_hmean_pass",
        }


class TestEvalResult:
    def test_harmonic_consistency(self):
        r = EvalResult.from_accuracies(0.8, 0.4)
        assert r.harmonic == pytest.approx(harmonic_mean(0.8, 0.4), abs=1e-15)
