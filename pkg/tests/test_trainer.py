import numpy as np
import pytest

from atlas_opt import model, trainer
from atlas_opt.harness import SyntheticTaskConfig, build_tables, generate_task
from atlas_opt.labels import build_csl, build_isl, OneHotLabel
from atlas_opt.trainer import (
    LabelTables,
    TrainConfig,
    TrainMode,
    batch_iterator,
    run_training,
    soft_label_matrix,
    supervision_for,
)

from conftest import make_samples


def _tiny_task(seed=0, **overrides):
    cfg = SyntheticTaskConfig(
        seed=seed,
        shots=4,
        test_shots=2,
        model=model.ModelConfig(tau=0.5),
        **overrides,
    )
    return generate_task(cfg)


def _tables_for(task, mode_name, cfg):
    v0 = model.init_prompt(task.cfg.model, cfg.seed, task.cfg.init_scale)
    return build_tables(task, cfg, v0), v0


class TestTrainMode:
    def test_parse_grid(self):
        for name in trainer.MODE_NAMES:
            mode = TrainMode.parse(name)
            assert mode.canonical_name() == name

    def test_parse_mix_modes(self):
        assert TrainMode.parse("atlas-mix").variant == "alternating"
        assert TrainMode.parse("mix+y").variant == "joint"
        assert TrainMode.parse("mix").source == "mix"

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown mode"):
            TrainMode.parse("distill")

    def test_onehot_takes_no_source(self):
        with pytest.raises(ValueError, match="no soft-label source"):
            TrainMode("onehot", "uniform")

    def test_mix_requires_both_tables(self):
        tables = LabelTables(csl=None, isl=None)
        with pytest.raises(ValueError, match="class-wise table"):
            tables.require("mix")


class TestBatchIterator:
    def test_batch_sizes(self):
        batches = batch_iterator(5, 2, epoch=0, seed=0)
        assert [len(b) for b in batches] == [2, 2, 1]
        assert sorted(np.concatenate(batches).tolist()) == list(range(5))

    def test_deterministic(self):
        a = batch_iterator(32, 5, epoch=3, seed=9)
        b = batch_iterator(32, 5, epoch=3, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epochs_differ(self):
        a = np.concatenate(batch_iterator(32, 5, epoch=0, seed=9))
        b = np.concatenate(batch_iterator(32, 5, epoch=1, seed=9))
        assert not np.array_equal(a, b)


class TestSupervision:
    def test_xi_one_is_onehot_for_every_source(self):
        task = _tiny_task()
        sample = task.train[0]
        for name in ("ls", "csl", "isl", "mix"):
            cfg = TrainConfig(mode=TrainMode.parse(f"atlas-{name}" if name != "ls" else "atlas"), epochs=1)
            tables, _ = _tables_for(task, name, cfg)
            out = supervision_for(sample, 1, cfg.mode, tables, cfg, task.cfg.c_base)
            np.testing.assert_array_equal(
                out, OneHotLabel(sample.label, task.cfg.c_base).to_vector()
            )

    def test_csl_lookup_is_class_row(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("atlas-csl"), epochs=1)
        tables, _ = _tables_for(task, "csl", cfg)
        sample = task.train[5]
        out = supervision_for(sample, 0, cfg.mode, tables, cfg, task.cfg.c_base)
        np.testing.assert_array_equal(out, tables.csl.matrix[sample.label])

    def test_mix_composition(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("atlas-mix", mix_w=0.3), epochs=1)
        tables, _ = _tables_for(task, "mix", cfg)
        sample = task.train[2]
        out = supervision_for(sample, 0, cfg.mode, tables, cfg, task.cfg.c_base)
        want = 0.3 * tables.csl.matrix[sample.label] + 0.7 * tables.isl.label_for(sample.id)
        np.testing.assert_allclose(out, want, atol=1e-15)

    def test_missing_isl_entry(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("atlas-isl"), epochs=1)
        tables, _ = _tables_for(task, "isl", cfg)
        ghost = model.ImageSample(id="ghost", embedding=np.ones(task.cfg.model.embed_dim), label=0)
        with pytest.raises(KeyError, match="ghost"):
            supervision_for(ghost, 0, cfg.mode, tables, cfg, task.cfg.c_base)

    def test_matrix_matches_per_sample_path(self):
        task = _tiny_task()
        ids, images, labels = model.stack_samples(task.train)
        for name in ("ls", "csl", "isl", "mix"):
            mode = TrainMode.parse("atlas" if name == "ls" else f"atlas-{name}", mix_w=0.4)
            cfg = TrainConfig(mode=mode, epochs=1, theta=0.3)
            tables, _ = _tables_for(task, name, cfg)
            rows = soft_label_matrix(ids, labels, task.cfg.c_base, mode, tables, cfg)
            for i, sample in enumerate(task.train):
                want = supervision_for(sample, 0, mode, tables, cfg, task.cfg.c_base)
                np.testing.assert_array_equal(rows[i], want)


class TestRunTraining:
    def test_zero_step_keeps_initial_prompt(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("onehot"), eta=0.0, epochs=3)
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)
        report = run_training(task.train, task.train_parts(), LabelTables(), cfg, v0)
        np.testing.assert_array_equal(report.final_prompt, v0)
        assert report.mean_loss.std() == 0.0
        assert np.array_equal(report.xi, np.ones(3))

    def test_alternating_xi_trace(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("atlas"), epochs=4, period=2, eta=0.1)
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)
        report = run_training(task.train, task.train_parts(), LabelTables(), cfg, v0)
        assert report.xi.tolist() == [1, 0, 1, 0]

    def test_single_sample_descent(self):
        # full-batch descent on a separable two-class instance
        cfg = model.ModelConfig(tau=0.5, prompt_len=2, prompt_dim=3, token_dim=4, embed_dim=4)
        enc = model.FrozenEncoder.create(cfg, 3)
        rng = np.random.default_rng(3)
        vocab = model.ClassVocabulary(tokens=rng.standard_normal((2, 4)), names=["a", "b"])
        parts = model.ModelParts(enc, vocab, cfg)
        sample = model.ImageSample(id="s", embedding=rng.standard_normal(4), label=0)
        tcfg = TrainConfig(mode=TrainMode.parse("onehot"), eta=1e-2, epochs=50, batch_size=1, seed=0)
        report = run_training([sample], parts, LabelTables(), tcfg, np.zeros((2, 3)))
        assert np.all(np.diff(report.mean_loss) <= 1e-12)

    def test_one_step_descent_on_random_instances(self):
        # line-search property: a small enough one-hot step never increases
        # the single-sample loss
        rng = np.random.default_rng(17)
        for trial in range(20):
            cfg = model.ModelConfig(
                tau=float(rng.uniform(0.3, 2.0)),
                prompt_len=int(rng.integers(1, 4)),
                prompt_dim=int(rng.integers(2, 6)),
                token_dim=int(rng.integers(2, 6)),
                embed_dim=int(rng.integers(3, 8)),
            )
            enc = model.FrozenEncoder.create(cfg, trial)
            num_classes = int(rng.integers(2, 6))
            vocab = model.ClassVocabulary(
                tokens=rng.standard_normal((num_classes, cfg.token_dim)),
                names=[f"c{i}" for i in range(num_classes)],
            )
            parts = model.ModelParts(enc, vocab, cfg)
            x = model.ImageSample(
                id="s", embedding=rng.standard_normal(cfg.embed_dim),
                label=int(rng.integers(num_classes)),
            )
            v = rng.standard_normal((cfg.prompt_len, cfg.prompt_dim)) * 0.5
            target = np.eye(num_classes)[x.label]
            before = model.loss(v, x, target, enc, vocab, cfg)
            g = model.grad_prompt(v, x, target, enc, vocab, cfg)
            eta = 1e-4
            while eta >= 1e-7:
                after = model.loss(v - eta * g, x, target, enc, vocab, cfg)
                if after <= before + 1e-15:
                    break
                eta /= 10
            assert after <= before + 1e-15, f"trial {trial}: no descent step found"

    def test_joint_gradient_is_sum_of_parts(self):
        task = _tiny_task()
        parts = task.train_parts()
        ids, images, labels = model.stack_samples(task.train)
        onehot = model.onehot_rows(labels, parts.num_classes)
        theta = 0.2
        soft = (1 - theta) * onehot + theta * (1.0 / parts.num_classes)
        v = model.init_prompt(task.cfg.model, 0, 0.1)
        g_joint = model.batch_grad_rows(v, images, onehot + soft, parts)
        g_sum = model.batch_grad_rows(v, images, onehot, parts) + model.batch_grad_rows(
            v, images, soft, parts
        )
        np.testing.assert_allclose(g_joint, g_sum, atol=1e-12)

    def test_joint_loss_is_sum_of_losses(self):
        task = _tiny_task()
        cfg_joint = TrainConfig(mode=TrainMode.parse("ls+y"), eta=0.0, epochs=1, theta=0.1)
        cfg_soft = TrainConfig(mode=TrainMode.parse("ls"), eta=0.0, epochs=1, theta=0.1)
        cfg_hard = TrainConfig(mode=TrainMode.parse("onehot"), eta=0.0, epochs=1)
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)
        parts = task.train_parts()
        r_joint = run_training(task.train, parts, LabelTables(), cfg_joint, v0)
        r_soft = run_training(task.train, parts, LabelTables(), cfg_soft, v0)
        r_hard = run_training(task.train, parts, LabelTables(), cfg_hard, v0)
        assert r_joint.mean_loss[0] == pytest.approx(
            r_soft.mean_loss[0] + r_hard.mean_loss[0], rel=1e-12
        )

    def test_determinism_bit_identical(self):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("atlas-isl"), epochs=6, seed=5)
        tables, v0 = _tables_for(task, "isl", cfg)
        a = run_training(task.train, task.train_parts(), tables, cfg, v0)
        b = run_training(task.train, task.train_parts(), tables, cfg, v0)
        assert a.identical_records(b)

    def test_mode_equivalences(self):
        task = _tiny_task()
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)
        parts = task.train_parts()

        # alternating with theta=0 trains exactly like one-hot
        atlas0 = run_training(
            task.train, parts, LabelTables(),
            TrainConfig(mode=TrainMode.parse("atlas"), theta=0.0, epochs=6, period=2), v0,
        )
        onehot = run_training(
            task.train, parts, LabelTables(),
            TrainConfig(mode=TrainMode.parse("onehot"), epochs=6), v0,
        )
        assert atlas0.same_dynamics(onehot)
        assert not np.array_equal(atlas0.xi, onehot.xi)  # schedule reported as-is

        # period 1 is pure soft-label training
        k1 = run_training(
            task.train, parts, LabelTables(),
            TrainConfig(mode=TrainMode.parse("atlas"), theta=0.1, epochs=6, period=1), v0,
        )
        soft = run_training(
            task.train, parts, LabelTables(),
            TrainConfig(mode=TrainMode.parse("ls"), theta=0.1, epochs=6), v0,
        )
        assert k1.identical_records(soft)

        # period beyond the horizon never reaches a soft epoch
        kbig = run_training(
            task.train, parts, LabelTables(),
            TrainConfig(mode=TrainMode.parse("atlas"), theta=0.1, epochs=6, period=7), v0,
        )
        assert kbig.identical_records(onehot)

    def test_nonfinite_abort_has_context(self, monkeypatch):
        task = _tiny_task()
        cfg = TrainConfig(mode=TrainMode.parse("onehot"), epochs=1)
        v0 = model.init_prompt(task.cfg.model, 0, 0.1)

        def bad_rows(v, images, targets, parts):
            out = np.zeros((images.shape[0], v.size))
            out[0, 0] = np.nan
            return out

        monkeypatch.setattr(model, "batch_grad_rows", bad_rows)
        monkeypatch.setattr(trainer.model, "batch_grad_rows", bad_rows)
        with pytest.raises(RuntimeError, match="epoch 0, iteration 0"):
            run_training(task.train, task.train_parts(), LabelTables(), cfg, v0)

    def test_empty_dataset_rejected(self, small_parts):
        cfg = TrainConfig(mode=TrainMode.parse("onehot"), epochs=1)
        with pytest.raises(ValueError, match="empty training set"):
            run_training([], small_parts, LabelTables(), cfg, np.zeros((2, 3)))

    def test_validation_messages(self):
        cfg = TrainConfig(mode=TrainMode.parse("onehot"), period=0)
        with pytest.raises(ValueError, match="K must be >= 1"):
            cfg.validate()
