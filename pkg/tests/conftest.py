import numpy as np
import pytest

from atlas_opt import kernels, model


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jit kernels once so individual tests time only the math."""
    emb = np.eye(3)[:2]
    images = np.array([[1.0, 0.5, 0.25]])
    targets = np.array([[1.0, 0.0]])
    w = np.ones((3, 4))
    kernels.batch_probs(emb, images, 1.0)
    kernels.batch_losses(emb, images, 1.0, targets)
    kernels.batch_grads(emb, images, 1.0, targets, w)
    kernels.kahan_sum(np.ones(3))
    kernels.kahan_sum_rows(np.ones((2, 3)))


@pytest.fixture()
def small_parts():
    """A tiny fixed model: 3 classes, small dims, seeded encoder."""
    cfg = model.ModelConfig(tau=0.7, prompt_len=2, prompt_dim=3, token_dim=4, embed_dim=5)
    enc = model.FrozenEncoder.create(cfg, seed=11)
    rng = np.random.default_rng(5)
    vocab = model.ClassVocabulary(
        tokens=rng.standard_normal((3, cfg.token_dim)), names=["a", "b", "c"]
    )
    return model.ModelParts(enc, vocab, cfg)


def make_samples(parts, n, seed=0):
    rng = np.random.default_rng(seed)
    return [
        model.ImageSample(
            id=f"s{i}",
            embedding=rng.standard_normal(parts.cfg.embed_dim),
            label=int(rng.integers(parts.num_classes)),
        )
        for i in range(n)
    ]
