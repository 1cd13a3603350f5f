import numpy as np
import pytest

from condensate.model import ModelSpec, SynthRecipe, synth_model


def small_spec(**over) -> ModelSpec:
    base = dict(
        n_layers=2,
        n_heads=2,
        n_kv_heads=2,
        head_dim=8,
        vocab_size=96,
        max_seq=512,
        model_dim=32,
        mlp_hidden=64,
    )
    base.update(over)
    return ModelSpec(**base)


def equivalence_spec(**over) -> ModelSpec:
    base = dict(
        n_layers=4,
        n_heads=4,
        n_kv_heads=4,
        head_dim=16,
        vocab_size=512,
        max_seq=4096,
        model_dim=64,
        mlp_hidden=128,
    )
    base.update(over)
    return ModelSpec(**base)


@pytest.fixture(scope="session")
def random_small_model():
    return synth_model(small_spec(), SynthRecipe(kind="random", seed=101))


@pytest.fixture(scope="session")
def concentrated_model():
    return synth_model(equivalence_spec(), SynthRecipe(kind="concentrated", seed=11))


def f64_attend(q, keys, values, inv_scale):
    """Independent float64 brute-force attention oracle."""
    q = np.asarray(q, dtype=np.float64)
    K = np.asarray(keys, dtype=np.float64)
    V = np.asarray(values, dtype=np.float64)
    s = K @ q * float(inv_scale)
    e = np.exp(s - s.max())
    w = e / e.sum()
    return w @ V, s, w
