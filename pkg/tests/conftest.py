"""Shared fixtures and independent oracles used across the test suite."""

import numpy as np
import pytest

from tsedit.model import Model, ModelConfig
from tsedit.synthgen import SynthConfig, generate_dataset
from tsedit.textembed import BuiltinHashEmbedder


# -- finite-difference gradient oracle ----------------------------------------


def fd_max_relative_error(block, x, rng, step=1e-4, max_probes=60):
    """Compare analytic block gradients against central finite differences.

    Projects the output onto a random direction G so the scalar loss is
    sum(y * G); probes a spread of input and parameter entries and returns
    the worst relative error (floored at 1: |a - n| / max(1, |a|, |n|)).
    """
    ctx = {}
    y = block.forward(x, ctx)
    G = rng.normal(size=y.shape)
    for p in block.params():
        p.zero_grad()
    gx = block.backward(G, ctx)

    def loss_at(arr):
        return float((block.forward(arr.reshape(x.shape)) * G).sum())

    worst = 0.0
    flat = x.ravel().copy()
    stride = max(1, flat.size // max_probes)
    for i in range(0, flat.size, stride):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += step
        minus[i] -= step
        numeric = (loss_at(plus) - loss_at(minus)) / (2 * step)
        analytic = gx.ravel()[i]
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric)))

    for p in block.params():
        values = p.values.ravel()
        stride = max(1, values.size // max_probes)
        for i in range(0, values.size, stride):
            orig = values[i]
            values[i] = orig + step
            up = float((block.forward(x) * G).sum())
            values[i] = orig - step
            down = float((block.forward(x) * G).sum())
            values[i] = orig
            numeric = (up - down) / (2 * step)
            analytic = p.grad.ravel()[i]
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric)))
    return worst


# -- brute-force DTW oracle -----------------------------------------------------


def dtw_bruteforce(x, y):
    """Exhaustive enumeration of all monotone warping paths (lengths <= ~6)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = len(x), len(y)
    best = [np.inf]

    def walk(i, j, acc):
        acc = acc + (x[i] - y[j]) ** 2
        if acc >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


# -- tiny model fixtures ----------------------------------------------------------


TINY_MODEL_CONFIG = ModelConfig(
    T=40, k=2, d=8, kernel_fractions=(1.0, 0.25), decoder_blocks=2, attention_heads=2,
    conv_channels=(4, 8), mlp_hidden=32, seed=5,
)


@pytest.fixture(scope="session")
def provider():
    return BuiltinHashEmbedder(768)


@pytest.fixture(scope="session")
def tiny_model(provider):
    return Model(TINY_MODEL_CONFIG, provider)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(SynthConfig(T=40, samples_per_combination=4, seed=1,
                                        families=("trend", "shift")))
