import numpy as np
import pytest

from memefx import autograd as ag
from memefx.data import MultimodalInput
from memefx.extractors import ModelConfig


def numerical_grad(loss_fn, param, h=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with ag.no_grad():
            up = float(loss_fn().data)
        flat[i] = orig - h
        with ag.no_grad():
            down = float(loss_fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest ``|a - n| / max(|a|, |n|, floor)``; the floor keeps rounding noise on ~0 gradients out."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_errors(loss_fn, params):
    """Map parameter name -> max relative error of autodiff vs finite differences."""
    for p in params.values():
        p.grad = None
    ag.backward(loss_fn())
    analytic = {k: p.grad.copy() for k, p in params.items()}
    return {k: max_rel_error(analytic[k], numerical_grad(loss_fn, p)) for k, p in params.items()}


def micro_config(**kw):
    base = dict(lstm_size=4, latent_dim=4, fusion_dim=4, head_hidden=4, embed_dim=3,
                conv_filters=2, conv_kernel=3, conv_stride=2)
    base.update(kw)
    return ModelConfig(**base)


def micro_batch(seed, n=3, seq_len=3, vocab=6, embed_dim=3, image=4):
    rng = np.random.default_rng(seed)
    ids = rng.integers(2, vocab, size=(n, seq_len))
    ids[0, -1] = 0  # one padded tail
    images = rng.uniform(0, 1, size=(n, image, image, 3))
    tables = []
    for _ in range(2):
        t = rng.normal(0, 1, size=(vocab, embed_dim))
        t[0] = 0
        tables.append(t)
    labels = rng.integers(0, 3, size=n)
    return MultimodalInput(ids, images), labels, tables


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail=""):
    """Log one acceptance line; shown in the terminal summary even when output is captured."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
