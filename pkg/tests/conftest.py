import numpy as np
import pytest

from coscov.data import make_synthetic
from coscov.model import ModelConfig
from coscov.trainer import TrainConfig

TINY_LEN = 256


def tiny_config(**kw) -> ModelConfig:
    """A small five-block network on 256-sample inputs, fast enough for unit tests."""
    base = dict(hidden_channels=[4, 6], filter_lens=[9, 5, 3], pools=[4, 4], num_classes=4,
                input_len=TINY_LEN, vq_k=16, memory_size=8, dropout=0.2)
    base.update(kw)
    return ModelConfig(**base)


def tiny_train(**kw) -> TrainConfig:
    base = dict(epochs=2, batch_size=8, pad_or_trim_to=TINY_LEN, lr=1e-2)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    # 8 kHz x 32 ms = 256 samples; class tones at 200..800 Hz stay below Nyquist
    return make_synthetic(4, 20, seed=3, sample_rate=8000, duration=TINY_LEN / 8000)


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    s = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if s == 0 else float(np.linalg.norm(a - b) / s)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
