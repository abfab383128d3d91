"""Cosine convolutional layers.

Every filter of a layer is generated as ``theta1 * cos(theta2 * n)`` for
``n = 0 .. L-1`` (left-anchored), so a layer with ``Cin`` inputs and
``Cout`` outputs learns exactly ``2 * Cin * Cout`` scalars whatever ``L``
is. Filters are regenerated from the two parameter arrays on every forward
pass so the gradient path to theta stays exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Tensor, record


@dataclass
class CosFilterBank:
    theta1: Tensor  # amplitude, [Cin, Cout]
    theta2: Tensor  # angular step per sample (radians), [Cin, Cout]
    filter_len: int

    def __post_init__(self):
        if self.filter_len < 1:
            raise ConfigError(f"filter length must be >= 1, got {self.filter_len}")
        if self.theta1.shape != self.theta2.shape or self.theta1.data.ndim != 2:
            raise ConfigError(f"theta1 {self.theta1.shape} and theta2 {self.theta2.shape} must be equal 2-D shapes")

    @property
    def in_channels(self) -> int:
        return self.theta1.shape[0]

    @property
    def out_channels(self) -> int:
        return self.theta1.shape[1]

    @property
    def num_parameters(self) -> int:
        return self.theta1.data.size + self.theta2.data.size

    def parameters(self) -> list[Tensor]:
        return [self.theta1, self.theta2]


def init_bank(rng: np.random.Generator, in_channels: int, out_channels: int, filter_len: int,
              dtype=np.float32, name: str = "", theta1_init: str = "fan_in") -> CosFilterBank:
    """Draw theta2 ~ U(0, pi) so initial frequencies span DC to Nyquist.

    theta1 ~ U(-1, 1), divided by sqrt(Cin * L) under ``"fan_in"``. Unit
    amplitudes saturate tanh once Cin * L reaches the hundreds.
    """
    if theta1_init not in ("fan_in", "unit"):
        raise ConfigError(f"theta1_init must be 'fan_in' or 'unit', got {theta1_init!r}")
    shape = (in_channels, out_channels)
    amp = 1.0 if theta1_init == "unit" else 1.0 / np.sqrt(in_channels * filter_len)
    t1 = (rng.uniform(-1.0, 1.0, size=shape) * amp).astype(dtype)
    t2 = rng.uniform(0.0, np.pi, size=shape).astype(dtype)
    prefix = f"{name}." if name else ""
    return CosFilterBank(Tensor(t1, requires_grad=True, name=prefix + "theta1"),
                         Tensor(t2, requires_grad=True, name=prefix + "theta2"),
                         filter_len)


def generate_filters(bank: CosFilterBank) -> Tensor:
    """Filter values ``[Cin, Cout, L]`` with ``filters[ci, co, n] = theta1 * cos(theta2 * n)``."""
    t1, t2 = bank.theta1, bank.theta2
    n = np.arange(bank.filter_len, dtype=t1.dtype)
    phase = t2.data[..., None] * n
    cos = np.cos(phase)
    out = t1.data[..., None] * cos

    def backward(g):
        g1 = (g * cos).sum(axis=-1)
        g2 = -(g * (t1.data[..., None] * n * np.sin(phase))).sum(axis=-1)
        return g1, g2

    return record(out, (t1, t2), backward, "generate_filters")


def coscov_layer_forward(x: Tensor, bank: CosFilterBank, pool_window: int, dropout_p: float = 0.0,
                         training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """generate -> conv -> tanh -> max-pool -> spatial dropout."""
    h = ops.conv1d(x, generate_filters(bank))
    h = ops.maxpool1d(ops.tanh(h), pool_window)
    return ops.spatial_dropout1d(h, dropout_p, training, rng)


def classification_head(x: Tensor, bank: CosFilterBank) -> Tensor:
    """Cosine conv to Z channels, averaged over time. Logits are left unsquashed."""
    if bank.out_channels < 2:
        raise ConfigError(f"classification head needs >= 2 classes, got {bank.out_channels}")
    return ops.gap_time(ops.conv1d(x, generate_filters(bank)))


def export_filters_csv(path, banks: Iterable[tuple[str, CosFilterBank]]) -> int:
    """Write generated filter values with columns layer, in_ch, out_ch, n, value.

    Returns the number of value rows written.
    """
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "in_ch", "out_ch", "n", "value"])
        for layer, bank in banks:
            vals = np.asarray(generate_filters(bank).data, dtype=np.float64)
            Cin, Cout, L = vals.shape
            for ci in range(Cin):
                for co in range(Cout):
                    for n in range(L):
                        w.writerow([layer, ci, co, n, repr(float(vals[ci, co, n]))])
            rows += Cin * Cout * L
    return rows
