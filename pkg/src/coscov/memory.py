"""Learned memory vector with per-layer reader and writer blocks.

A reader turns the memory into a multiplicative gate over a layer's
feature map; a writer summarises the feature map and adds a tanh-bounded
update onto the memory, so one write moves each component by at most 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .cos_layers import CosFilterBank, generate_filters, init_bank
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class MemoryState:
    initial: Tensor  # learned [1, M]

    @property
    def size(self) -> int:
        return self.initial.shape[1]

    def start(self, batch: int) -> Tensor:
        """Working copy for one forward pass, broadcast across the batch."""
        return ops.repeat_rows(self.initial, batch)


@dataclass
class ReaderBlock:
    weight: Tensor  # [M, S]
    bias: Tensor  # [S]
    ccl: CosFilterBank  # 1 -> C

    @property
    def feature_shape(self) -> tuple[int, int]:
        return self.ccl.out_channels, self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias, *self.ccl.parameters()]


@dataclass
class WriterBlock:
    ccl: CosFilterBank  # C -> C
    weight: Tensor  # [S, M] (or [C, M] when pooling over time)
    bias: Tensor  # [M]
    gap_axis: str = "channels"

    def parameters(self) -> list[Tensor]:
        return [*self.ccl.parameters(), self.weight, self.bias]


def _dense_params(rng, fan_in, fan_out, dtype, name):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
    return (Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(b, requires_grad=True, name=f"{name}.bias"))


def init_memory(rng: np.random.Generator, size: int, dtype=np.float32) -> MemoryState:
    if size < 1:
        raise ConfigError(f"memory size must be >= 1, got {size}")
    init = rng.uniform(-0.01, 0.01, size=(1, size)).astype(dtype)
    return MemoryState(Tensor(init, requires_grad=True, name="memory.initial"))


def init_reader(rng, mem_size: int, channels: int, seq_len: int, filter_len: int = 3,
                dtype=np.float32, name: str = "reader", theta1_init: str = "fan_in",
                reader_init: str = "identity") -> ReaderBlock:
    """Reader parameters.

    ``"identity"`` starts the gate near 0.76 everywhere: dense bias 1,
    CCL amplitude 0.5 and low angular steps U(0, pi/8). ``"uniform"`` uses
    the generic dense and cosine initialisers, which leave the gate near
    zero and shrink features by orders of magnitude per read.
    """
    if reader_init not in ("identity", "uniform"):
        raise ConfigError(f"reader_init must be 'identity' or 'uniform', got {reader_init!r}")
    w, b = _dense_params(rng, mem_size, seq_len, dtype, f"{name}.dense")
    ccl = init_bank(rng, 1, channels, filter_len, dtype, f"{name}.ccl", theta1_init)
    if reader_init == "identity":
        b.data[:] = 1.0
        ccl.theta1.data[:] = 0.5
        ccl.theta2.data[:] = rng.uniform(0.0, np.pi / 8, size=ccl.theta2.shape)
    return ReaderBlock(w, b, ccl)


def init_writer(rng, mem_size: int, channels: int, seq_len: int, filter_len: int = 3,
                gap_axis: str = "channels", dtype=np.float32, name: str = "writer",
                theta1_init: str = "fan_in") -> WriterBlock:
    if gap_axis not in ("channels", "time"):
        raise ConfigError(f"writer_gap_axis must be 'channels' or 'time', got {gap_axis!r}")
    ccl = init_bank(rng, channels, channels, filter_len, dtype, f"{name}.ccl", theta1_init)
    fan_in = seq_len if gap_axis == "channels" else channels
    w, b = _dense_params(rng, fan_in, mem_size, dtype, f"{name}.dense")
    return WriterBlock(ccl, w, b, gap_axis)


def memory_read(mem: Tensor, f: Tensor, reader: ReaderBlock) -> Tensor:
    """``f * tanh(CCL(tanh(F_R(mem))))`` with the gate expanded to ``[B, C, S]``."""
    B, C, S = f.shape
    if mem.shape[1] != reader.weight.shape[0] or (C, S) != reader.feature_shape:
        raise ConfigError(f"reader built for memory {reader.weight.shape[0]} and feature "
                          f"{reader.feature_shape}, got memory {mem.shape[1]} and feature {(C, S)}")
    r = ops.tanh(ops.dense(mem, reader.weight, reader.bias))
    r = ops.reshape(r, (B, 1, S))
    gate = ops.tanh(ops.conv1d(r, generate_filters(reader.ccl)))
    return ops.mul(f, gate)


def memory_write(mem: Tensor, f: Tensor, writer: WriterBlock) -> Tensor:
    """``mem + tanh(F_W(GAP(tanh(CCL(f)))))``; GAP removes channels by default."""
    B, C, S = f.shape
    expect_in = S if writer.gap_axis == "channels" else C
    if writer.ccl.in_channels != C or writer.weight.shape[0] != expect_in or mem.shape[1] != writer.weight.shape[1]:
        raise ConfigError(f"writer dims (C={writer.ccl.in_channels}, in={writer.weight.shape[0]}, "
                          f"M={writer.weight.shape[1]}) do not match feature {f.shape} / memory {mem.shape}")
    t = ops.tanh(ops.conv1d(f, generate_filters(writer.ccl)))
    pooled = ops.gap_channels(t) if writer.gap_axis == "channels" else ops.gap_time(t)
    update = ops.tanh(ops.dense(pooled, writer.weight, writer.bias))
    return ops.add(mem, update)
