"""Network assembly: CosCovNN, VQCCM and the plain-CNN twin.

The default configuration is the searched five-layer architecture:
channels 32/64/128/256/Z, filter lengths 100/50/12/6/3 and pool windows
10/8/4/4 on one second of 16 kHz audio, giving hidden lengths
1600/200/50/12.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import ops
from .cos_layers import CosFilterBank, classification_head, coscov_layer_forward, generate_filters, init_bank
from .errors import ConfigError, DataError
from .memory import (MemoryState, ReaderBlock, WriterBlock, init_memory, init_reader, init_writer,
                     memory_read, memory_write)
from .tensor import Tensor
from .vq import Codebook, init_codebook, nearest, straight_through, vq_losses

KINDS = ("coscov", "vqccm", "plain-cnn")


@dataclass
class ModelConfig:
    kind: str = "coscov"
    hidden_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    filter_lens: list[int] = field(default_factory=lambda: [100, 50, 12, 6, 3])
    pools: list[int] = field(default_factory=lambda: [10, 8, 4, 4])
    num_classes: int = 10
    dropout: float = 0.5
    theta1_init: str = "fan_in"
    input_len: int | None = 16000
    adapter_pool: int | None = None
    vq: bool | None = None
    vq_k: int = 512
    vq_beta: float = 0.25
    vq_loss_reduction: str = "sum"
    vq_init: str = "data"
    memory: bool | None = None
    memory_size: int = 100
    memory_filter_len: int = 3
    writer_gap_axis: str = "channels"
    reader_init: str = "identity"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.hidden_channels = [int(c) for c in self.hidden_channels]
        self.filter_lens = [int(L) for L in self.filter_lens]
        self.pools = [int(p) for p in self.pools]
        if self.vq is None:
            self.vq = self.kind == "vqccm"
        if self.memory is None:
            self.memory = self.kind == "vqccm"
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.hidden_channels) + 1

    @property
    def channels(self) -> list[int]:
        return [*self.hidden_channels, self.num_classes]

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if len(self.hidden_channels) < 1:
            raise ConfigError("need at least one hidden layer plus the classification head")
        if len(self.filter_lens) != self.num_layers:
            raise ConfigError(f"filter_lens needs {self.num_layers} entries, got {len(self.filter_lens)}")
        if len(self.pools) != len(self.hidden_channels):
            raise ConfigError(f"pools needs {len(self.hidden_channels)} entries, got {len(self.pools)}")
        if any(c < 1 for c in self.hidden_channels):
            raise ConfigError("hidden_channels must be positive")
        if any(L < 1 for L in self.filter_lens) or any(p < 1 for p in self.pools):
            raise ConfigError("filter lengths and pool windows must be >= 1")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kind == "plain-cnn" and (self.vq or self.memory):
            raise ConfigError("plain-cnn twin has no VQ or memory")
        if (self.vq or self.memory) and self.input_len is None:
            raise ConfigError("VQ and memory need a fixed input_len")
        if self.input_len is not None and self.input_len < math.prod(self.pools):
            raise ConfigError(f"input_len {self.input_len} shorter than pool product {math.prod(self.pools)}")
        if self.theta1_init not in ("fan_in", "unit"):
            raise ConfigError(f"theta1_init must be 'fan_in' or 'unit', got {self.theta1_init!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.vq and self.vq_k < 1:
            raise ConfigError("vq_k must be >= 1")
        if self.vq_init not in ("data", "uniform"):
            raise ConfigError(f"vq_init must be 'data' or 'uniform', got {self.vq_init!r}")
        if self.vq_loss_reduction not in ("sum", "mean"):
            raise ConfigError(f"vq_loss_reduction must be 'sum' or 'mean', got {self.vq_loss_reduction!r}")
        if self.reader_init not in ("identity", "uniform"):
            raise ConfigError(f"reader_init must be 'identity' or 'uniform', got {self.reader_init!r}")
        if self.writer_gap_axis not in ("channels", "time"):
            raise ConfigError(f"writer_gap_axis must be 'channels' or 'time', got {self.writer_gap_axis!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown model config key {key!r}")
        return cls(**d)

    def twin(self, kind: str) -> "ModelConfig":
        """Same backbone shape with a different filter family, no VQ/memory."""
        d = self.to_dict()
        d.update(kind=kind, vq=False, memory=False)
        return ModelConfig.from_dict(d)

    def hidden_lengths(self, input_len: int | None = None) -> list[int]:
        S = input_len if input_len is not None else self.input_len
        out = []
        for p in self.pools:
            S //= p
            out.append(S)
        return out


@dataclass
class ForwardOutput:
    logits: Tensor
    codebook_loss: Tensor | None = None
    commitment_loss: Tensor | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)


def input_adapter(audio: np.ndarray, target_len: int | None = 16000, pool: int | None = None) -> np.ndarray:
    """Bring ``[B, 1, S_raw]`` audio to the length the network was built for.

    An integer multiple ``k * target_len`` is max-pooled with window ``k``;
    shorter input is zero-padded on the right. Other over-long input is
    pooled by ``S_raw // target_len`` and trimmed. ``pool`` forces a fixed
    window first.
    """
    x = np.asarray(audio)
    if target_len is None and pool is None:
        return x
    if pool is None:
        pool = max(1, x.shape[-1] // target_len)
    if pool > 1:
        B, C, S = x.shape
        So = S // pool
        x = x[:, :, :So * pool].reshape(B, C, So, pool).max(axis=-1)
    if target_len is not None:
        S = x.shape[-1]
        if S < target_len:
            x = np.pad(x, ((0, 0), (0, 0), (0, target_len - S)))
        elif S > target_len:
            x = x[:, :, :target_len]
    return x


class Model:
    """A built network: named parameters plus the wiring for :meth:`forward`."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = np.dtype(config.dtype)
        conv_ss, vq_ss, mem_ss = np.random.SeedSequence(config.seed).spawn(3)
        conv_rng = np.random.default_rng(conv_ss)
        chans = [1, *config.channels]
        names = [f"layer{i + 1}" for i in range(config.num_layers - 1)] + ["head"]

        self.layer_names = names
        self.banks: list[CosFilterBank] = []
        self.filters: list[Tensor] = []
        for i, name in enumerate(names):
            cin, cout, L = chans[i], chans[i + 1], config.filter_lens[i]
            if config.kind == "plain-cnn":
                bound = 1.0 / math.sqrt(cin * L)
                w = conv_rng.uniform(-bound, bound, size=(cin, cout, L)).astype(dtype)
                self.filters.append(Tensor(w, requires_grad=True, name=f"{name}.filters"))
            else:
                self.banks.append(init_bank(conv_rng, cin, cout, L, dtype, name, config.theta1_init))

        self.codebook: Codebook | None = None
        self.memory: MemoryState | None = None
        self.readers: dict[int, ReaderBlock] = {}
        self.writers: dict[int, WriterBlock] = {}
        hidden = config.hidden_lengths() if config.input_len is not None else []
        if config.vq:
            self.codebook = init_codebook(np.random.default_rng(vq_ss), config.vq_k, hidden[0],
                                          config.vq_beta, dtype)
        if config.memory:
            mem_rng = np.random.default_rng(mem_ss)
            M, Lm = config.memory_size, config.memory_filter_len
            self.memory = init_memory(mem_rng, M, dtype)
            # writers after every hidden layer, readers before layers 2..N
            for i in range(1, config.num_layers):
                self.writers[i] = init_writer(mem_rng, M, chans[i], hidden[i - 1], Lm,
                                              config.writer_gap_axis, dtype, f"writer{i}",
                                              config.theta1_init)
                self.readers[i + 1] = init_reader(mem_rng, M, chans[i], hidden[i - 1], Lm,
                                                  dtype, f"reader{i + 1}", config.theta1_init,
                                                  config.reader_init)

    # -- parameters -------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[Tensor] = []
        for bank in self.banks:
            out += bank.parameters()
        out += self.filters
        if self.codebook is not None:
            out.append(self.codebook.embeddings)
        if self.memory is not None:
            out.append(self.memory.initial)
            for i in sorted(self.writers):
                out += self.writers[i].parameters()
            for i in sorted(self.readers):
                out += self.readers[i].parameters()
        return [(t.name, t) for t in out]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ConfigError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def bank_items(self) -> list[tuple[str, CosFilterBank]]:
        items = list(zip(self.layer_names, self.banks))
        for i in sorted(self.writers):
            items.append((f"writer{i}.ccl", self.writers[i].ccl))
        for i in sorted(self.readers):
            items.append((f"reader{i}.ccl", self.readers[i].ccl))
        return items

    def layer1_features(self, audio) -> np.ndarray:
        """Layer-1 output (before VQ) in inference mode, as ``[B, C, d]``."""
        x = audio.data if isinstance(audio, Tensor) else np.asarray(audio)
        x = input_adapter(x if x.ndim == 3 else x[:, None, :], self.config.input_len, self.config.adapter_pool)
        return self._conv_block(0, Tensor(x, dtype=np.dtype(self.config.dtype)), False, None, False).data

    def init_codebook_from(self, audio_batches) -> None:
        """Seed the codebook with layer-1 feature rows drawn from ``audio_batches``.

        Rows are taken in order until ``k`` are collected; if the data runs
        out, rows are reused with a small jitter so no two codes coincide.
        """
        if self.codebook is None:
            return
        k = self.codebook.size
        rows, n = [], 0
        for audio in audio_batches:
            f = self.layer1_features(audio)
            rows.append(f.reshape(-1, f.shape[-1]))
            n += rows[-1].shape[0]
            if n >= k:
                break
        if not rows:
            return
        pool = np.concatenate(rows)
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, 31337]))
        if pool.shape[0] >= k:
            codes = pool[:k]
        else:
            pick = np.concatenate([np.arange(pool.shape[0]), rng.integers(0, pool.shape[0], k - pool.shape[0])])
            codes = pool[pick]
            jitter = rng.normal(0.0, 1e-3 * (pool.std() + 1e-8), size=(k - pool.shape[0], pool.shape[1]))
            codes[pool.shape[0]:] += jitter.astype(codes.dtype)
        self.codebook.embeddings.data = np.ascontiguousarray(codes, dtype=self.codebook.embeddings.dtype)

    # -- forward ----------------------------------------------------------
    def min_input_len(self) -> int:
        return math.prod(self.config.pools)

    def _conv_block(self, i: int, h: Tensor, training: bool, rng, dropout: bool) -> Tensor:
        cfg = self.config
        p = cfg.dropout if dropout else 0.0
        if cfg.kind == "plain-cnn":
            h = ops.maxpool1d(ops.tanh(ops.conv1d(h, self.filters[i])), cfg.pools[i])
            return ops.spatial_dropout1d(h, p, training, rng)
        return coscov_layer_forward(h, self.banks[i], cfg.pools[i], p, training, rng)

    def _head(self, h: Tensor) -> Tensor:
        if self.config.kind == "plain-cnn":
            return ops.gap_time(ops.conv1d(h, self.filters[-1]))
        return classification_head(h, self.banks[-1])

    def forward(self, audio, training: bool = False, rng: np.random.Generator | None = None,
                keep_activations: bool = False) -> ForwardOutput:
        cfg = self.config
        x = audio.data if isinstance(audio, Tensor) else np.asarray(audio)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != 1:
            raise DataError(f"audio must be [B, 1, S], got {x.shape}")
        x = input_adapter(x, cfg.input_len, cfg.adapter_pool)
        if x.shape[-1] < self.min_input_len():
            raise DataError(f"input of {x.shape[-1]} samples is too short; need at least {self.min_input_len()}")
        h = Tensor(x, dtype=np.dtype(cfg.dtype))
        B = x.shape[0]
        diag: dict[str, Any] = {"input_shape": h.shape, "shapes": [], "trace": []}
        if keep_activations:
            diag["activations"] = []
            diag["memory_updates"] = []
        out = ForwardOutput(logits=None, diagnostics=diag)  # type: ignore[arg-type]

        mem = self.memory.start(B) if self.memory is not None else None

        def write(i, h):
            nonlocal mem
            new = memory_write(mem, h, self.writers[i])
            if keep_activations:
                diag["memory_updates"].append(new.data - mem.data)
            diag["trace"].append(f"write{i}")
            mem = new

        def read(i, h):
            diag["trace"].append(f"read{i}")
            return memory_read(mem, h, self.readers[i])

        # layer 1: conv/tanh/pool, then VQ (no dropout ahead of quantisation)
        h = self._conv_block(0, h, training, rng, dropout=self.codebook is None)
        diag["trace"].append("layer1")
        if self.codebook is not None:
            idx, q = nearest(self.codebook, h)
            out.codebook_loss, out.commitment_loss = vq_losses(h, self.codebook, idx, cfg.vq_loss_reduction)
            h = straight_through(h, q)
            diag["vq_indices"] = idx
            diag["trace"].append("vq")
        self._note(diag, h, keep_activations)
        if mem is not None:
            write(1, h)

        for i in range(1, cfg.num_layers - 1):
            if mem is not None:
                h = read(i + 1, h)
            h = self._conv_block(i, h, training, rng, dropout=True)
            diag["trace"].append(f"layer{i + 1}")
            self._note(diag, h, keep_activations)
            if mem is not None:
                write(i + 1, h)

        if mem is not None:
            h = read(cfg.num_layers, h)
        out.logits = self._head(h)
        diag["trace"].append("head")
        if mem is not None:
            diag["memory"] = mem.data
        return out

    @staticmethod
    def _note(diag, h, keep):
        diag["shapes"].append(h.shape)
        if keep:
            diag["activations"].append(h.data)

    __call__ = forward


def build(config: ModelConfig) -> Model:
    return Model(config)


# -- parameter accounting ---------------------------------------------------
def count_parameters(model: Model) -> dict[str, Any]:
    """Per-block and total learnable scalar counts."""
    rows: dict[str, int] = {}
    for name, t in model.named_parameters():
        block = name.split(".")[0]
        rows[block] = rows.get(block, 0) + int(t.data.size)
    return {"rows": rows, "total": sum(rows.values())}


def analytic_backbone_counts(config: ModelConfig) -> dict[str, list[int]]:
    """Backbone counts from shapes alone: 2*Cin*Cout (cosine) and Cin*Cout*L (plain)."""
    chans = [1, *config.channels]
    cos = [2 * chans[i] * chans[i + 1] for i in range(config.num_layers)]
    cnn = [chans[i] * chans[i + 1] * config.filter_lens[i] for i in range(config.num_layers)]
    return {"coscov": cos, "plain-cnn": cnn}


def compare_parameters(config: ModelConfig) -> dict[str, Any]:
    """Counts for the config's model and its plain-CNN twin, plus the reduction."""
    cos_cfg = config if config.kind != "plain-cnn" else config.twin("coscov")
    cos = count_parameters(build(cos_cfg))
    cnn = count_parameters(build(cos_cfg.twin("plain-cnn")))
    backbone = sum(v for k, v in cos["rows"].items() if k.startswith("layer") or k == "head")
    reduction = (cnn["total"] - backbone) / cnn["total"]
    return {"coscov": cos, "plain-cnn": cnn, "backbone_total": backbone,
            "reduction": reduction, "reduction_pct": round(100.0 * reduction, 2)}
