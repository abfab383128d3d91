"""Vector quantisation of per-(batch, channel) feature sequences.

Each length-``d`` row of a ``[B, C, d]`` feature is replaced by its nearest
codebook row. The replacement has no gradient of its own: the upstream
gradient is copied straight onto the pre-quantisation feature, and the
codebook learns only through :func:`vq_losses`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, record

# relative slack used when screening candidates with the expanded distance
_SCREEN_RTOL = 1e-9


@dataclass
class Codebook:
    embeddings: Tensor  # [k, d]
    beta: float = 0.25

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def init_codebook(rng: np.random.Generator, k: int, d: int, beta: float = 0.25,
                  dtype=np.float32) -> Codebook:
    if k < 1:
        raise ConfigError("codebook needs at least one embedding")
    # keep codes strictly inside the tanh range after the cast
    top = np.nextafter(np.dtype(dtype).type(1), np.dtype(dtype).type(0))
    emb = np.clip(rng.uniform(-1.0, 1.0, size=(k, d)).astype(dtype), -top, top)
    return Codebook(Tensor(emb, requires_grad=True, name="vq.codebook"), beta)


def nearest_indices(vectors: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """argmin_j ||v_i - c_j||^2 for each row of ``vectors``; ties go to the lowest j.

    The squared distance is defined as the float64 sum of squared
    differences. A matmul-expanded distance screens candidates and only
    near-minimal ones are re-scored exactly, so the result matches a
    brute-force scan.
    """
    v = np.asarray(vectors, dtype=np.float64)
    c = np.asarray(codes, dtype=np.float64)
    if c.shape[0] == 0:
        raise ConfigError("codebook is empty")
    if v.shape[1] != c.shape[1]:
        raise ConfigError(f"feature length {v.shape[1]} does not match codebook dim {c.shape[1]}")
    vn = np.einsum("ij,ij->i", v, v)
    cn = np.einsum("ij,ij->i", c, c)
    approx = vn[:, None] - 2.0 * (v @ c.T) + cn[None, :]
    slack = _SCREEN_RTOL * (vn[:, None] + cn.max()) + 1e-300
    lo = approx.min(axis=1, keepdims=True)
    cand = approx <= lo + 2.0 * slack
    out = np.empty(v.shape[0], dtype=np.int64)
    for i in range(v.shape[0]):
        js = np.flatnonzero(cand[i])
        if js.size == 1:
            out[i] = js[0]
            continue
        exact = ((v[i] - c[js]) ** 2).sum(axis=1)
        out[i] = js[np.argmin(exact)]
    return out


def nearest(code: Codebook, F: Tensor | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices [B, C], quantised [B, C, d])``; quantised rows are codebook rows."""
    Fd = F.data if isinstance(F, Tensor) else np.asarray(F)
    if Fd.ndim != 3:
        raise ConfigError(f"VQ expects [B, C, d] features, got {Fd.shape}")
    B, C, d = Fd.shape
    if code.size == 0:
        raise ConfigError("codebook is empty")
    if d != code.dim:
        raise ConfigError(f"feature length {d} does not match codebook dim {code.dim}")
    idx = nearest_indices(Fd.reshape(B * C, d), code.embeddings.data)
    quantised = code.embeddings.data[idx].reshape(B, C, d)
    return idx.reshape(B, C), quantised


def straight_through(F: Tensor, quantised: np.ndarray) -> Tensor:
    """Forward value is ``quantised``; backward copies the gradient onto ``F`` unchanged."""
    if F.shape != quantised.shape:
        raise ConfigError(f"straight-through shapes differ: {F.shape} vs {quantised.shape}")
    return record(np.array(quantised, dtype=F.dtype), (F,), lambda g: (g,), "straight_through")


def vq_losses(F: Tensor, code: Codebook, indices: np.ndarray,
              reduction: str = "sum") -> tuple[Tensor, Tensor]:
    """Codebook and commitment terms.

    codebook_loss   = mean_i ||sg[F_i] - E_j(i)||^2   (gradient to the codebook only)
    commitment_loss = beta * mean_i ||F_i - sg[E_j(i)]||^2   (gradient to F only)

    ``reduction="mean"`` additionally averages over the ``d`` axis.
    """
    if reduction not in ("sum", "mean"):
        raise ConfigError(f"unknown VQ loss reduction {reduction!r}")
    E = code.embeddings
    B, C, d = F.shape
    flat_idx = np.asarray(indices).reshape(-1)
    diff = F.data.reshape(-1, d) - E.data[flat_idx]  # F_i - E_j
    n = diff.shape[0] * (d if reduction == "mean" else 1)
    sq = (diff * diff).sum() / n
    beta = float(code.beta)
    dt = F.dtype.type

    def codebook_backward(g):
        gE = np.zeros_like(E.data)
        np.add.at(gE, flat_idx, (-2.0 / n) * diff * g)
        return (gE,)

    def commitment_backward(g):
        return ((2.0 * beta / n) * diff * g).reshape(F.shape).astype(F.dtype, copy=False),

    cb = record(np.asarray(dt(sq)), (E,), codebook_backward, "codebook_loss")
    cm = record(np.asarray(dt(beta * sq)), (F,), commitment_backward, "commitment_loss")
    return cb, cm


def usage_histogram(indices: np.ndarray, k: int) -> np.ndarray:
    return np.bincount(np.asarray(indices).reshape(-1), minlength=k)


def write_usage_csv(path, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "hit_count"])
        for j, c in enumerate(counts):
            w.writerow([j, int(c)])
