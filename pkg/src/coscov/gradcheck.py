"""Finite-difference checks of every hand-written backward rule.

Each case draws a small random instance in float64, reduces the op's
output to a scalar through a fixed random projection, and compares the
tape gradient of every differentiable input with central differences.
The error metric is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .cos_layers import CosFilterBank, classification_head, coscov_layer_forward, generate_filters
from .memory import ReaderBlock, WriterBlock, memory_read, memory_write
from .tensor import Tape, Tensor
from .vq import Codebook, nearest, straight_through, vq_losses

H = 1e-5
TOLERANCE = 1e-4
INSTANCES = 20

# perturb(op, input_name, grad) -> grad; a test hook for negative controls
Perturb = Callable[[str, str, np.ndarray], np.ndarray]


@dataclass
class CheckResult:
    op: str
    instances: int
    max_error: float
    passed: bool
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op:<20} instances={self.instances} max_rel_error={self.max_error:.2e} ({self.seconds:.2f}s)"


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


# A case maps an rng to (arrays, forward). ``forward`` takes name -> Tensor and
# returns the op output; names listed in ``wrt`` are differentiated.
Case = Callable[[np.random.Generator], tuple[dict[str, np.ndarray], Callable[[dict], Tensor], list[str]]]


def _bank(t1: Tensor, t2: Tensor, L: int) -> CosFilterBank:
    return CosFilterBank(t1, t2, L)


def _conv1d(rng):
    B, Cin, Cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    L, S = int(rng.integers(1, 6)), int(rng.integers(3, 9))
    arrays = {"x": rng.normal(size=(B, Cin, S)), "w": rng.normal(size=(Cin, Cout, L))}
    return arrays, lambda t: ops.conv1d(t["x"], t["w"]), ["x", "w"]


def _dense(rng):
    B, I, O = (int(v) for v in rng.integers(1, 5, size=3))
    arrays = {"x": rng.normal(size=(B, I)), "w": rng.normal(size=(I, O)), "b": rng.normal(size=(O,))}
    return arrays, lambda t: ops.dense(t["x"], t["w"], t["b"]), ["x", "w", "b"]


def _tanh(rng):
    arrays = {"x": rng.normal(scale=1.5, size=(2, 3, 4))}
    return arrays, lambda t: ops.tanh(t["x"]), ["x"]


def _maxpool(rng):
    window = int(rng.integers(1, 5))
    S = window * int(rng.integers(1, 4)) + int(rng.integers(0, window))
    arrays = {"x": rng.normal(size=(2, 2, S))}
    return arrays, lambda t: ops.maxpool1d(t["x"], window), ["x"]


def _mul_add(rng):
    arrays = {"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(2, 1, 4)), "c": rng.normal(size=(4,))}
    return arrays, lambda t: ops.add(ops.mul(t["a"], t["b"]), t["c"]), ["a", "b", "c"]


def _gap_time(rng):
    arrays = {"x": rng.normal(size=(2, 3, int(rng.integers(1, 7))))}
    return arrays, lambda t: ops.gap_time(t["x"]), ["x"]


def _gap_channels(rng):
    arrays = {"x": rng.normal(size=(2, int(rng.integers(1, 5)), 5))}
    return arrays, lambda t: ops.gap_channels(t["x"]), ["x"]


def _dropout(rng):
    seed = int(rng.integers(1 << 30))
    arrays = {"x": rng.normal(size=(3, 6, 4))}
    return arrays, lambda t: ops.spatial_dropout1d(t["x"], 0.4, True, np.random.default_rng(seed)), ["x"]


def _softmax_ce(rng):
    B, Z = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    labels = rng.integers(0, Z, size=B)
    arrays = {"z": rng.normal(scale=2.0, size=(B, Z))}
    return arrays, lambda t: ops.softmax_cross_entropy(t["z"], labels), ["z"]


def _generate(rng):
    Cin, Cout, L = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
    arrays = {"theta1": rng.uniform(-1, 1, size=(Cin, Cout)), "theta2": rng.uniform(0, np.pi, size=(Cin, Cout))}
    return arrays, lambda t: generate_filters(_bank(t["theta1"], t["theta2"], L)), ["theta1", "theta2"]


def _coscov_layer(rng):
    Cin, Cout, L, pool = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 4))
    S = pool * int(rng.integers(2, 5))
    arrays = {"x": rng.normal(size=(2, Cin, S)), "theta1": rng.uniform(-1, 1, size=(Cin, Cout)),
              "theta2": rng.uniform(0, np.pi, size=(Cin, Cout))}
    return (arrays, lambda t: coscov_layer_forward(t["x"], _bank(t["theta1"], t["theta2"], L), pool),
            ["x", "theta1", "theta2"])


def _head(rng):
    Cin, Z, L = int(rng.integers(1, 4)), int(rng.integers(2, 5)), int(rng.integers(1, 5))
    arrays = {"x": rng.uniform(-1, 1, size=(2, Cin, 6)), "theta1": rng.uniform(-1, 1, size=(Cin, Z)),
              "theta2": rng.uniform(0, np.pi, size=(Cin, Z))}
    return (arrays, lambda t: classification_head(t["x"], _bank(t["theta1"], t["theta2"], L)),
            ["x", "theta1", "theta2"])


def _codebook(rng):
    """Codebook and commitment losses; each differentiates only its own side."""
    k, d, B, C = int(rng.integers(2, 6)), int(rng.integers(1, 5)), 2, int(rng.integers(1, 3))
    arrays = {"F": rng.uniform(-1, 1, size=(B, C, d)), "E": rng.uniform(-1, 1, size=(k, d))}
    beta = float(rng.uniform(0.1, 1.0))

    def forward(t):
        code = Codebook(t["E"], beta)
        idx, _ = nearest(code, t["F"])
        cb, _ = vq_losses(t["F"], code, idx, "sum")
        return cb
    return arrays, forward, ["E"]


def _commitment(rng):
    k, d, B, C = int(rng.integers(2, 6)), int(rng.integers(1, 5)), 2, int(rng.integers(1, 3))
    arrays = {"F": rng.uniform(-1, 1, size=(B, C, d)), "E": rng.uniform(-1, 1, size=(k, d))}
    beta = float(rng.uniform(0.1, 1.0))

    def forward(t):
        code = Codebook(t["E"], beta)
        idx, _ = nearest(code, t["F"])
        _, cm = vq_losses(t["F"], code, idx, "sum")
        return cm
    return arrays, forward, ["F"]


def _memory_read(rng):
    B, M, C, S, L = 2, int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    arrays = {"mem": rng.normal(size=(B, M)), "f": rng.normal(size=(B, C, S)),
              "w": rng.normal(size=(M, S)), "b": rng.normal(size=(S,)),
              "theta1": rng.uniform(-1, 1, size=(1, C)), "theta2": rng.uniform(0, np.pi, size=(1, C))}

    def forward(t):
        return memory_read(t["mem"], t["f"], ReaderBlock(t["w"], t["b"], _bank(t["theta1"], t["theta2"], L)))
    return arrays, forward, list(arrays)


def _memory_write(rng):
    B, M, C, S, L = 2, int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    axis = "channels" if rng.random() < 0.5 else "time"
    gap_len = S if axis == "channels" else C
    arrays = {"mem": rng.normal(size=(B, M)), "f": rng.normal(size=(B, C, S)),
              "theta1": rng.uniform(-1, 1, size=(C, C)), "theta2": rng.uniform(0, np.pi, size=(C, C)),
              "w": rng.normal(size=(gap_len, M)), "b": rng.normal(size=(M,))}

    def forward(t):
        writer = WriterBlock(_bank(t["theta1"], t["theta2"], L), t["w"], t["b"], axis)
        return memory_write(t["mem"], t["f"], writer)
    return arrays, forward, list(arrays)


CASES: dict[str, Case] = {
    "conv1d": _conv1d,
    "dense": _dense,
    "tanh": _tanh,
    "maxpool1d": _maxpool,
    "mul_add": _mul_add,
    "gap_time": _gap_time,
    "gap_channels": _gap_channels,
    "spatial_dropout1d": _dropout,
    "softmax_ce": _softmax_ce,
    "generate_filters": _generate,
    "coscov_layer": _coscov_layer,
    "classification_head": _head,
    "codebook_loss": _codebook,
    "commitment_loss": _commitment,
    "memory_read": _memory_read,
    "memory_write": _memory_write,
}
OP_NAMES = [*CASES, "straight_through"]


def _check_case(op: str, case: Case, rng: np.random.Generator, perturb: Perturb | None) -> float:
    arrays, forward, wrt = case(rng)
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    tensors = {k: Tensor(v, requires_grad=k in wrt, name=k, dtype=np.float64) for k, v in arrays.items()}
    with Tape() as tape:
        out = forward(tensors)
    proj = rng.normal(size=out.shape)
    tape.backward(out, proj.astype(np.float64))

    def value() -> float:
        live = {k: Tensor(arrays[k], dtype=np.float64) for k in arrays}
        return float(np.sum(forward(live).data * proj))

    worst = 0.0
    for name in wrt:
        analytic = tensors[name].grad
        analytic = np.zeros_like(arrays[name]) if analytic is None else analytic
        if perturb is not None:
            analytic = perturb(op, name, analytic)
        worst = max(worst, relative_error(analytic, numeric_grad(value, arrays[name])))
    # stop-gradient sides must receive nothing at all
    for name, t in tensors.items():
        if name not in wrt and t.grad is not None and np.any(t.grad):
            worst = max(worst, np.inf)
    return worst


def _check_straight_through(rng: np.random.Generator, perturb: Perturb | None) -> float:
    """The gradient at F must equal the numeric gradient of the downstream map at the quantised value."""
    B, C, d, k = 2, int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(2, 6))
    F = rng.uniform(-1, 1, size=(B, C, d))
    code = Codebook(Tensor(rng.uniform(-1, 1, size=(k, d)), dtype=np.float64), 0.25)
    _, q = nearest(code, F)
    proj = rng.normal(size=(B, C, d))
    Ft = Tensor(F, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        out = ops.tanh(straight_through(Ft, q))
    tape.backward(out, proj)
    analytic = Ft.grad if perturb is None else perturb("straight_through", "F", Ft.grad)
    z = np.array(q, dtype=np.float64)
    numeric = numeric_grad(lambda: float(np.sum(np.tanh(z) * proj)), z)
    return relative_error(analytic, numeric)


def run(ops_: list[str] | None = None, seed: int = 0, instances: int = INSTANCES,
        tolerance: float = TOLERANCE, perturb: Perturb | None = None) -> list[CheckResult]:
    names = OP_NAMES if not ops_ or ops_ == ["all"] else ops_
    unknown = [n for n in names if n not in OP_NAMES]
    if unknown:
        raise KeyError(f"unknown gradcheck op(s) {unknown}; choose from {OP_NAMES}")
    results = []
    for i, name in enumerate(names):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        t0 = time.perf_counter()
        errs = []
        for _ in range(instances):
            if name == "straight_through":
                errs.append(_check_straight_through(rng, perturb))
            else:
                errs.append(_check_case(name, CASES[name], rng, perturb))
        worst = float(max(errs))
        results.append(CheckResult(name, instances, worst, worst <= tolerance, time.perf_counter() - t0))
    return results
