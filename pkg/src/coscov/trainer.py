"""Training loop, evaluation, and the memory/VQ sweep and ablation runners.

The objective is batch-mean cross-entropy plus, when VQ is on, the
codebook and commitment terms. Runs are deterministic given the model
config, the train config and the dataset manifest.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import ops
from .checkpoint import save_checkpoint
from .data import Dataset, batches
from .errors import ConfigError, NumericError
from .model import Model, ModelConfig, build
from .optim import Optimizer, clip_grad_norm, make_optimizer
from .tensor import Tape

log = logging.getLogger(__name__)

ABLATION_VARIANTS = (
    ("CosCovNN", dict(memory=False, vq=False)),
    ("CosCovNN + Memory", dict(memory=True, vq=False)),
    ("CosCovNN + VQ", dict(memory=False, vq=True)),
    ("CosCovNN + Memory + VQ", dict(memory=True, vq=True)),
)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    eval_every: int = 1
    patience: int | None = None
    clip_norm: float | None = None
    pad_or_trim_to: int | None = 16000
    checkpoint_dir: str | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown train config key {key!r}")
        return cls(**d)


@dataclass
class StepMetrics:
    loss: float
    cross_entropy: float
    codebook_loss: float = 0.0
    commitment_loss: float = 0.0
    accuracy: float = 0.0
    grad_norm: float | None = None


@dataclass
class RunReport:
    epochs: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    test_accuracy: float | None = None
    test_loss: float | None = None
    wall_time: float = 0.0
    model_config: dict[str, Any] = field(default_factory=dict)
    train_config: dict[str, Any] = field(default_factory=dict)
    manifest_digest: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def save_csv(self, path) -> None:
        keys = ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys, extrasaction="ignore")
            w.writeheader()
            for row in self.epochs:
                w.writerow(row)


def objective(out, cross_entropy):
    """Cross-entropy plus the codebook and commitment terms when VQ is on."""
    if out.codebook_loss is None:
        return cross_entropy
    return ops.add(ops.add(cross_entropy, out.codebook_loss), out.commitment_loss)


def train_step(model: Model, batch, optimizer: Optimizer, rng: np.random.Generator | None = None,
               clip_norm: float | None = None) -> StepMetrics:
    x, y = batch
    model.zero_grad()
    with Tape() as tape:
        out = model.forward(x, training=True, rng=rng)
        ce = ops.softmax_cross_entropy(out.logits, y)
        loss = objective(out, ce)
    value = loss.item()
    if not np.isfinite(value):
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            stats = {name: (float(np.nanmin(t.data)), float(np.nanmax(t.data)))
                     for name, t in model.named_parameters()}
        raise NumericError(f"non-finite loss {value} (cross-entropy {ce.item()}); parameter ranges: {stats}")
    tape.backward(loss)
    gnorm = clip_grad_norm(model.parameters(), clip_norm) if clip_norm else None
    optimizer.step()
    acc = float(np.mean(out.logits.data.argmax(axis=1) == y))
    return StepMetrics(
        loss=value,
        cross_entropy=ce.item(),
        codebook_loss=out.codebook_loss.item() if out.codebook_loss is not None else 0.0,
        commitment_loss=out.commitment_loss.item() if out.commitment_loss is not None else 0.0,
        accuracy=acc,
        grad_norm=gnorm,
    )


def accuracy_from_logits(logits: np.ndarray, labels) -> float:
    return float(np.mean(np.asarray(logits).argmax(axis=1) == np.asarray(labels)))


def evaluate(model: Model, dataset: Dataset, split: str = "test", batch_size: int = 50,
             pad_or_trim_to: int | None = 16000) -> tuple[float, float]:
    """Accuracy and mean cross-entropy with dropout off."""
    correct = 0
    total = 0
    loss_sum = 0.0
    for x, y in batches(dataset, split, batch_size, shuffle=False, pad_or_trim_to=pad_or_trim_to):
        logits = model.forward(x, training=False).logits
        correct += int(np.sum(logits.data.argmax(axis=1) == y))
        loss_sum += ops.softmax_cross_entropy(logits, y).item() * len(y)
        total += len(y)
    return correct / total, loss_sum / total


def _digest(dataset: Dataset) -> str:
    import hashlib
    return hashlib.sha256(json.dumps(dataset.to_manifest(), sort_keys=True).encode()).hexdigest()[:16]


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def fit(model_config: ModelConfig, train_config: TrainConfig, dataset: Dataset,
        model: Model | None = None, log_fn: Callable[[str], None] | None = None) -> tuple[Model, RunReport]:
    """Train, keep the best-validation parameters, and score the test split.

    Early stopping triggers after ``patience`` evaluations without a strict
    improvement in validation accuracy.
    """
    tc = train_config
    if model is None:
        model = build(model_config)
        if model.codebook is not None and model_config.vq_init == "data":
            model.init_codebook_from(x for x, _ in batches(dataset, "train", tc.batch_size,
                                                            _epoch_seed(tc.seed, 0), tc.pad_or_trim_to))
    opt = make_optimizer(tc.optimizer, model.parameters(), tc.lr, betas=tc.betas, eps=tc.eps,
                         momentum=tc.momentum)
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 7919]))
    report = RunReport(model_config=model_config.to_dict(), train_config=tc.to_dict(),
                       manifest_digest=_digest(dataset))
    has_val = bool(dataset.splits.get("val"))
    best_state = None
    best_acc = -1.0
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(1, tc.epochs + 1):
        steps = [train_step(model, b, opt, rng, tc.clip_norm)
                 for b in batches(dataset, "train", tc.batch_size, _epoch_seed(tc.seed, epoch), tc.pad_or_trim_to)]
        row = {"epoch": epoch,
               "train_loss": float(np.mean([s.loss for s in steps])),
               "train_accuracy": float(np.mean([s.accuracy for s in steps]))}
        if has_val and epoch % tc.eval_every == 0:
            va, vl = evaluate(model, dataset, "val", pad_or_trim_to=tc.pad_or_trim_to)
            row.update(val_accuracy=va, val_loss=vl)
            if va > best_acc:
                best_acc, best_state, stale = va, model.state_dict(), 0
                report.best_epoch = epoch
            else:
                stale += 1
        report.epochs.append(row)
        msg = " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items())
        (log_fn or log.info)(msg)
        if tc.patience is not None and stale >= tc.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
        report.best_val_accuracy = best_acc
    else:
        report.best_epoch = len(report.epochs)
    if dataset.splits.get("test"):
        report.test_accuracy, report.test_loss = evaluate(model, dataset, "test", pad_or_trim_to=tc.pad_or_trim_to)
    report.wall_time = time.perf_counter() - t0
    if tc.checkpoint_dir:
        out = Path(tc.checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "model.ckpt", model)
        report.save(out / "report.json")
        report.save_csv(out / "report.csv")
    return model, report


# -- multi-run harnesses ------------------------------------------------------
def max_workers(jobs: int | None) -> int:
    cap = os.environ.get("COSCOV_NUM_THREADS")
    jobs = jobs or 1
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return max(1, jobs)


def _fit_accuracy(args) -> float:
    mc, tc, ds = args
    _, rep = fit(mc, tc, ds)
    return rep.test_accuracy if rep.test_accuracy is not None else rep.best_val_accuracy


def _fit_report(args) -> RunReport:
    mc, tc, ds = args
    return fit(mc, tc, ds)[1]


def run_cells(fn, cells: Sequence, jobs: int | None = 1) -> list:
    """Map ``fn`` over independent cells, in parallel processes when ``jobs > 1``."""
    n = max_workers(jobs)
    if n == 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(fn, cells))


def _with_seed(mc: ModelConfig, tc: TrainConfig, seed: int, **changes):
    d = mc.to_dict()
    d.update(changes, seed=seed)
    t = tc.to_dict()
    t.update(seed=seed, checkpoint_dir=None)
    return ModelConfig.from_dict(d), TrainConfig.from_dict(t)


@dataclass
class SweepResult:
    memory_sizes: list[int]
    embedding_counts: list[int]
    grid: np.ndarray  # [len(memory_sizes), len(embedding_counts)] max accuracy
    runs: np.ndarray  # [..., runs_per_cell]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["memory_size", *[f"k={k}" for k in self.embedding_counts]])
            for m, row in zip(self.memory_sizes, self.grid):
                w.writerow([m, *[f"{v:.4f}" for v in row]])


def sweep_memory_vq(base: ModelConfig, train: TrainConfig, dataset: Dataset, memory_sizes: Sequence[int],
                    embedding_counts: Sequence[int], runs_per_cell: int = 5, seeds: Sequence[int] | None = None,
                    jobs: int | None = 1) -> SweepResult:
    """Max test accuracy over seeded runs for every (memory size, codebook size) cell."""
    if not memory_sizes or not embedding_counts:
        raise ConfigError("sweep needs non-empty memory_sizes and embedding_counts")
    seeds = list(seeds) if seeds is not None else list(range(runs_per_cell))
    if len(seeds) != runs_per_cell:
        raise ConfigError(f"{len(seeds)} seeds given for {runs_per_cell} runs per cell")
    cells = []
    for m in memory_sizes:
        for k in embedding_counts:
            for s in seeds:
                mc, tc = _with_seed(base, train, s, kind="vqccm", memory=True, vq=True,
                                    memory_size=int(m), vq_k=int(k))
                cells.append((mc, tc, dataset))
    accs = np.array(run_cells(_fit_accuracy, cells, jobs), dtype=np.float64)
    runs = accs.reshape(len(memory_sizes), len(embedding_counts), runs_per_cell)
    return SweepResult(list(memory_sizes), list(embedding_counts), runs.max(axis=-1), runs)


@dataclass
class AblationResult:
    names: list[str]
    configs: list[ModelConfig]
    reports: list[list[RunReport]]
    task: str = "synthetic"

    def accuracies(self) -> np.ndarray:
        return np.array([[r.test_accuracy for r in reps] for reps in self.reports], dtype=np.float64)

    def table(self) -> str:
        acc = 100.0 * self.accuracies()
        cells = [f"{m:.1f} ± {s:.1f}" for m, s in zip(acc.mean(axis=1), acc.std(axis=1))]
        head = "| Classification Task | " + " | ".join(self.names) + " |"
        rule = "|" + "---|" * (len(self.names) + 1)
        return "\n".join([head, rule, f"| {self.task} | " + " | ".join(cells) + " |"])

    def save_csv(self, path) -> None:
        acc = self.accuracies()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "mean", "std", "max", *[f"run{i}" for i in range(acc.shape[1])]])
            for name, row in zip(self.names, acc):
                w.writerow([name, f"{row.mean():.4f}", f"{row.std():.4f}", f"{row.max():.4f}",
                            *[f"{v:.4f}" for v in row]])


def ablation_configs(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """The four variants; they differ from each other only in the ``memory``/``vq`` flags."""
    out = []
    for name, flags in ABLATION_VARIANTS:
        d = base.to_dict()
        d.update(kind="vqccm", **flags)
        out.append((name, ModelConfig.from_dict(d)))
    return out


def ablation(base: ModelConfig, train: TrainConfig, dataset: Dataset, runs: int = 1,
             seeds: Sequence[int] | None = None, jobs: int | None = 1, task: str = "synthetic") -> AblationResult:
    seeds = list(seeds) if seeds is not None else [train.seed + r for r in range(runs)]
    variants = ablation_configs(base)
    cells = []
    for _, cfg in variants:
        for s in seeds:
            mc, tc = _with_seed(cfg, train, s)
            cells.append((mc, tc, dataset))
    reports = run_cells(_fit_report, cells, jobs)
    grouped = [reports[i * len(seeds):(i + 1) * len(seeds)] for i in range(len(variants))]
    return AblationResult([n for n, _ in variants], [c for _, c in variants], grouped, task)
