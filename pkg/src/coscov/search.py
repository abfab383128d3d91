"""Greedy per-layer architecture search over filter lengths and pool windows.

Layers are visited in order. For each one every candidate is measured with
the other layers held at their current values, the best candidate (max
accuracy over the runs, ties toward the smaller value) is fixed, and the
search moves on. Filter lengths are searched first, then pool windows.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .data import Dataset
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig, fit

log = logging.getLogger(__name__)

DEFAULT_FILTER_CANDIDATES = [3, 6, 12, 25, 50, 100, 200, 300]
DEFAULT_POOL_CANDIDATES = [2, 4, 6, 8, 10, 20]

# measure(config, stage, layer_index, candidate, run) -> accuracy
Measure = Callable[[ModelConfig, str, int, int, int], float]


def backbone(num_classes: int = 10, **kw) -> ModelConfig:
    """Starting network: five layers, filter length 12, pool 2, dropout 0.5."""
    return ModelConfig(kind="coscov", hidden_channels=[32, 64, 128, 256], filter_lens=[12] * 5,
                       pools=[2] * 4, num_classes=num_classes, dropout=0.5, **kw)


@dataclass
class SearchSpace:
    backbone: ModelConfig = field(default_factory=backbone)
    filter_candidates: list[list[int]] | list[int] = field(default_factory=lambda: list(DEFAULT_FILTER_CANDIDATES))
    pool_candidates: list[list[int]] | list[int] = field(default_factory=lambda: list(DEFAULT_POOL_CANDIDATES))
    runs: int = 5

    def per_layer(self, stage: str) -> list[list[int]]:
        cands = self.filter_candidates if stage == "filters" else self.pool_candidates
        n = self.backbone.num_layers if stage == "filters" else len(self.backbone.pools)
        if cands and not isinstance(cands[0], (list, tuple)):
            cands = [list(cands)] * n
        if len(cands) != n or any(len(c) == 0 for c in cands):
            raise ConfigError(f"{stage}: need {n} non-empty candidate lists")
        return [sorted(int(v) for v in c) for c in cands]


@dataclass
class StageResult:
    stage: str
    candidates: list[list[int]]
    table: dict[int, list[float | None]]  # candidate -> per-layer accuracy (None = not run / failed)
    chosen: list[int]
    best_accuracy: list[float | None]

    def save_csv(self, path) -> None:
        write_accuracy_table(path, self.table, len(self.chosen),
                             "Filter Size" if self.stage == "filters" else "Pool Size")


@dataclass
class SearchResult:
    stages: list[StageResult]
    config: ModelConfig
    failed: list[tuple[str, int, int, str]]

    @property
    def filter_lens(self) -> list[int]:
        return list(self.config.filter_lens)

    @property
    def pools(self) -> list[int]:
        return list(self.config.pools)


def _with(config: ModelConfig, stage: str, layer: int, value: int) -> ModelConfig:
    d = config.to_dict()
    key = "filter_lens" if stage == "filters" else "pools"
    d[key] = list(d[key])
    d[key][layer] = value
    return ModelConfig.from_dict(d)


def run_stage(space: SearchSpace, config: ModelConfig, stage: str, measure: Measure,
              failed: list) -> tuple[ModelConfig, StageResult]:
    cands = space.per_layer(stage)
    all_values = sorted({v for c in cands for v in c})
    table: dict[int, list[float | None]] = {v: [None] * len(cands) for v in all_values}
    best_acc: list[float | None] = []
    chosen = []
    for layer, layer_cands in enumerate(cands):
        best_v, best = None, -math.inf
        for v in layer_cands:
            try:
                trial = _with(config, stage, layer, v)
                acc = max(float(measure(trial, stage, layer, v, r)) for r in range(space.runs))
            except Exception as exc:  # a failed cell must not stop the search
                log.warning("%s layer %d candidate %d failed: %s", stage, layer + 1, v, exc)
                failed.append((stage, layer, v, str(exc)))
                continue
            table[v][layer] = acc
            if acc > best:  # candidates are ascending, so ties keep the smaller value
                best_v, best = v, acc
        if best_v is not None:
            config = _with(config, stage, layer, best_v)
        current = (config.filter_lens if stage == "filters" else config.pools)[layer]
        chosen.append(current)
        best_acc.append(best if best_v is not None else None)
    return config, StageResult(stage, cands, table, chosen, best_acc)


def greedy_search(space: SearchSpace, measure: Measure, stages: Sequence[str] = ("filters", "pools")) -> SearchResult:
    config = space.backbone
    failed: list = []
    results = []
    for stage in stages:
        if stage not in ("filters", "pools"):
            raise ConfigError(f"unknown stage {stage!r}")
        config, res = run_stage(space, config, stage, measure, failed)
        results.append(res)
    return SearchResult(results, config, failed)


def training_measure(dataset: Dataset, train: TrainConfig) -> Measure:
    """Measure a candidate by training it; run ``r`` uses seed ``train.seed + r``."""
    def measure(config, stage, layer, candidate, run):
        d = config.to_dict()
        d["seed"] = train.seed + run
        t = train.to_dict()
        t.update(seed=train.seed + run, checkpoint_dir=None)
        _, rep = fit(ModelConfig.from_dict(d), TrainConfig.from_dict(t), dataset)
        return rep.test_accuracy if rep.test_accuracy is not None else rep.best_val_accuracy
    return measure


class MockOracle:
    """Accuracy lookup tables standing in for training, keyed by stage."""

    def __init__(self, filters: dict[int, list[float | None]] | None = None,
                 pools: dict[int, list[float | None]] | None = None):
        self.tables = {"filters": filters or {}, "pools": pools or {}}

    def __call__(self, config, stage, layer, candidate, run) -> float:
        row = self.tables[stage].get(candidate)
        if row is None or layer >= len(row) or row[layer] is None:
            raise KeyError(f"no {stage} accuracy for candidate {candidate} at layer {layer + 1}")
        return row[layer]

    def candidates(self, stage: str) -> list[int]:
        return sorted(self.tables[stage])


def read_accuracy_table(path) -> dict[int, list[float | None]]:
    """Parse a ``size, Layer 1, Layer 2, ...`` CSV; blank cells become None."""
    out = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        if not row or not row[0].strip():
            continue
        out[int(float(row[0]))] = [float(c) if c.strip() else None for c in row[1:]]
    return out


def write_accuracy_table(path, table: dict[int, list[float | None]], n_layers: int, label: str = "Size") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([label, *[f"Layer {i + 1}" for i in range(n_layers)]])
        for v in sorted(table):
            w.writerow([v, *["" if a is None else f"{a:.4f}" for a in table[v]]])
