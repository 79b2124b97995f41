"""Desk-scale segmentation comparison: IMEX network vs. the matched explicit network.

Results are cached per (mode, seed) in a JSON file keyed by the full
experiment configuration, so an interrupted sweep resumes where it stopped
and a finished sweep is re-read instantly.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .layers import NetworkSpec, StageSpec, parameter_count
from .qtips import generate_split
from .train import class_weights, evaluate, train

log = logging.getLogger(__name__)

MODES_COMPARED = ("imex", "explicit")


@dataclass(frozen=True)
class TrendConfig:
    n_train: int = 256
    n_val: int = 32
    size: int = 64
    widths: tuple = (16, 32, 64)
    layers: int = 4
    h: float = 1.0
    epochs: int = 40
    lr: float = 0.001
    batch: int = 8
    seeds: tuple = (0, 1, 2)
    data_seed: int = 0
    init: str = "symmetric"

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def network(self, mode: str, seed: int) -> NetworkSpec:
        stages = [StageSpec(w, self.layers, mode, self.h, 3) for w in self.widths]
        return NetworkSpec(stages, input_channels=1, n_classes=4, init=self.init, seed=seed,
                           size=self.size)


@dataclass
class RunResult:
    mode: str
    seed: int
    parameters: int
    val_loss: float
    val_miou: float
    val_accuracy: float
    seconds: float
    history: list = field(default_factory=list)  # [epoch, split, loss, miou, accuracy]


@dataclass
class TrendSummary:
    config: TrendConfig
    runs: dict  # "mode/seed" -> RunResult

    def result(self, mode: str, seed: int) -> RunResult:
        return self.runs[f"{mode}/{seed}"]

    def mean_miou(self, mode: str) -> float:
        return float(np.mean([self.result(mode, s).val_miou for s in self.config.seeds]))

    @property
    def miou_gap(self) -> float:
        return self.mean_miou("imex") - self.mean_miou("explicit")

    @property
    def loss_wins(self) -> int:
        """Seeds on which the IMEX validation loss is below the explicit one."""
        return sum(self.result("imex", s).val_loss < self.result("explicit", s).val_loss
                   for s in self.config.seeds)

    def table_rows(self) -> list:
        rows = []
        for mode in MODES_COMPARED:
            res = [self.result(mode, s) for s in self.config.seeds]
            rows.append((mode, res[0].parameters, float(np.mean([r.val_miou for r in res])),
                         float(np.mean([r.val_loss for r in res])),
                         float(np.mean([r.val_accuracy for r in res]))))
        return rows


def _load_cache(path: Path, key: str) -> dict:
    if path.exists():
        data = json.loads(path.read_text())
        if data.get("key") == key:
            return data.get("runs", {})
    return {}


def _save_cache(path: Path, cfg: TrendConfig, runs: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"key": cfg.key(), "config": asdict(cfg), "runs": runs}
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=1))
    tmp.replace(path)


def run_one(cfg: TrendConfig, mode: str, seed: int, ds_train=None, ds_val=None) -> RunResult:
    if ds_train is None:
        ds_train, ds_val = generate_split(cfg.n_train, cfg.n_val, cfg.data_seed, cfg.size)
    net = cfg.network(mode, seed)
    weights = class_weights(ds_train)
    t0 = time.process_time()
    params, history = train(net, ds_train, ds_val, cfg.epochs, cfg.lr, cfg.batch, seed,
                            weights=weights,
                            callback=lambda r: log.info("%s seed %d: %s", mode, seed, r))
    final = evaluate(net, params, ds_val, weights, cfg.batch)
    return RunResult(mode, seed, parameter_count(net), final.loss, final.miou, final.accuracy,
                     time.process_time() - t0,
                     [[r.epoch, r.split, r.loss, r.miou, r.accuracy] for r in history])


def run_trend(cfg: TrendConfig, cache: Optional[Path] = None, compute_missing: bool = True) -> TrendSummary:
    """Train every (mode, seed) pair not already cached and return the summary.

    With ``compute_missing=False`` a ``LookupError`` is raised when the cache
    is incomplete.
    """
    runs = _load_cache(Path(cache), cfg.key()) if cache else {}
    missing = [(m, s) for s in cfg.seeds for m in MODES_COMPARED if f"{m}/{s}" not in runs]
    if missing and not compute_missing:
        raise LookupError(f"{len(missing)} runs missing from cache: {missing}")
    if missing:
        ds_train, ds_val = generate_split(cfg.n_train, cfg.n_val, cfg.data_seed, cfg.size)
        for mode, seed in missing:
            res = run_one(cfg, mode, seed, ds_train, ds_val)
            runs[f"{mode}/{seed}"] = asdict(res)
            log.info("finished %s seed %d: val loss %.4f miou %.4f (%.0f s)", mode, seed,
                     res.val_loss, res.val_miou, res.seconds)
            if cache:
                _save_cache(Path(cache), cfg, runs)
    return TrendSummary(cfg, {k: RunResult(**v) for k, v in runs.items()})
