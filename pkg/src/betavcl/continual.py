"""Sequential VCL training over a task order, single-task reference models,
and the learning-rate x beta grid search with per-k selection."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .bnn import HyperParams, NetworkArchitecture, VariationalPosterior, init_prior, train_task
from .data import SplitDataset, TaskDataset, TaskSequence
from .inference import sample_probs
from .metrics import AccuracyMatrix, MetricsReport, metrics_report
from .numerics import RandomStream

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = (0.0001, 0.0005, 0.001, 0.005, 0.01)
DEFAULT_BETAS = (0.001, 0.01, 0.05, 0.1, 0.5, 1.0)
DEFAULT_HIDDEN = (512, 512, 512)

# reference models draw from a stream-id range disjoint from grid cells
_REFERENCE_STREAM_BASE = 1 << 32


@dataclass(frozen=True)
class GridSpec:
    learning_rates: tuple = DEFAULT_LEARNING_RATES
    betas: tuple = DEFAULT_BETAS

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(float(v) for v in self.learning_rates))
        object.__setattr__(self, "betas", tuple(float(v) for v in self.betas))
        if not self.learning_rates or not self.betas:
            raise ValueError("grid axes must be non-empty")
        if min(self.learning_rates) <= 0:
            raise ValueError("learning rates must be positive")
        if min(self.betas) < 0 or max(self.betas) > 1:
            raise ValueError("betas must lie in [0, 1]")

    def cells(self) -> list[tuple[float, float]]:
        return [(lr, b) for lr in self.learning_rates for b in self.betas]

    @classmethod
    def single(cls, hyper: HyperParams) -> "GridSpec":
        return cls((hyper.learning_rate,), (hyper.beta,))


@dataclass
class ReferenceResult:
    a_star_test: float
    a_star_val: float
    learning_rate: float
    beta: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunRecord:
    order: str
    hyper: HyperParams
    seed: int
    stream_id: int
    val_accuracy: AccuracyMatrix
    test_accuracy: AccuracyMatrix
    references: list | None = None
    posterior: VariationalPosterior | None = None
    checkpoints: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.val_accuracy.K

    def val_metrics(self) -> MetricsReport | None:
        if self.references is None:
            return None
        return metrics_report(self.val_accuracy, [r.a_star_val for r in self.references])

    def test_metrics(self) -> MetricsReport | None:
        if self.references is None:
            return None
        return metrics_report(self.test_accuracy, [r.a_star_test for r in self.references])

    def to_dict(self) -> dict:
        vm, tm = self.val_metrics(), self.test_metrics()
        return {
            "order": self.order,
            "lr": self.hyper.learning_rate,
            "beta": self.hyper.beta,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "hyper": self.hyper.to_dict(),
            "val_accuracy": self.val_accuracy.to_list(),
            "test_accuracy": self.test_accuracy.to_list(),
            "a_star_val": None if self.references is None else [r.a_star_val for r in self.references],
            "a_star_test": None if self.references is None else [r.a_star_test for r in self.references],
            "val_metrics": None if vm is None else vm.to_dict(),
            "test_metrics": None if tm is None else tm.to_dict(),
        }


def evaluate_accuracy(post: VariationalPosterior, head: int, ds: TaskDataset, S: int, noise: RandomStream) -> float:
    """Accuracy of the argmax of the ``S``-draw mean prediction."""
    probs = sample_probs(post, head, ds.features, S, noise)
    pred = np.argmax(probs.mean(axis=1), axis=1)
    return float(np.mean(pred == ds.labels))


def architecture_for(seq: TaskSequence, hidden_sizes: Sequence[int]) -> NetworkArchitecture:
    return NetworkArchitecture(seq.n_features, tuple(hidden_sizes), tuple(seq.head_sizes))


def run_vcl(
    seq: TaskSequence,
    hyper: HyperParams,
    seed: int = 0,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    stream_id: int = 0,
    references: list | None = None,
    keep_checkpoints: bool = False,
) -> RunRecord:
    """Train heads ``1..K`` in order, each anchored at the previous posterior,
    filling row k of the validation and test accuracy matrices after task k."""
    root = RandomStream(seed, stream_id)
    post = init_prior(architecture_for(seq, hidden_sizes), hyper.prior_sigma)
    val_m, test_m = AccuracyMatrix(), AccuracyMatrix()
    checkpoints = []
    for k, task in enumerate(seq):
        logger.info("order %s: training task %d/%d (%s)", seq.label, k + 1, len(seq), task.name)
        post = train_task(post, task.train.features, task.train.labels, k, hyper, root.child(k, 0))
        if keep_checkpoints:
            checkpoints.append(post.copy())
        val_row, test_row = [], []
        for j in range(k + 1):
            val_row.append(evaluate_accuracy(post, j, seq[j].val, hyper.s_test, root.child(k, 1, j, 0)))
            test_row.append(evaluate_accuracy(post, j, seq[j].test, hyper.s_test, root.child(k, 1, j, 1)))
        val_m.append_row(val_row)
        test_m.append_row(test_row)
    return RunRecord(seq.label, hyper, seed, stream_id, val_m, test_m, references, post, checkpoints)


def _select_key(score: float, lr: float, beta: float):
    return (score, lr, beta)


def train_reference(
    task: SplitDataset,
    grid: GridSpec,
    seed: int = 0,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    base_hyper: HyperParams | None = None,
    task_id: int = 0,
) -> ReferenceResult:
    """Best single-task model over the grid, selected on validation accuracy."""
    base_hyper = base_hyper or HyperParams()
    arch = NetworkArchitecture(task.n_features, tuple(hidden_sizes), (task.num_classes,))
    root = RandomStream(seed, _REFERENCE_STREAM_BASE + task_id)
    best = None
    for c, (lr, beta) in enumerate(grid.cells()):
        hyper = replace(base_hyper, learning_rate=lr, beta=beta)
        stream = root.child(c)
        post = train_task(init_prior(arch, hyper.prior_sigma), task.train.features, task.train.labels, 0, hyper, stream.child(0))
        val = evaluate_accuracy(post, 0, task.val, hyper.s_test, stream.child(1))
        test = evaluate_accuracy(post, 0, task.test, hyper.s_test, stream.child(2))
        key = _select_key(-val, lr, beta)
        if best is None or key < best[0]:
            best = (key, ReferenceResult(test, val, lr, beta))
    return best[1]


@dataclass
class GridResult:
    order: str
    grid: GridSpec
    seed: int
    cells: list
    best: list

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "seed": self.seed,
            "grid": {"learning_rates": list(self.grid.learning_rates), "betas": list(self.grid.betas)},
            "cells": [c.to_dict() for c in self.cells],
            "best": self.best,
        }


def select_best(cells: Sequence[RunRecord]) -> list[dict]:
    """Per k, the cell minimizing the validation combined metric; ties go to
    the lower learning rate, then the lower beta."""
    K = cells[0].K
    reports = [c.val_metrics() for c in cells]
    rows = []
    for k in range(K):
        i = min(
            range(len(cells)),
            key=lambda i: _select_key(reports[i].combined[k], cells[i].hyper.learning_rate, cells[i].hyper.beta),
        )
        r = reports[i]
        rows.append(
            {
                "k": k + 1,
                "A": r.A[k],
                "F": r.F[k],
                "I": r.I[k],
                "combined": r.combined[k],
                "lr": cells[i].hyper.learning_rate,
                "beta": cells[i].hyper.beta,
                "cell": i,
            }
        )
    return rows


def compute_references(
    seq: TaskSequence,
    grid: GridSpec,
    seed: int,
    hidden_sizes: Sequence[int],
    base_hyper: HyperParams,
    task_ids: Sequence[int] | None = None,
    threads: int = 1,
) -> list[ReferenceResult]:
    task_ids = list(range(len(seq))) if task_ids is None else list(task_ids)

    def one(i):
        return train_reference(seq[i], grid, seed, hidden_sizes, base_hyper, task_ids[i])

    return _map(one, range(len(seq)), threads)


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def grid_search(
    seq: TaskSequence,
    grid: GridSpec,
    seed: int = 0,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    base_hyper: HyperParams | None = None,
    references: list | None = None,
    reference_grid: GridSpec | None = None,
    task_ids: Sequence[int] | None = None,
    threads: int = 1,
) -> GridResult:
    """Run the full sequence once per (lr, beta) cell and pick the best cell per k.

    Cell ``i`` draws from stream id ``i`` so results do not depend on
    ``threads``.
    """
    base_hyper = base_hyper or HyperParams()
    if references is None:
        references = compute_references(seq, reference_grid or grid, seed, hidden_sizes, base_hyper, task_ids, threads)

    def one(item):
        i, (lr, beta) = item
        hyper = replace(base_hyper, learning_rate=lr, beta=beta)
        rec = run_vcl(seq, hyper, seed, hidden_sizes, stream_id=i, references=references)
        rec.posterior = None
        return rec

    cells = _map(one, enumerate(grid.cells()), threads)
    return GridResult(seq.label, grid, seed, cells, select_best(cells))


CELL_CSV_COLUMNS = ("order", "seed", "lr", "beta", "split", "k", "A", "F", "I", "combined", "a_kk", "a_star")


def cell_rows(rec: RunRecord) -> list[dict]:
    """Flatten one run into per-(split, k) rows for plotting."""
    rows = []
    for split, report, m in (("val", rec.val_metrics(), rec.val_accuracy), ("test", rec.test_metrics(), rec.test_accuracy)):
        if report is None:
            continue
        for k in range(rec.K):
            rows.append(
                {
                    "order": rec.order,
                    "seed": rec.seed,
                    "lr": rec.hyper.learning_rate,
                    "beta": rec.hyper.beta,
                    "split": split,
                    "k": k + 1,
                    "A": report.A[k],
                    "F": report.F[k],
                    "I": report.I[k],
                    "combined": report.combined[k],
                    "a_kk": m.a(k + 1, k + 1),
                    "a_star": report.a_star[k],
                }
            )
    return rows


def write_rows_csv(rows: Sequence[dict], path, columns: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
