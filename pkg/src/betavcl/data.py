"""Task datasets: CSV ingestion, standardization, stratified splitting,
synthetic task generation and task sequencing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import RandomStream


class DataError(Exception):
    """Raised for unreadable or inconsistent task data."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column


class StratificationError(DataError):
    pass


@dataclass(frozen=True)
class TaskDataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if y.shape != (X.shape[0],):
            raise DataError("labels must have one entry per feature row")
        if X.shape[0] < 1:
            raise DataError(f"task {self.name!r} has no samples")
        if not np.all(np.isfinite(X)):
            raise DataError(f"task {self.name!r} has non-finite features")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise DataError(f"task {self.name!r} has labels outside [0, {self.num_classes})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "TaskDataset":
        return TaskDataset(self.name, self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class SplitDataset:
    train: TaskDataset
    val: TaskDataset
    test: TaskDataset
    split_seed: int = 0

    @property
    def name(self) -> str:
        return self.train.name

    @property
    def num_classes(self) -> int:
        return self.train.num_classes

    @property
    def n_features(self) -> int:
        return self.train.n_features


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray

    def inverse(self, X) -> np.ndarray:
        return np.asarray(X) * self.std + self.mean


@dataclass(frozen=True)
class SyntheticTaskSpec:
    num_classes: int
    samples_per_class: int
    feature_dim: int
    cluster_separation: float = 4.0
    cluster_scale: float = 1.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        for f in ("num_classes", "samples_per_class", "feature_dim"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.cluster_separation < 0:
            raise ValueError("cluster_separation must be >= 0")
        if not self.cluster_scale > 0:
            raise ValueError("cluster_scale must be > 0")


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple
    label: str = ""

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise DataError("a task sequence needs at least one task")
        dims = {t.n_features for t in self.tasks}
        if len(dims) != 1:
            raise DataError(f"feature dimensions differ across tasks: {sorted(dims)}")
        if not self.label:
            object.__setattr__(self, "label", "-".join(t.name for t in self.tasks))

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i) -> SplitDataset:
        return self.tasks[i]

    @property
    def n_features(self) -> int:
        return self.tasks[0].n_features

    @property
    def head_sizes(self) -> list[int]:
        return [t.num_classes for t in self.tasks]


def load_dataset(path, name: str | None = None, label_column: str = "label") -> TaskDataset:
    """Read a comma-separated file with a header and one integer label column.

    All other columns are parsed as features. ``num_classes`` is one more than
    the largest label, so sparse label sets are allowed.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ParseError(f"no {label_column!r} column in header")
        label_idx = header.index(label_column)
        feature_idx = [i for i in range(len(header)) if i != label_idx]
        if not feature_idx:
            raise ParseError("no feature columns")
        rows, labels = [], []
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=r)
            raw = row[label_idx].strip()
            try:
                lab = int(raw)
            except ValueError:
                raise ParseError(f"label {raw!r} is not an integer", row=r, column=label_column) from None
            if lab < 0:
                raise ParseError(f"negative label {lab}", row=r, column=label_column)
            vals = []
            for i in feature_idx:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise ParseError(f"non-numeric value {row[i]!r}", row=r, column=header[i]) from None
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise ParseError("file has a header but no data rows")
    y = np.array(labels, dtype=np.int64)
    return TaskDataset(name or path.stem, np.array(rows, dtype=np.float64), y, int(y.max()) + 1)


def save_dataset(ds: TaskDataset, path, label_column: str = "label") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(ds.n_features)] + [label_column])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def fit_standardization(train: TaskDataset) -> StandardizationParams:
    if train.n_samples < 2:
        raise ValueError("standardization needs at least two training samples")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return StandardizationParams(mean, std)


def apply_standardization(params: StandardizationParams, ds: TaskDataset) -> TaskDataset:
    if ds.n_features != params.mean.shape[0]:
        raise DataError(
            f"dimension mismatch: data has {ds.n_features} features, parameters {params.mean.shape[0]}"
        )
    return TaskDataset(ds.name, (ds.features - params.mean) / params.std, ds.labels, ds.num_classes)


def standardize_split(split: SplitDataset) -> tuple[SplitDataset, StandardizationParams]:
    """Fit on the training part only and apply to all three parts."""
    params = fit_standardization(split.train)
    out = SplitDataset(
        apply_standardization(params, split.train),
        apply_standardization(params, split.val),
        apply_standardization(params, split.test),
        split.split_seed,
    )
    return out, params


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    # largest-remainder rounding keeps each part within one sample of n * ratio
    raw = [n * r for r in ratios]
    counts = [int(np.floor(v)) for v in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(ds: TaskDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitDataset:
    """Stratified random train/val/test partition, deterministic in ``seed``."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if ds.n_samples < 10:
        raise ValueError("splitting needs at least 10 samples")
    rng = RandomStream(seed, 0).generator
    # per-class allocation, then rebalance totals so each split is within one of n * ratio
    classes = [c for c in range(ds.num_classes) if np.any(ds.labels == c)]
    parts: list[list[int]] = [[], [], []]
    per_class = {}
    for c in classes:
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < 3:
            raise StratificationError(
                f"class {c} has {idx.size} sample(s); stratified splitting needs at least 3"
            )
        per_class[c] = rng.permutation(idx)
    totals = _allocate(ds.n_samples, ratios)
    alloc = {c: _allocate(per_class[c].size, ratios) for c in classes}
    for c in classes:
        for j in (1, 2):
            if alloc[c][j] == 0:
                alloc[c][j] = 1
                alloc[c][0] -= 1
    for j in (1, 2):
        # move single samples between train and split j until totals match
        while sum(alloc[c][j] for c in classes) > totals[j]:
            c = max((c for c in classes if alloc[c][j] > 1), key=lambda c: (alloc[c][j] - per_class[c].size * ratios[j], -c), default=None)
            if c is None:
                break
            alloc[c][j] -= 1
            alloc[c][0] += 1
        while sum(alloc[c][j] for c in classes) < totals[j]:
            c = max((c for c in classes if alloc[c][0] > 1), key=lambda c: (per_class[c].size * ratios[j] - alloc[c][j], -c))
            alloc[c][j] += 1
            alloc[c][0] -= 1
    for c in classes:
        idx = per_class[c]
        n_tr, n_va, _ = alloc[c]
        parts[0].extend(idx[:n_tr])
        parts[1].extend(idx[n_tr : n_tr + n_va])
        parts[2].extend(idx[n_tr + n_va :])
    subsets = [ds.subset(np.sort(np.array(p, dtype=np.int64))) for p in parts]
    return SplitDataset(*subsets, split_seed=seed)


def _class_centers(num_classes: int, dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        if num_classes == 1:
            return np.zeros((1, 1))
        return np.linspace(-radius, radius, num_classes)[:, None]
    if num_classes - 1 <= dim:
        # regular simplex: centered standard basis, expressed in an orthonormal basis of its span
        simplex = np.eye(num_classes) - 1.0 / num_classes
        if num_classes == 1:
            frame = np.zeros((1, dim))
        else:
            u, _, _ = np.linalg.svd(simplex, full_matrices=False)
            coords = simplex @ u[:, : num_classes - 1]
            coords /= np.linalg.norm(coords, axis=1, keepdims=True)
            frame = np.zeros((num_classes, dim))
            frame[:, : num_classes - 1] = coords
    else:
        frame = rng.standard_normal((num_classes, dim))
        frame /= np.linalg.norm(frame, axis=1, keepdims=True)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q *= np.sign(np.diag(r))
    return radius * frame @ q.T


def gen_synthetic_task(spec: SyntheticTaskSpec) -> TaskDataset:
    """Gaussian clusters whose centers sit on a sphere of radius
    ``cluster_separation``, maximally spread and randomly rotated."""
    rng = RandomStream(spec.seed, 0).generator
    centers = _class_centers(spec.num_classes, spec.feature_dim, spec.cluster_separation, rng)
    n = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    X = centers[labels] + spec.cluster_scale * rng.standard_normal((n, spec.feature_dim))
    return TaskDataset(spec.name, X, labels, spec.num_classes)


def make_sequence(datasets: Sequence[SplitDataset], order: Sequence[int] | None = None, label: str = "") -> TaskSequence:
    if order is None:
        order = list(range(len(datasets)))
    order = [int(i) for i in order]
    if sorted(order) != list(range(len(datasets))):
        raise DataError(f"order {order} is not a permutation of 0..{len(datasets) - 1}")
    return TaskSequence(tuple(datasets[i] for i in order), label)
