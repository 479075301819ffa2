"""Monte Carlo predictive distribution, classification and uncertainty scores."""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bnn import VariationalPosterior, draw_noise, _forward
from .numerics import RandomStream, softmax

UNCERTAINTY_COLUMNS = (
    "sample_id",
    "task",
    "k_trained",
    "true_label",
    "predicted",
    "correct",
    "entropy_nats",
    "mutual_information_nats",
)

# rows per forward chunk; fixed so that noise assignment never depends on input size
_CHUNK_ROWS = 8192


class UntrainedHeadWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PredictiveDistribution:
    per_sample_probs: np.ndarray
    mean_probs: np.ndarray

    @classmethod
    def from_samples(cls, probs) -> "PredictiveDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise ValueError("per-sample probabilities must be an S x C matrix with S >= 1")
        return cls(probs, probs.mean(axis=0))

    @property
    def n_samples(self) -> int:
        return self.per_sample_probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.per_sample_probs.shape[1]


@dataclass(frozen=True)
class UncertaintyRecord:
    sample_id: int
    task: str
    k_trained: int
    true_label: int
    predicted: int
    correct: bool
    entropy: float
    mutual_information: float
    head_trained: bool = True


def _check_query(post: VariationalPosterior, head: int, S: int) -> None:
    post._check_head(head)
    if S < 1:
        raise ValueError("need at least one Monte Carlo sample")
    if head not in post.trained_heads:
        warnings.warn(
            f"head {head} has not been trained; predictions come from the prior",
            UntrainedHeadWarning,
            stacklevel=3,
        )


def sample_probs(post: VariationalPosterior, head: int, X, S: int, noise: RandomStream) -> np.ndarray:
    """Softmax outputs for ``S`` independent draws, shape ``(N, S, C)``."""
    _check_query(post, head, S)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[0]
    blocks = post.blocks(head)
    per_chunk = max(1, _CHUNK_ROWS // S)
    out = []
    for start in range(0, n, per_chunk):
        xs = X[start : start + per_chunk]
        rows = xs.shape[0] * S
        eps = draw_noise(post.architecture, head, rows, noise)
        logits, _ = _forward(blocks, np.repeat(xs, S, axis=0), eps)
        out.append(softmax(logits).reshape(xs.shape[0], S, -1))
    return np.concatenate(out, axis=0)


def predictive_posterior(post: VariationalPosterior, head: int, x, S: int, noise: RandomStream) -> PredictiveDistribution:
    x = np.asarray(x, dtype=np.float64).ravel()
    return PredictiveDistribution.from_samples(sample_probs(post, head, x[None, :], S, noise)[0])


def classify(pred: PredictiveDistribution) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(pred.mean_probs))


def entropy(p, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats with ``0 * log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=axis)


def predictive_entropy(pred: PredictiveDistribution) -> float:
    return float(entropy(pred.mean_probs))


def mutual_information(pred: PredictiveDistribution) -> float:
    """Entropy of the mean prediction minus the mean per-draw entropy."""
    return float(entropy(pred.mean_probs) - np.mean(entropy(pred.per_sample_probs, axis=1)))


def uncertainty_scores(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized over an ``(N, S, C)`` stack: predictions, entropy, MI."""
    mean = probs.mean(axis=1)
    h = entropy(mean, axis=1)
    mi = h - entropy(probs, axis=2).mean(axis=1)
    return np.argmax(mean, axis=1), h, mi


def uncertainty_report(post: VariationalPosterior, head: int, testset, S: int, noise: RandomStream, task: str | None = None) -> list[UncertaintyRecord]:
    """One record per test sample: prediction, correctness, entropy and MI."""
    probs = sample_probs(post, head, testset.features, S, noise)
    pred, h, mi = uncertainty_scores(probs)
    name = task if task is not None else testset.name
    k_trained = len(post.trained_heads)
    trained = head in post.trained_heads
    return [
        UncertaintyRecord(
            sample_id=i,
            task=name,
            k_trained=k_trained,
            true_label=int(testset.labels[i]),
            predicted=int(pred[i]),
            correct=bool(pred[i] == testset.labels[i]),
            entropy=float(h[i]),
            mutual_information=float(mi[i]),
            head_trained=trained,
        )
        for i in range(testset.n_samples)
    ]


def gate_summary(records, max_entropy: float | None = None, max_mi: float | None = None) -> dict:
    """Accept a prediction when every given score is strictly below its threshold."""
    accepted = [
        r
        for r in records
        if (max_entropy is None or r.entropy < max_entropy)
        and (max_mi is None or r.mutual_information < max_mi)
    ]
    n = len(records)

    def acc(rs):
        return sum(r.correct for r in rs) / len(rs) if rs else None

    return {
        "max_entropy": max_entropy,
        "max_mutual_information": max_mi,
        "n_total": n,
        "n_accepted": len(accepted),
        "n_rejected": n - len(accepted),
        "accuracy_all": acc(records),
        "accuracy_accepted": acc(accepted),
    }


def write_uncertainty_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNCERTAINTY_COLUMNS)
        for r in records:
            w.writerow([r.sample_id, r.task, r.k_trained, r.true_label, r.predicted, int(r.correct), repr(r.entropy), repr(r.mutual_information)])


def read_uncertainty_csv(path) -> list[UncertaintyRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(UNCERTAINTY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"uncertainty CSV lacks columns: {sorted(missing)}")
        out = []
        for i, row in enumerate(reader):
            try:
                out.append(
                    UncertaintyRecord(
                        sample_id=int(row["sample_id"]),
                        task=row["task"],
                        k_trained=int(row["k_trained"]),
                        true_label=int(row["true_label"]),
                        predicted=int(row["predicted"]),
                        correct=row["correct"].strip().lower() in ("1", "true"),
                        entropy=float(row["entropy_nats"]),
                        mutual_information=float(row["mutual_information_nats"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"malformed uncertainty CSV at row {i}: {exc}") from None
    return out


def record_to_dict(r: UncertaintyRecord) -> dict:
    return asdict(r)
