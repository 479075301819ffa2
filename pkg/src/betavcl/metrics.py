"""Continual-learning metrics computed from a lower-triangular accuracy matrix.

Rows and columns are 1-based in the public API to match the usual notation:
``a(k, j)`` is the accuracy on task ``j`` after training through task ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AccuracyMatrix:
    """Accuracies ``a_{k,j}`` for ``1 <= j <= k <= K``, grown one row at a time."""

    def __init__(self, rows=()):
        self._rows: list[np.ndarray] = []
        for row in rows:
            self.append_row(row)

    def append_row(self, row) -> None:
        row = np.asarray(row, dtype=np.float64).ravel()
        k = len(self._rows) + 1
        if row.size != k:
            raise ValueError(f"row {k} must have {k} entries, got {row.size}")
        if np.any(~np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            raise ValueError("accuracies must lie in [0, 1]")
        row.setflags(write=False)
        self._rows.append(row)

    @property
    def K(self) -> int:
        return len(self._rows)

    def row(self, k: int) -> np.ndarray:
        self._check_k(k)
        return self._rows[k - 1]

    def a(self, k: int, j: int) -> float:
        self._check_k(k)
        if not 1 <= j <= k:
            raise IndexError(f"a[{k},{j}] is outside the lower triangle")
        return float(self._rows[k - 1][j - 1])

    def _check_k(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise IndexError(f"k={k} out of range 1..{self.K}")

    def to_list(self) -> list[list[float]]:
        return [r.tolist() for r in self._rows]

    def to_dense(self) -> np.ndarray:
        """K x K array with NaN above the diagonal."""
        out = np.full((self.K, self.K), np.nan)
        for i, r in enumerate(self._rows):
            out[i, : i + 1] = r
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, AccuracyMatrix) and self.to_list() == other.to_list()

    def __repr__(self) -> str:
        return f"AccuracyMatrix({self.to_list()})"


def average_accuracy(m: AccuracyMatrix, k: int) -> float:
    return float(np.mean(m.row(k)))


def forget(m: AccuracyMatrix, k: int) -> tuple[np.ndarray, float]:
    """Per-task forgetting ``f_j^k`` for ``j < k`` and their average ``F_k``.

    ``F_k`` divides the ``k - 1`` terms by ``k``; ``F_1`` is 0.
    """
    m._check_k(k)
    if k == 1:
        return np.zeros(0), 0.0
    f = np.array([max(m.a(l, j) for l in range(j, k)) - m.a(k, j) for j in range(1, k)])
    return f, float(np.sum(f) / k)


def aggregate_forget(m: AccuracyMatrix) -> float:
    if m.K < 1:
        raise ValueError("empty accuracy matrix")
    return float(np.mean([forget(m, k)[1] for k in range(1, m.K + 1)]))


def intransigence(a_star: float, m: AccuracyMatrix, k: int) -> float:
    return float(a_star) - m.a(k, k)


def combined_metric(A_k: float, F_k: float, I_k: float) -> float:
    """Selection score ``(1 - A_k) + F_k + I_k``; lower is better."""
    return (1.0 - A_k) + F_k + I_k


@dataclass(frozen=True)
class MetricsReport:
    A: tuple
    F: tuple
    I: tuple
    combined: tuple
    aggregate_F: float
    a_star: tuple

    def rows(self) -> list[dict]:
        return [
            {"k": k + 1, "A": self.A[k], "F": self.F[k], "I": self.I[k], "combined": self.combined[k]}
            for k in range(len(self.A))
        ]

    def to_dict(self) -> dict:
        return {
            "A": list(self.A),
            "F": list(self.F),
            "I": list(self.I),
            "combined": list(self.combined),
            "aggregate_F": self.aggregate_F,
            "a_star": list(self.a_star),
        }


def metrics_report(m: AccuracyMatrix, a_star) -> MetricsReport:
    a_star = [float(a) for a in a_star]
    if len(a_star) < m.K:
        raise ValueError(f"need {m.K} reference accuracies, got {len(a_star)}")
    A, F, I, comb = [], [], [], []
    for k in range(1, m.K + 1):
        A.append(average_accuracy(m, k))
        F.append(forget(m, k)[1])
        I.append(intransigence(a_star[k - 1], m, k))
        comb.append(combined_metric(A[-1], F[-1], I[-1]))
    return MetricsReport(tuple(A), tuple(F), tuple(I), tuple(comb), aggregate_forget(m), tuple(a_star[: m.K]))
