"""Nonparametric tests for comparing uncertainty of correct and wrong predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import chi2_sf, kolmogorov_sf, standard_normal_cdf


class DegenerateInputError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    df: int | None = None
    group_sizes: tuple = ()
    method: str = ""
    note: str = ""

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "df": self.df,
            "group_sizes": list(self.group_sizes),
            "method": self.method,
            "note": self.note,
        }


def ks_statistic(sample) -> float:
    """Two-sided distance between the empirical CDF and a normal fitted by
    sample mean and standard deviation (ddof=1)."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    s = x.std(ddof=1)
    if not s > 0:
        raise DegenerateInputError("sample has zero variance")
    m = x.mean()
    cdf = np.array([standard_normal_cdf((v - m) / s) for v in x])
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def ks_normality(sample) -> TestResult:
    """Kolmogorov-Smirnov test against a normal with estimated parameters.

    The p-value is the asymptotic Kolmogorov tail at ``sqrt(n) * D`` and is
    not Lilliefors-corrected, so it is anti-conservative.
    """
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size < 8:
        raise InsufficientDataError(f"normality test needs at least 8 values, got {x.size}")
    d = ks_statistic(x)
    return TestResult(
        statistic=d,
        p_value=kolmogorov_sf(math.sqrt(x.size) * d),
        group_sizes=(x.size,),
        method="kolmogorov-smirnov normality",
        note="parameters estimated from the sample; asymptotic p-value without Lilliefors correction",
    )


def midranks(values) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and the sizes of each tie group."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    ties = []
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.array(ties, dtype=np.float64)


def kruskal_wallis(group_a, group_b) -> TestResult:
    """Two-group Kruskal-Wallis H test with the usual tie correction and a
    chi-squared (df=1) p-value."""
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("both groups must be non-empty")
    n = a.size + b.size
    if n < 5:
        raise InsufficientDataError(f"need at least 5 values in total, got {n}")
    ranks, ties = midranks(np.concatenate([a, b]))
    correction = 1.0 - float(np.sum(ties**3 - ties)) / (n**3 - n)
    if correction <= 0.0:
        raise DegenerateInputError("all values are tied")
    ra, rb = ranks[: a.size].sum(), ranks[a.size :].sum()
    h = (12.0 / (n * (n + 1)) * (ra**2 / a.size + rb**2 / b.size) - 3.0 * (n + 1)) / correction
    h = max(float(h), 0.0)
    return TestResult(
        statistic=float(h),
        p_value=chi2_sf(h, 1),
        df=1,
        group_sizes=(a.size, b.size),
        method="kruskal-wallis",
    )


@dataclass(frozen=True)
class SeparationResult:
    measure: str
    kruskal: TestResult
    n_correct: int
    n_wrong: int
    median_correct: float
    median_wrong: float
    ks_correct: TestResult | None = None
    ks_wrong: TestResult | None = None
    notes: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "n_correct": self.n_correct,
            "n_wrong": self.n_wrong,
            "median_correct": self.median_correct,
            "median_wrong": self.median_wrong,
            "H": self.kruskal.statistic,
            "p": self.kruskal.p_value,
            "ks_p_correct": None if self.ks_correct is None else self.ks_correct.p_value,
            "ks_p_wrong": None if self.ks_wrong is None else self.ks_wrong.p_value,
            "notes": list(self.notes),
        }


_MEASURES = {"entropy": "entropy", "mi": "mutual_information", "mutual_information": "mutual_information"}


def uncertainty_separation(records, measure: str = "entropy") -> SeparationResult:
    """Compare an uncertainty score between wrong and correct predictions.

    Each group is first checked for normality (reported only); the decision
    test is Kruskal-Wallis on wrong versus correct.
    """
    try:
        attr = _MEASURES[measure]
    except KeyError:
        raise ValueError(f"unknown measure {measure!r}; use 'entropy' or 'mi'") from None
    correct = np.array([getattr(r, attr) for r in records if r.correct], dtype=np.float64)
    wrong = np.array([getattr(r, attr) for r in records if not r.correct], dtype=np.float64)
    if correct.size == 0:
        raise InsufficientDataError("no correctly classified samples")
    if wrong.size == 0:
        raise InsufficientDataError("no wrongly classified samples")
    notes = []
    ks = {}
    for name, group in (("correct", correct), ("wrong", wrong)):
        try:
            ks[name] = ks_normality(group)
        except (InsufficientDataError, DegenerateInputError) as exc:
            ks[name] = None
            notes.append(f"normality check skipped for {name} group: {exc}")
    kw = kruskal_wallis(wrong, correct)
    return SeparationResult(
        measure="mi" if attr == "mutual_information" else "entropy",
        kruskal=kw,
        n_correct=correct.size,
        n_wrong=wrong.size,
        median_correct=float(np.median(correct)),
        median_wrong=float(np.median(wrong)),
        ks_correct=ks["correct"],
        ks_wrong=ks["wrong"],
        notes=tuple(notes),
    )
