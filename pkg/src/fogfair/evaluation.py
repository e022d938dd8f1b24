"""Subject-independent repeated cross-validation, aggregation and significance testing."""
from __future__ import annotations

import math
import os
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InfeasibleCoverage, LengthMismatch, TooFewSamples
from .fairness import FairnessResult, GroupAssignment
from .metrics import macro_f1

__all__ = [
    "AggregateResult", "FoldPlan", "MetricSample", "WilcoxonResult", "aggregate", "derive_seed",
    "macro_f1", "plan_folds", "run_experiment", "wilcoxon_one_sided",
]


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed derived from a master seed and indices."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class FoldPlan:
    k: int
    assignments: dict  # subject id -> fold index
    iteration_seed: int

    def test_subjects(self, fold: int) -> list:
        return sorted(s for s, f in self.assignments.items() if f == fold)

    def train_subjects(self, fold: int) -> list:
        return sorted(s for s, f in self.assignments.items() if f != fold)


def _covers(assign: dict, groups: Sequence[GroupAssignment], k: int) -> bool:
    for fold in range(k):
        members = [s for s, f in assign.items() if f == fold]
        if not members:
            return False
        for ga in groups:
            if {ga.membership[s] for s in members} != {0, 1}:
                return False
    return True


def plan_folds(subjects, groups: Sequence[GroupAssignment], k: int, seed: int, max_retries: int = 100) -> FoldPlan:
    """Stratified subject-level folds in which every test fold holds both groups of every attribute.

    Subjects are grouped into cells by their joint group membership, shuffled
    within cells, and dealt round-robin into folds with a counter that runs on
    across cells. Failed coverage checks retry with freshly derived seeds.
    """
    subjects = sorted(set(subjects))
    if k < 2:
        raise InfeasibleCoverage("need at least two folds")
    if len(subjects) < k:
        raise InfeasibleCoverage(f"{len(subjects)} subjects cannot fill {k} folds")
    for ga in groups:
        sizes = [sum(1 for s in subjects if ga.membership[s] == g) for g in (0, 1)]
        if min(sizes) < k:
            raise InfeasibleCoverage(
                f"{ga.attribute.value} groups of sizes {sizes} cannot cover {k} folds"
            )
    cells: dict[tuple, list] = {}
    for s in subjects:
        cells.setdefault(tuple(ga.membership[s] for ga in groups), []).append(s)
    for attempt in range(max_retries + 1):
        rng = np.random.default_rng(derive_seed(seed, attempt))
        offset = int(rng.integers(k))
        assign = {}
        pos = offset
        for key in sorted(cells):
            members = list(cells[key])
            rng.shuffle(members)
            for s in members:
                assign[s] = pos % k
                pos += 1
        if _covers(assign, groups, k):
            return FoldPlan(k, assign, seed)
    raise InfeasibleCoverage(f"no covering {k}-fold plan after {max_retries} retries")


@dataclass
class MetricSample:
    iteration: int
    fold: int
    f1: float
    fairness: dict  # attribute value -> FairnessResult
    train_subjects: list = field(default_factory=list)
    test_subjects: list = field(default_factory=list)
    n_test_windows: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def metric_values(self) -> dict:
        """Flat ``{metric key: value or None}``; None marks a flagged or undefined value."""
        out = {"f1": self.f1}
        for attr, fr in sorted(self.fairness.items()):
            for m in FairnessResult.METRICS:
                v = fr.value(m)
                if v is None and m not in fr.degenerate_flags:
                    continue  # not applicable to this attribute
                out[f"{attr}.{m}"] = None if fr.flagged(m) else v
        return out

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "fold": self.fold,
            "seed": self.seed,
            "f1": self.f1,
            "n_test_windows": self.n_test_windows,
            "train_subjects": list(self.train_subjects),
            "test_subjects": list(self.test_subjects),
            "fairness": {a: fr.to_dict() for a, fr in sorted(self.fairness.items())},
            **({"extra": self.extra} if self.extra else {}),
        }


@dataclass
class AggregateResult:
    mean: float | None
    ci_half_width: float | None
    n_samples: int
    n_excluded: int = 0

    def to_dict(self):
        return {"mean": self.mean, "ci95_half_width": self.ci_half_width,
                "n_samples": self.n_samples, "n_excluded": self.n_excluded}


Z_95 = 1.96


def mean_ci(values: Sequence[float]):
    """Mean and normal-approximation 95% half-width.

    Mean and variance are exact rationals rounded once, so the result does not
    depend on sample order and identical samples give a half-width of exactly 0.
    """
    n = len(values)
    if n == 0:
        return None, None
    exact = [Fraction(v) for v in values]
    mean = sum(exact) / n
    if n < 2:
        return float(mean), None
    var = sum((v - mean) ** 2 for v in exact) / (n - 1)
    return float(mean), Z_95 * math.sqrt(var) / math.sqrt(n)


def aggregate(samples: Sequence[MetricSample]) -> dict:
    """Per-metric mean and 95% CI; flagged fairness values are excluded and counted."""
    if len(samples) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(samples)}")
    per_metric: dict[str, list] = {}
    excluded: dict[str, int] = {}
    for s in samples:
        for key, v in s.metric_values().items():
            per_metric.setdefault(key, [])
            excluded.setdefault(key, 0)
            if v is None:
                excluded[key] += 1
            else:
                per_metric[key].append(v)
    out = {}
    for key in sorted(per_metric):
        mean, hw = mean_ci(per_metric[key])
        out[key] = AggregateResult(mean, hw, len(per_metric[key]), excluded[key])
    return out


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str  # "Exact" or "NormalApprox"
    all_zero: bool = False

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value, "n_effective": self.n_effective,
                "method": self.method, "all_zero_differences": self.all_zero}


EXACT_MAX_N = 12


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_upper_p(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    """P(W >= w) under the sign-flip null, by enumerating all 2^n sign patterns."""
    n = doubled_ranks.size
    patterns = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    sums = patterns @ doubled_ranks
    return float(np.count_nonzero(sums >= doubled_w)) / 2**n


def wilcoxon_one_sided(before, after) -> WilcoxonResult:
    """One-sided Wilcoxon signed-rank test of ``median(after - before) > 0``.

    Zero differences are dropped. Exact null distribution up to 12 non-zero
    pairs, otherwise a tie-corrected normal approximation with continuity
    correction.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape or before.ndim != 1:
        raise LengthMismatch("before and after must be equal-length vectors")
    if before.size == 0:
        raise LengthMismatch("need at least one pair")
    d = after - before
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "Exact", all_zero=True)
    ranks = average_ranks(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        return WilcoxonResult(w, _exact_upper_p(doubled, int(round(2 * w))), n, "Exact")
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w - n * (n + 1) / 4.0 - 0.5) / math.sqrt(var)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return WilcoxonResult(w, min(1.0, max(0.0, p)), n, "NormalApprox")


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("FOGFAIR_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def run_experiment(config, progress=None) -> list[MetricSample]:
    """Repeated k-fold subject-independent CV as described by an :class:`ExperimentConfig`."""
    from .experiment import ExperimentRunner

    return ExperimentRunner(config).run(progress=progress)
