"""Protected-group stratification and group-fairness metrics.

Every rate is computed from integer counts with exact rational arithmetic and
only converted to float at the end, so results are the correctly rounded
value of the underlying ratio of counts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import AllIdenticalValues, EmptyGroup, LengthMismatch, NoEpisodes, UnknownGroupMember, UnsupportedMetric
from .ingest import Sex, SubjectMetadata
from .phenotype import PhenotypeLabel, classify_episode

FOUR_FIFTHS = 0.8


class ProtectedAttribute(str, Enum):
    Sex = "Sex"
    Age = "Age"
    DiseaseDuration = "DiseaseDuration"
    FogPhenotype = "FogPhenotype"

    @property
    def level(self) -> str:
        return "Episode" if self is ProtectedAttribute.FogPhenotype else "Subject"


SUBJECT_ATTRIBUTES = (ProtectedAttribute.Sex, ProtectedAttribute.Age, ProtectedAttribute.DiseaseDuration)


class Flag(str, Enum):
    EmptyGroup = "EmptyGroup"
    ZeroRateBothGroups = "ZeroRateBothGroups"


class Verdict(str, Enum):
    Fair = "Fair"
    Biased = "Biased"


@dataclass
class GroupAssignment:
    attribute: ProtectedAttribute
    membership: dict  # unit id -> 0 or 1
    thresholds: dict = field(default_factory=dict)  # dataset id -> median split value
    flags: set = field(default_factory=set)

    @property
    def dichotomization_threshold(self) -> float | None:
        if len(self.thresholds) == 1:
            return next(iter(self.thresholds.values()))
        return None

    def members(self, group: int) -> list:
        return sorted(u for u, g in self.membership.items() if g == group)

    def sizes(self) -> tuple[int, int]:
        g1 = sum(1 for g in self.membership.values() if g == 1)
        return len(self.membership) - g1, g1

    def lookup(self, unit_ids) -> np.ndarray:
        try:
            return np.array([self.membership[u] for u in unit_ids], dtype=np.int8)
        except KeyError as exc:
            raise UnknownGroupMember(f"unit {exc.args[0]!r} has no {self.attribute.value} group") from None


@dataclass
class PredictionSet:
    unit_ids: Sequence
    y_pred: np.ndarray
    y_true: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.unit_ids = list(self.unit_ids)
        self.y_pred = np.asarray(self.y_pred, dtype=np.int8)
        self.y_true = np.asarray(self.y_true, dtype=np.int8)
        n = len(self.unit_ids)
        if self.y_pred.shape != (n,) or self.y_true.shape != (n,):
            raise LengthMismatch("unit_ids, y_pred and y_true must have equal lengths")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != (n,):
                raise LengthMismatch("scores length differs from unit_ids")

    def __len__(self):
        return len(self.unit_ids)

    def subset(self, mask) -> "PredictionSet":
        mask = np.asarray(mask, dtype=bool)
        return PredictionSet(
            [u for u, m in zip(self.unit_ids, mask) if m],
            self.y_pred[mask],
            self.y_true[mask],
            None if self.scores is None else self.scores[mask],
        )


@dataclass
class FairnessResult:
    attribute: ProtectedAttribute
    dpr: float | None
    tppr: float | None
    fprr: float | None
    eor: float | None
    eod: float | None
    group_rates: dict
    degenerate_flags: dict  # metric name -> sorted list of Flag values

    METRICS = ("dpr", "tppr", "fprr", "eor", "eod")

    def value(self, metric: str) -> float | None:
        return getattr(self, metric)

    def flagged(self, metric: str) -> bool:
        return bool(self.degenerate_flags.get(metric))

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute.value,
            **{m: getattr(self, m) for m in self.METRICS},
            "group_rates": {k: list(v) for k, v in self.group_rates.items()},
            "degenerate_flags": {k: list(v) for k, v in sorted(self.degenerate_flags.items()) if v},
        }


# --- stratification -------------------------------------------------------

def _raw_value(m: SubjectMetadata, attribute: ProtectedAttribute) -> float:
    if attribute is ProtectedAttribute.Age:
        return m.age_years
    if attribute is ProtectedAttribute.DiseaseDuration:
        return m.disease_duration_years
    raise ValueError(f"{attribute.value} is not a continuous subject attribute")


def dichotomize(metadata: Sequence[SubjectMetadata], attribute: ProtectedAttribute) -> GroupAssignment:
    """Binary subject groups: Female/Male for sex, ``<= median`` / ``> median`` otherwise.

    Medians are taken per dataset (midpoint of the middle two for even counts).
    """
    attribute = ProtectedAttribute(attribute)
    if attribute is ProtectedAttribute.FogPhenotype:
        raise ValueError("FOG phenotype is episode-level; use assign_phenotype_groups")
    membership, thresholds = {}, {}
    if attribute is ProtectedAttribute.Sex:
        membership = {m.subject_id: int(m.sex is Sex.Male) for m in metadata}
    else:
        by_ds: dict[str, list[SubjectMetadata]] = {}
        for m in metadata:
            by_ds.setdefault(m.dataset_id, []).append(m)
        for ds, rows in sorted(by_ds.items()):
            vals = np.array([_raw_value(m, attribute) for m in rows])
            if np.all(vals == vals[0]):
                raise AllIdenticalValues(f"{ds}: every subject has {attribute.value} = {vals[0]}")
            med = float(np.median(vals))
            thresholds[ds] = med
            membership.update({m.subject_id: int(v > med) for m, v in zip(rows, vals)})
    ga = GroupAssignment(attribute, membership, thresholds)
    if 0 in ga.sizes():
        ga.flags.add(Flag.EmptyGroup)
    return ga


def assign_phenotype_groups(episodes, sampling_rate_hz: float, channels=None) -> GroupAssignment:
    """Episode-level groups: 0 = akinetic, 1 = tremulous."""
    episodes = list(episodes)
    if not episodes:
        raise NoEpisodes("no FOG episodes to phenotype")
    membership = {
        ep.episode_id: int(classify_episode(ep, sampling_rate_hz, channels) is PhenotypeLabel.Tremulous)
        for ep in episodes
    }
    ga = GroupAssignment(ProtectedAttribute.FogPhenotype, membership)
    if 0 in ga.sizes():
        ga.flags.add(Flag.EmptyGroup)
    return ga


def window_episode_ids(starts, window_len: int, episodes, recording_ids=None) -> list:
    """Episode id each window inherits (largest sample overlap, earliest on ties), else None.

    ``recording_ids`` (one per window) must be given when windows come from
    several recordings; episodes are matched on ``(subject_id, recording_index)``
    through the window's recording id tuple.
    """
    starts = np.asarray(starts, dtype=np.int64)
    out = [None] * len(starts)
    by_rec: dict = {}
    for ep in episodes:
        by_rec.setdefault((ep.subject_id, ep.recording_index), []).append(ep)
    for i, s in enumerate(starts):
        key = recording_ids[i] if recording_ids is not None else None
        cands = by_rec.get(key, []) if key is not None else list(episodes)
        best, best_ov = None, 0
        for ep in cands:
            ov = min(s + window_len, ep.end_index) - max(s, ep.start_index)
            if ov > best_ov:
                best, best_ov = ep.episode_id, ov
        out[i] = best
    return out


# --- rates ----------------------------------------------------------------

@dataclass(frozen=True)
class _Counts:
    n: int
    pred_pos: int
    true_pos_units: int
    tp: int
    true_neg_units: int
    fp: int


def _counts(preds: PredictionSet, groups: GroupAssignment) -> tuple[_Counts, _Counts]:
    g = groups.lookup(preds.unit_ids)
    out = []
    for grp in (0, 1):
        m = g == grp
        yp, yt = preds.y_pred[m], preds.y_true[m]
        out.append(_Counts(
            n=int(m.sum()),
            pred_pos=int(yp.sum()),
            true_pos_units=int(yt.sum()),
            tp=int((yp & yt).sum()),
            true_neg_units=int((1 - yt).sum()),
            fp=int((yp & (1 - yt)).sum()),
        ))
    return out[0], out[1]


def _ratio(num0, den0, num1, den1):
    """Min/max ratio of two rates as ``(Fraction | None, flags)``."""
    if den0 == 0 or den1 == 0:
        return None, {Flag.EmptyGroup}
    r0, r1 = Fraction(num0, den0), Fraction(num1, den1)
    if r0 == 0 and r1 == 0:
        return Fraction(1), {Flag.ZeroRateBothGroups}
    if r0 == 0 or r1 == 0:
        return Fraction(0), set()
    return min(r0, r1) / max(r0, r1), set()


def _rate(num, den):
    return float(Fraction(num, den)) if den else None


def _require_subject_level(groups: GroupAssignment, what: str):
    if groups.attribute is ProtectedAttribute.FogPhenotype:
        raise UnsupportedMetric(f"{what} is undefined for FOG phenotype (no true negatives)")


def demographic_parity_ratio(preds: PredictionSet, groups: GroupAssignment) -> float:
    c0, c1 = _counts(preds, groups)
    value, flags = _ratio(c0.pred_pos, c0.n, c1.pred_pos, c1.n)
    if Flag.EmptyGroup in flags:
        raise EmptyGroup(f"a {groups.attribute.value} group has no units")
    return float(value)


def parity_ratios(preds: PredictionSet, groups: GroupAssignment):
    """``(tppr, fprr)``; a ratio whose group lacks eligible units is None."""
    _require_subject_level(groups, "false-positive parity")
    c0, c1 = _counts(preds, groups)
    tppr, _ = _ratio(c0.tp, c0.true_pos_units, c1.tp, c1.true_pos_units)
    fprr, _ = _ratio(c0.fp, c0.true_neg_units, c1.fp, c1.true_neg_units)
    return (None if tppr is None else float(tppr)), (None if fprr is None else float(fprr))


def _eor(tppr, tflags, fprr, fflags):
    usable = [v for v, fl in ((tppr, tflags), (fprr, fflags)) if v is not None and not fl]
    if usable:
        return min(usable), tflags | fflags
    # both degenerate: fall back to whatever is defined
    defined = [v for v in (tppr, fprr) if v is not None]
    return (min(defined) if defined else None), tflags | fflags


def equalized_odds_ratio(preds: PredictionSet, groups: GroupAssignment) -> float | None:
    """``min(TPPR, FPRR)`` with degenerate components left out of the minimum."""
    _require_subject_level(groups, "equalized odds")
    c0, c1 = _counts(preds, groups)
    t, tf = _ratio(c0.tp, c0.true_pos_units, c1.tp, c1.true_pos_units)
    f, ff = _ratio(c0.fp, c0.true_neg_units, c1.fp, c1.true_neg_units)
    v, _ = _eor(t, tf, f, ff)
    return None if v is None else float(v)


def equality_of_opportunity_difference(preds: PredictionSet, groups: GroupAssignment) -> float:
    """Absolute gap between the two groups' true-positive rates."""
    c0, c1 = _counts(preds, groups)
    if c0.true_pos_units == 0 or c1.true_pos_units == 0:
        raise EmptyGroup(f"a {groups.attribute.value} group has no FOG-positive units")
    return float(abs(Fraction(c0.tp, c0.true_pos_units) - Fraction(c1.tp, c1.true_pos_units)))


def four_fifths_verdict(metric_value: float) -> Verdict:
    return Verdict.Fair if metric_value >= FOUR_FIFTHS else Verdict.Biased


def fairness_result(preds: PredictionSet, groups: GroupAssignment) -> FairnessResult:
    """All applicable metrics at once, with degenerate cases flagged instead of raised.

    FOG phenotype gets DPR and EOD only.
    """
    c0, c1 = _counts(preds, groups)
    flags: dict[str, set] = {}
    dpr, flags["dpr"] = _ratio(c0.pred_pos, c0.n, c1.pred_pos, c1.n)
    rates = {
        "selection": [_rate(c0.pred_pos, c0.n), _rate(c1.pred_pos, c1.n)],
        "tpr": [_rate(c0.tp, c0.true_pos_units), _rate(c1.tp, c1.true_pos_units)],
    }
    if c0.true_pos_units and c1.true_pos_units:
        eod, flags["eod"] = abs(Fraction(c0.tp, c0.true_pos_units) - Fraction(c1.tp, c1.true_pos_units)), set()
    else:
        eod, flags["eod"] = None, {Flag.EmptyGroup}
    tppr = fprr = eor = None
    if groups.attribute is not ProtectedAttribute.FogPhenotype:
        rates["fpr"] = [_rate(c0.fp, c0.true_neg_units), _rate(c1.fp, c1.true_neg_units)]
        tppr, flags["tppr"] = _ratio(c0.tp, c0.true_pos_units, c1.tp, c1.true_pos_units)
        fprr, flags["fprr"] = _ratio(c0.fp, c0.true_neg_units, c1.fp, c1.true_neg_units)
        eor, flags["eor"] = _eor(tppr, flags["tppr"], fprr, flags["fprr"])

    def f(x):
        return None if x is None else float(x)

    return FairnessResult(
        attribute=groups.attribute,
        dpr=f(dpr), tppr=f(tppr), fprr=f(fprr), eor=f(eor), eod=f(eod),
        group_rates=rates,
        degenerate_flags={k: sorted(fl.value for fl in v) for k, v in flags.items() if v},
    )
