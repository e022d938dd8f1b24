"""Experiment configuration and the per-fold train/evaluate loop."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyGroup
from .evaluation import MetricSample, derive_seed, plan_folds, worker_count
from .fairness import (
    GroupAssignment,
    PredictionSet,
    ProtectedAttribute,
    demographic_parity_ratio,
    dichotomize,
    fairness_result,
    window_episode_ids,
)
from .phenotype import PhenotypeLabel, classify_episode
from .features import DEFAULT_N_QUANTILES, ecdf_matrix
from .ingest import ScalingScope, fit_scaling, harmonize_pair, load_dataset, resample, scale_array
from .metrics import macro_f1
from .mitigation import (
    AdversaryConfig,
    AdversaryMode,
    Criterion,
    apply_thresholds,
    fit_thresholds,
    multisite_transfer,
    train_debiased,
)
from .models.forest import ForestConfig, train_forest
from .models.neural import TrainConfig, train_neural
from .windowing import DEFAULT_MIN_EPISODE_S, extract_episodes, segment, window_length

STRATEGIES = ("none", "threshold", "adversarial", "adversarial-multihead", "transfer")
MODELS = ("forest", "neural")


@dataclass
class MitigationConfig:
    strategy: str = "none"
    criterion: Criterion = Criterion.DemographicParity
    grid_resolution: int = 100
    alpha: float = 1.0
    hidden_dim: int = 32
    adversary_learning_rate: float | None = None
    freeze_prefix: int = 2
    sources: list = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown mitigation {self.strategy!r}; choose from {STRATEGIES}")
        try:
            self.criterion = Criterion(self.criterion)
        except ValueError:
            raise ConfigError(f"unknown threshold criterion {self.criterion!r}") from None

    def to_dict(self):
        return {
            "strategy": self.strategy, "criterion": self.criterion.value,
            "grid_resolution": self.grid_resolution, "alpha": self.alpha, "hidden_dim": self.hidden_dim,
            "adversary_learning_rate": self.adversary_learning_rate,
            "freeze_prefix": self.freeze_prefix, "sources": list(self.sources),
        }


@dataclass
class ExperimentConfig:
    dataset: str
    model: str = "forest"
    window_seconds: float = 3.0
    target_hz: float | None = None
    n_quantiles: int = DEFAULT_N_QUANTILES
    k: int = 5
    n_iterations: int = 10
    seed: int = 0
    scaling_scope: ScalingScope = ScalingScope.TrainOnly
    attributes: tuple = tuple(a.value for a in ProtectedAttribute)
    min_episode_s: float = DEFAULT_MIN_EPISODE_S
    max_retries: int = 100
    validation_fraction: float = 0.0
    forest: ForestConfig = field(default_factory=ForestConfig)
    neural: TrainConfig = field(default_factory=TrainConfig)
    mitigation: MitigationConfig = field(default_factory=MitigationConfig)
    base_dir: str = "."

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        try:
            self.scaling_scope = ScalingScope(self.scaling_scope)
            self.attributes = tuple(ProtectedAttribute(a) for a in self.attributes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.k < 2 or self.n_iterations < 1 or self.window_seconds <= 0:
            raise ConfigError("k >= 2, n_iterations >= 1 and window_seconds > 0 are required")
        strat = self.mitigation.strategy
        if strat.startswith("adversarial") and self.model != "neural":
            raise ConfigError("adversarial debiasing needs a gradient-trained (neural) model")
        if strat == "transfer":
            if self.model != "neural":
                raise ConfigError("multi-site transfer is implemented for the neural model")
            if not self.mitigation.sources:
                raise ConfigError("transfer mitigation needs at least one source dataset")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' path")
        try:
            if "forest" in d:
                d["forest"] = ForestConfig(**d["forest"])
            if "neural" in d:
                d["neural"] = TrainConfig.from_dict(d["neural"])
            if "mitigation" in d:
                m = d["mitigation"]
                d["mitigation"] = MitigationConfig(**({"strategy": m} if isinstance(m, str) else m))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        d.setdefault("base_dir", str(base_dir))
        return cls(**d)

    @classmethod
    def read(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "model": self.model, "window_seconds": self.window_seconds,
            "target_hz": self.target_hz, "n_quantiles": self.n_quantiles, "k": self.k,
            "n_iterations": self.n_iterations, "seed": self.seed,
            "scaling_scope": self.scaling_scope.value,
            "attributes": [a.value for a in self.attributes], "min_episode_s": self.min_episode_s,
            "max_retries": self.max_retries, "validation_fraction": self.validation_fraction,
            "forest": self.forest.to_dict(), "neural": self.neural.to_dict(),
            "mitigation": self.mitigation.to_dict(),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


@dataclass
class _WindowTable:
    """All windows of a recording set, unscaled, with provenance per window."""

    X: np.ndarray
    y: np.ndarray
    subject: np.ndarray
    recording: np.ndarray
    start: np.ndarray
    episode: list

    @classmethod
    def build(cls, recordings, window_seconds, episodes=None):
        Xs, ys, sids, recs, starts = [], [], [], [], []
        for ri, rec in enumerate(recordings):
            L = window_length(window_seconds, rec.sampling_rate_hz)
            if rec.n_samples < L:
                continue
            ws = segment(rec, window_seconds, ri)
            for w in ws.windows:
                Xs.append(w.data)
                ys.append(w.label)
                sids.append(w.subject_id)
                recs.append(ri)
                starts.append(w.start_index)
        if not Xs:
            raise ConfigError("no recording is long enough for one window")
        table = cls(np.stack(Xs), np.array(ys, dtype=np.int8), np.array(sids, dtype=object),
                    np.array(recs), np.array(starts), [None] * len(Xs))
        if episodes:
            L = table.X.shape[1]
            keys = [(s, r) for s, r in zip(table.subject, table.recording)]
            table.episode = window_episode_ids(table.start, L, episodes, keys)
        return table

    def rows(self, subjects) -> np.ndarray:
        return np.flatnonzero(np.isin(self.subject, list(subjects)))


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig):
        self.cfg = config
        recordings, metadata = load_dataset(config.resolve(config.dataset))
        if config.target_hz:
            recordings = [resample(r, config.target_hz) for r in recordings]
        self.sources = []
        if config.mitigation.strategy == "transfer":
            src = []
            for p in config.mitigation.sources:
                src.extend(load_dataset(config.resolve(p))[0])
            self.sources, recordings = harmonize_pair(src, recordings)
        self.recordings = recordings
        self.metadata = metadata
        self.dataset_id = recordings[0].dataset_id
        self.subjects = sorted({r.subject_id for r in recordings})

        self.groups: dict[ProtectedAttribute, GroupAssignment] = {}
        for attr in config.attributes:
            if attr.level == "Subject":
                self.groups[attr] = dichotomize(metadata, attr)
        episodes = []
        for ri, rec in enumerate(recordings):
            episodes.extend(extract_episodes(rec, config.min_episode_s, ri))
        self.episodes = episodes
        if ProtectedAttribute.FogPhenotype in config.attributes:
            membership = {}
            for e in episodes:
                rec = recordings[e.recording_index]
                label = classify_episode(e, rec.sampling_rate_hz, rec.channels)
                membership[e.episode_id] = int(label is PhenotypeLabel.Tremulous)
            self.groups[ProtectedAttribute.FogPhenotype] = GroupAssignment(
                ProtectedAttribute.FogPhenotype, membership)
        self.table = _WindowTable.build(recordings, config.window_seconds, episodes)
        self.source_table = (_WindowTable.build(self.sources, config.window_seconds)
                             if self.sources else None)
        self.global_scaling = None
        if config.scaling_scope is ScalingScope.Global:
            self.global_scaling = fit_scaling([*recordings, *self.sources], ScalingScope.Global)

    @property
    def subject_groups(self) -> list[GroupAssignment]:
        return [g for a, g in self.groups.items() if a.level == "Subject"]

    def plans(self):
        return [
            plan_folds(self.subjects, self.subject_groups, self.cfg.k,
                       derive_seed(self.cfg.seed, it), self.cfg.max_retries)
            for it in range(self.cfg.n_iterations)
        ]

    def run(self, progress=None) -> list[MetricSample]:
        tasks = [(it, fold, plan) for it, plan in enumerate(self.plans()) for fold in range(self.cfg.k)]
        workers = min(worker_count(), len(tasks))

        def job(task):
            out = self.run_fold(*task)
            if progress:
                progress(out)
            return out

        if workers <= 1:
            return [job(t) for t in tasks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, tasks))

    # --- one fold ------------------------------------------------------------

    def _group_index(self, attr, rows) -> np.ndarray:
        ga = self.groups[attr]
        if attr is ProtectedAttribute.FogPhenotype:
            return np.array([ga.membership.get(self.table.episode[i], -1) if self.table.episode[i] else -1
                             for i in rows], dtype=np.int64)
        return np.array([ga.membership[self.table.subject[i]] for i in rows], dtype=np.int64)

    def _prediction_set(self, attr, rows, y_pred, scores):
        t = self.table
        if attr is ProtectedAttribute.FogPhenotype:
            keep = np.array([t.episode[i] is not None for i in rows], dtype=bool)
            units = [t.episode[i] for i, k in zip(rows, keep) if k]
            return PredictionSet(units, y_pred[keep], t.y[rows][keep], scores[keep])
        return PredictionSet(list(t.subject[rows]), y_pred, t.y[rows], scores)

    def _scaling(self, train_subjects):
        if self.global_scaling is not None:
            return self.global_scaling
        recs = [r for r in self.recordings if r.subject_id in set(train_subjects)]
        return fit_scaling([*recs, *self.sources], ScalingScope.TrainOnly)

    def run_fold(self, iteration: int, fold: int, plan) -> MetricSample:
        cfg = self.cfg
        seed = derive_seed(cfg.seed, iteration, fold)
        train_s, test_s = plan.train_subjects(fold), plan.test_subjects(fold)
        t = self.table
        tr, te = t.rows(train_s), t.rows(test_s)
        params = self._scaling(train_s)
        Xtr, Xte = scale_array(t.X[tr], params), scale_array(t.X[te], params)
        ytr, yte = t.y[tr], t.y[te]
        strategy = cfg.mitigation.strategy
        extra = {}

        # per-attribute (y_pred, scores) on the test rows
        preds: dict = {}
        if cfg.model == "forest":
            ftr, fte = ecdf_matrix(Xtr, cfg.n_quantiles), ecdf_matrix(Xte, cfg.n_quantiles)
            fcfg = ForestConfig(**{**cfg.forest.to_dict(), "rng_seed": seed})
            model = train_forest(ftr, ytr, fcfg)
            scores = model.predict_scores(fte)
            calib_scores = model.oob_scores
        else:
            ncfg = TrainConfig.from_dict({**cfg.neural.to_dict(), "rng_seed": seed})
            validation = None
            fit_rows = np.arange(len(tr))
            if cfg.validation_fraction > 0:
                rng = np.random.default_rng(seed)
                n_val = max(1, int(round(cfg.validation_fraction * len(train_s))))
                val_s = set(rng.permutation(train_s)[:n_val].tolist())
                is_val = np.isin(t.subject[tr], list(val_s))
                validation = (Xtr[is_val], ytr[is_val])
                fit_rows = np.flatnonzero(~is_val)
            if strategy.startswith("adversarial"):
                model = None
                multi = strategy == "adversarial-multihead"
                attr_sets = [tuple(cfg.attributes)] if multi else [(a,) for a in cfg.attributes]
                for attrs in attr_sets:
                    glabels = {a: self._group_index(a, tr)[fit_rows] for a in attrs}
                    acfg = AdversaryConfig(
                        attributes=attrs, hidden_dim=cfg.mitigation.hidden_dim, alpha=cfg.mitigation.alpha,
                        mode=AdversaryMode.MultiHead if multi else AdversaryMode.SingleAttribute,
                        learning_rate=cfg.mitigation.adversary_learning_rate, seed=seed,
                    )
                    m = train_debiased(Xtr[fit_rows], ytr[fit_rows], glabels, ncfg, acfg, validation)
                    s = m.predict_scores(Xte)
                    for a in attrs:
                        preds[a] = ((s >= 0.5).astype(np.int8), s)
                scores = None
            elif strategy == "transfer":
                st = self.source_table
                model = multisite_transfer(
                    scale_array(st.X, params), st.y, Xtr[fit_rows], ytr[fit_rows], ncfg,
                    cfg.mitigation.freeze_prefix, validation=validation,
                )
                scores = model.predict_scores(Xte)
            else:
                model = train_neural(Xtr[fit_rows], ytr[fit_rows], ncfg, validation)
                scores = model.predict_scores(Xte)
            calib_scores = model.predict_scores(Xtr) if model is not None else None

        if scores is not None:
            default = (scores >= 0.5).astype(np.int8)
            if strategy == "threshold":
                policies = {}
                for a in cfg.attributes:
                    g_tr, g_te = self._group_index(a, tr), self._group_index(a, te)
                    known = g_tr >= 0
                    calib = PredictionSet(list(np.flatnonzero(known)), (calib_scores[known] >= 0.5).astype(np.int8),
                                          ytr[known], calib_scores[known])
                    ga = GroupAssignment(a, {i: int(g) for i, g in zip(np.flatnonzero(known), g_tr[known])})
                    try:
                        pol = fit_thresholds(calib, ga, cfg.mitigation.criterion, cfg.mitigation.grid_resolution)
                    except EmptyGroup:
                        preds[a] = (default, scores)
                        continue
                    g_known = g_tr[known]
                    policies[a.value] = {
                        **pol.to_dict(),
                        "calibration_dpr_before": demographic_parity_ratio(calib, ga),
                        "calibration_dpr_after": demographic_parity_ratio(
                            PredictionSet(calib.unit_ids, apply_thresholds(calib.scores, g_known, pol), calib.y_true), ga),
                    }
                    y_a = default.copy()
                    k = g_te >= 0
                    y_a[k] = apply_thresholds(scores[k], g_te[k], pol)
                    preds[a] = (y_a, scores)
                extra["threshold_policies"] = policies
            else:
                for a in cfg.attributes:
                    preds[a] = (default, scores)

        fairness = {}
        f1s = []
        for a in cfg.attributes:
            y_a, s_a = preds[a]
            fairness[a.value] = fairness_result(self._prediction_set(a, te, y_a, s_a), self.groups[a])
        if strategy in ("threshold", "adversarial"):
            # F1 averaged over the attribute-specific predictors / policies
            f1s = [macro_f1(preds[a][0], yte) for a in cfg.attributes if a.level == "Subject"] or \
                  [macro_f1(preds[a][0], yte) for a in cfg.attributes]
            f1 = math.fsum(f1s) / len(f1s)
        else:
            f1 = macro_f1(next(iter(preds.values()))[0], yte)
        return MetricSample(
            iteration=iteration, fold=fold, f1=f1, fairness=fairness,
            train_subjects=train_s, test_subjects=test_s, n_test_windows=int(len(te)), seed=seed,
            extra=extra,
        )
