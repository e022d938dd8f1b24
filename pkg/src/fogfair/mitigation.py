"""Bias mitigation: group-specific thresholds, adversarial debiasing, multi-site transfer."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError, EmptyGroup, MissingGroupLabels, UnknownGroupMember
from .fairness import GroupAssignment, PredictionSet, ProtectedAttribute
from .metrics import macro_f1_from_counts
from .models.neural import (
    Dense,
    NeuralModel,
    ReLU,
    TrainConfig,
    sgd_fit,
    train_neural,
    transfer_finetune,
    weighted_cross_entropy,
)

FEASIBILITY_TOL = 0.02
_EPS = 1e-12  # absorbs float rounding of rate differences at the tolerance boundary


class Criterion(str, Enum):
    DemographicParity = "DemographicParity"
    TruePositiveParity = "TruePositiveParity"
    EqualizedOdds = "EqualizedOdds"


@dataclass
class ThresholdPolicy:
    thresholds: dict  # group (0/1) -> threshold
    target_criterion: Criterion
    attribute: str = ""
    disparity: float = float("nan")
    calibration_f1: float = float("nan")

    def __post_init__(self):
        self.thresholds = {int(k): float(v) for k, v in self.thresholds.items()}
        if set(self.thresholds) != {0, 1}:
            raise ValueError("policy must cover groups 0 and 1")
        if not all(0.0 <= t <= 1.0 for t in self.thresholds.values()):
            raise ValueError("thresholds must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "target_criterion": self.target_criterion.value,
            "thresholds": {str(k): v for k, v in sorted(self.thresholds.items())},
            "disparity": self.disparity,
            "calibration_f1": self.calibration_f1,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdPolicy":
        return cls(
            thresholds={int(k): v for k, v in d["thresholds"].items()},
            target_criterion=Criterion(d["target_criterion"]),
            attribute=d.get("attribute", ""),
            disparity=d.get("disparity", float("nan")),
            calibration_f1=d.get("calibration_f1", float("nan")),
        )


def threshold_grid(grid_resolution: int) -> np.ndarray:
    return np.arange(grid_resolution + 1) / grid_resolution


def _curves(scores, y, grid):
    """Counts of predicted positives, TP and FP at every grid threshold (``score >= t``)."""
    s1 = np.sort(scores[y == 1])
    s0 = np.sort(scores[y == 0])
    tp = s1.size - np.searchsorted(s1, grid, side="left")
    fp = s0.size - np.searchsorted(s0, grid, side="left")
    return tp, fp, s1.size, s0.size


def criterion_disparity(criterion: Criterion, c0, c1):
    """Disparity for count tuples ``(tp, fp, n_pos, n_neg)``; broadcasts over arrays."""
    tp0, fp0, p0, n0 = c0
    tp1, fp1, p1, n1 = c1
    if criterion is Criterion.DemographicParity:
        return np.abs((tp0 + fp0) / (p0 + n0) - (tp1 + fp1) / (p1 + n1))
    if p0 == 0 or p1 == 0:
        raise EmptyGroup("true-positive parity needs FOG-positive units in both groups")
    dtpr = np.abs(tp0 / p0 - tp1 / p1)
    if criterion is Criterion.TruePositiveParity:
        return dtpr
    if n0 == 0 or n1 == 0:
        raise EmptyGroup("equalized odds needs FOG-negative units in both groups")
    return np.maximum(dtpr, np.abs(fp0 / n0 - fp1 / n1))


def select_pair(disparity: np.ndarray, f1: np.ndarray):
    """Index of the chosen pair: feasible (or least-disparate) and F1-maximal, lexicographic ties."""
    feasible = disparity <= FEASIBILITY_TOL + _EPS
    if not feasible.any():
        feasible = disparity <= disparity.min() + _EPS
    masked = np.where(feasible, f1, -np.inf)
    return np.unravel_index(int(np.argmax(masked)), masked.shape)


def fit_thresholds(calibration: PredictionSet, groups: GroupAssignment,
                   criterion: Criterion = Criterion.DemographicParity,
                   grid_resolution: int = 100) -> ThresholdPolicy:
    """Exhaustive search over threshold pairs ``(t0, t1)`` on a ``1/grid_resolution`` grid.

    ``calibration`` must only hold train/validation units. Among pairs within
    the feasibility tolerance of the criterion (or, if none, the least
    disparate ones) the pair with the highest calibration macro F1 wins.
    """
    criterion = Criterion(criterion)
    if calibration.scores is None:
        raise ValueError("calibration predictions need scores")
    g = groups.lookup(calibration.unit_ids)
    grid = threshold_grid(grid_resolution)
    curves = []
    for grp in (0, 1):
        m = g == grp
        if not m.any():
            raise EmptyGroup(f"calibration set has no units in group {grp}")
        curves.append(_curves(calibration.scores[m], calibration.y_true[m], grid))
    (tp0, fp0, p0, n0), (tp1, fp1, p1, n1) = curves
    c0 = (tp0[:, None], fp0[:, None], p0, n0)
    c1 = (tp1[None, :], fp1[None, :], p1, n1)
    disp = criterion_disparity(criterion, c0, c1)
    TP = tp0[:, None] + tp1[None, :]
    FP = fp0[:, None] + fp1[None, :]
    f1 = macro_f1_from_counts(TP, FP, (p0 + p1) - TP, (n0 + n1) - FP)
    disp = np.broadcast_to(disp, f1.shape)
    i, j = select_pair(disp, f1)
    return ThresholdPolicy(
        thresholds={0: grid[i], 1: grid[j]},
        target_criterion=criterion,
        attribute=groups.attribute.value,
        disparity=float(disp[i, j]),
        calibration_f1=float(f1[i, j]),
    )


def apply_thresholds(scores, groups, policy: ThresholdPolicy) -> np.ndarray:
    """Hard labels ``score >= threshold[group]``; ``groups`` holds one group per unit."""
    scores = np.asarray(scores, dtype=np.float64)
    g = np.asarray(groups)
    if g.shape != scores.shape:
        raise ValueError("scores and groups differ in length")
    known = np.isin(g, list(policy.thresholds))
    if not known.all():
        raise UnknownGroupMember(f"group {g[~known][0]!r} not covered by the policy")
    t = np.where(g == 1, policy.thresholds[1], policy.thresholds[0])
    return (scores >= t).astype(np.int8)


# --- adversarial debiasing ---------------------------------------------------

class AdversaryMode(str, Enum):
    SingleAttribute = "SingleAttribute"
    MultiHead = "MultiHead"


# The adversary has to track a moving representation; at the predictor's own
# rate the -alpha * grad(L_A) ascent outruns it and the losses blow up.
ADVERSARY_LR_FACTOR = 10.0


@dataclass
class AdversaryConfig:
    attributes: tuple = (ProtectedAttribute.Sex,)
    hidden_dim: int = 32
    alpha: float = 1.0
    mode: AdversaryMode = AdversaryMode.SingleAttribute
    learning_rate: float | None = None  # None -> ADVERSARY_LR_FACTOR x predictor learning rate
    frozen: bool = False
    zero_init: bool = False
    seed: int = 0

    def __post_init__(self):
        self.attributes = tuple(ProtectedAttribute(a) for a in self.attributes)
        self.mode = AdversaryMode(self.mode)
        if not self.attributes:
            raise ConfigError("adversary needs at least one attribute")
        if self.mode is AdversaryMode.SingleAttribute and len(self.attributes) != 1:
            raise ConfigError("SingleAttribute mode takes exactly one attribute")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")


class Adversary:
    """Two-layer MLP over the predictor's representation with one 2-way head per attribute."""

    def __init__(self, in_dim: int, cfg: AdversaryConfig):
        self.cfg = cfg
        self.hidden = Dense(in_dim, cfg.hidden_dim)
        self.relu = ReLU()
        self.heads = {a: Dense(cfg.hidden_dim, 2) for a in cfg.attributes}
        if not cfg.zero_init:
            rng = np.random.default_rng(cfg.seed)
            self.hidden.init(rng)
            for a in cfg.attributes:
                self.heads[a].init(rng)

    def layers(self):
        return [self.hidden, *self.heads.values()]

    def loss_and_grads(self, h, group_labels: dict):
        """Summed per-head cross-entropy ``L_A``, its parameter gradients and ``dL_A/dh``.

        Rows with a negative group label are ignored by that head.
        """
        z, c_hidden = self.hidden.forward(h)
        a, c_relu = self.relu.forward(z)
        total = 0.0
        da = np.zeros_like(a)
        head_grads = {}
        for attr, head in self.heads.items():
            lab = np.asarray(group_labels[attr])
            keep = lab >= 0
            if not keep.any():
                head_grads[attr] = {k: np.zeros_like(v) for k, v in head.params.items()}
                continue
            logits, c_head = head.forward(a[keep])
            loss, dlogits = weighted_cross_entropy(logits, lab[keep])
            total += loss
            da_k, head_grads[attr] = head.backward(dlogits, c_head)
            da[keep] += da_k
        dz, _ = self.relu.backward(da, c_relu)
        dh, hidden_grads = self.hidden.backward(dz, c_hidden)
        return total, {"hidden": hidden_grads, "heads": head_grads}, dh

    def sgd_step(self, grads, lr: float) -> None:
        for k, g in grads["hidden"].items():
            self.hidden.params[k] = self.hidden.params[k] - lr * g
        for attr, hg in grads["heads"].items():
            for k, g in hg.items():
                self.heads[attr].params[k] = self.heads[attr].params[k] - lr * g

    def predict(self, h, attr) -> np.ndarray:
        a = self.relu.forward(self.hidden.forward(h)[0])[0]
        return np.argmax(self.heads[attr].forward(a)[0], axis=1)


def project(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Projection of ``v`` onto ``u``; zero when ``u`` is (numerically) zero."""
    uu = float(np.vdot(u, u))
    if uu < 1e-12:
        return np.zeros_like(v)
    return (float(np.vdot(v, u)) / uu) * u


def compose_gradients(grads_p, grads_a, alpha: float):
    """Per tensor: ``g_P - proj_{g_A}(g_P) - alpha * g_A``.

    Also returns the largest ``|<g_P - proj, g_A>|`` seen, for orthogonality checks.
    """
    out, worst = [], 0.0
    for gp_layer, ga_layer in zip(grads_p, grads_a):
        layer_out = {}
        for k, gp in gp_layer.items():
            ga = ga_layer.get(k)
            if ga is None:
                layer_out[k] = gp
                continue
            resid = gp - project(gp, ga)
            worst = max(worst, abs(float(np.vdot(resid, ga))))
            layer_out[k] = resid - alpha * ga
        out.append(layer_out)
    return out, worst


def adversary_gradients(model: NeuralModel, adversary: Adversary, X, group_labels):
    """``(L_A, adversary parameter grads, dL_A/dW for the predictor)``."""
    k = model.representation_index
    h, caches = model.forward(X, upto=k)
    loss, adv_grads, dh = adversary.loss_and_grads(h, group_labels)
    return loss, adv_grads, model.backward(dh, caches, upto=k)


def _check_labels(group_labels: dict, cfg: AdversaryConfig):
    missing = [a.value for a in cfg.attributes if a not in group_labels]
    if missing:
        raise MissingGroupLabels(f"no group labels for {missing}")


def adversarial_step(model: NeuralModel, adversary: Adversary, batch, labels, group_labels: dict,
                     alpha: float, learning_rate: float = 0.01, class_weights=(1.0, 1.0)):
    """One alternating update: adversary SGD step on ``L_A``, then a predictor step along
    the projected gradient. Returns ``(model, adversary, info)``; both are updated in place.
    """
    from .models.neural import forward_backward

    _check_labels(group_labels, adversary.cfg)
    X = np.asarray(batch, dtype=np.float64)
    if not adversary.cfg.frozen:
        _, adv_grads, _ = adversary_gradients(model, adversary, X, group_labels)
        adversary.sgd_step(adv_grads, adversary.cfg.learning_rate or ADVERSARY_LR_FACTOR * learning_rate)
    loss_a, _, grads_a = adversary_gradients(model, adversary, X, group_labels)
    loss_p, grads_p = forward_backward(model, X, labels, class_weights)
    g, worst = compose_gradients(grads_p, grads_a, alpha)
    for i, layer in enumerate(model.layers):
        if model.frozen[i]:
            continue
        for k, gk in g[i].items():
            layer.params[k] = layer.params[k] - learning_rate * gk
    return model, adversary, {"loss_p": loss_p, "loss_a": loss_a, "orthogonality": worst, "update": g}


def train_debiased(windows, labels, group_labels: dict, cfg: TrainConfig | None = None,
                   adv_cfg: AdversaryConfig | None = None, validation=None,
                   monitor: Callable[[dict], None] | None = None) -> NeuralModel:
    """Predictor trained jointly with an adversary; only the predictor is returned.

    ``group_labels`` maps each configured attribute to a per-window array of
    group indices (negative = unknown, ignored by that adversary head).
    ``monitor`` receives per-step diagnostics.
    """
    cfg = cfg or TrainConfig()
    adv_cfg = adv_cfg or AdversaryConfig()
    _check_labels(group_labels, adv_cfg)
    X = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels)
    glabels = {a: np.asarray(group_labels[a]) for a in adv_cfg.attributes}
    model = NeuralModel.create(X.shape[2], cfg.arch, cfg.rng_seed)
    model.fit_input_standardization(X)
    model.train_config = {**cfg.to_dict(), "adversary_alpha": adv_cfg.alpha, "adversary_mode": adv_cfg.mode.value}
    adversary = Adversary(model.representation_dim, adv_cfg)
    adv_lr = adv_cfg.learning_rate or ADVERSARY_LR_FACTOR * cfg.learning_rate

    def hook(m, idx, grads_p):
        xb = X[idx]
        gb = {a: v[idx] for a, v in glabels.items()}
        if not adv_cfg.frozen:
            _, adv_grads, _ = adversary_gradients(m, adversary, xb, gb)
            adversary.sgd_step(adv_grads, adv_lr)
        loss_a, _, grads_a = adversary_gradients(m, adversary, xb, gb)
        g, worst = compose_gradients(grads_p, grads_a, adv_cfg.alpha)
        if monitor is not None:
            monitor({"loss_a": loss_a, "orthogonality": worst})
        return g

    return sgd_fit(model, X, labels, cfg, validation, grad_hook=hook)


def multisite_transfer(source_windows, source_labels, target_windows, target_labels,
                       cfg: TrainConfig | None = None, freeze_prefix: int = 2,
                       finetune_cfg: TrainConfig | None = None, validation=None) -> NeuralModel:
    """Pretrain on harmonized source windows, then fine-tune on the target with early layers frozen."""
    cfg = cfg or TrainConfig()
    pretrained = train_neural(source_windows, source_labels, cfg)
    return transfer_finetune(pretrained, target_windows, target_labels, freeze_prefix,
                             finetune_cfg or cfg, validation)
