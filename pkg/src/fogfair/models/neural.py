"""Compact 1-D convolutional FOG detector with a hand-written gradient engine.

Everything runs in float64 so finite-difference gradient checks are meaningful.
Inputs are batches shaped ``[batch, time, channels]``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..metrics import macro_f1
from ..errors import DimensionMismatch, DivergedLoss, ShapeIncompatible, SingleClassTraining


class Layer:
    kind = "layer"
    params: dict

    def __init__(self):
        self.params = {}

    @property
    def has_weights(self) -> bool:
        return bool(self.params)

    def spec(self) -> dict:
        return {"kind": self.kind}

    def init(self, rng):
        pass


class Conv1D(Layer):
    """Valid (unpadded) stride-1 convolution over time. ``W`` is ``[k, in, out]``."""

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, kernel_size
        self.params = {
            "W": np.zeros((kernel_size, in_channels, out_channels)),
            "b": np.zeros(out_channels),
        }

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": self.kernel_size}

    def init(self, rng):
        k, c, o = self.params["W"].shape
        lim = math.sqrt(6.0 / (k * c + k * o))
        self.params["W"] = rng.uniform(-lim, lim, size=(k, c, o))
        self.params["b"] = np.zeros(o)

    def forward(self, x):
        k = self.kernel_size
        B, T, C = x.shape
        if C != self.in_channels:
            raise DimensionMismatch(f"conv expects {self.in_channels} channels, got {C}")
        if T < k:
            raise DimensionMismatch(f"sequence of length {T} shorter than kernel {k}")
        Tp = T - k + 1
        cols = sliding_window_view(x, k, axis=1)  # [B, Tp, C, k]
        cols = cols.transpose(0, 1, 3, 2).reshape(B * Tp, k * C)
        out = cols @ self.params["W"].reshape(k * C, -1) + self.params["b"]
        return out.reshape(B, Tp, -1), (cols, x.shape)

    def backward(self, dout, cache):
        cols, (B, T, C) = cache
        k = self.kernel_size
        Tp = T - k + 1
        d2 = dout.reshape(B * Tp, -1)
        W2 = self.params["W"].reshape(k * C, -1)
        grads = {"W": (cols.T @ d2).reshape(self.params["W"].shape), "b": d2.sum(axis=0)}
        dcols = (d2 @ W2.T).reshape(B, Tp, k, C)
        dx = np.zeros((B, T, C))
        for j in range(k):
            dx[:, j : j + Tp, :] += dcols[:, :, j, :]
        return dx, grads


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params = {"W": np.zeros((in_dim, out_dim)), "b": np.zeros(out_dim)}

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}

    def init(self, rng):
        lim = math.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.params["W"] = rng.uniform(-lim, lim, size=(self.in_dim, self.out_dim))
        self.params["b"] = np.zeros(self.out_dim)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"dense expects {self.in_dim} inputs, got {x.shape[-1]}")
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, dout, x):
        return dout @ self.params["W"].T, {"W": x.T @ dout, "b": dout.sum(axis=0)}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask):
        return dout * mask, {}


class GlobalTemporalPool(Layer):
    """Mean over the time axis: ``[B, T, C] -> [B, C]``."""

    kind = "pool"

    def forward(self, x):
        return x.mean(axis=1), x.shape

    def backward(self, dout, shape):
        B, T, C = shape
        return np.broadcast_to(dout[:, None, :] / T, shape).copy(), {}


_LAYER_KINDS = {cls.kind: cls for cls in (Conv1D, Dense, ReLU, GlobalTemporalPool)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    cls = _LAYER_KINDS[spec.pop("kind")]
    return cls(**spec)


@dataclass
class ArchitectureConfig:
    conv_channels: tuple[int, ...] = (16, 16, 32, 32)
    kernel_size: int = 9
    dense_dim: int = 64

    def to_dict(self):
        return {"conv_channels": list(self.conv_channels), "kernel_size": self.kernel_size,
                "dense_dim": self.dense_dim}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "conv_channels" in d:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def build_layers(n_channels: int, arch: ArchitectureConfig | None = None) -> list[Layer]:
    arch = arch or ArchitectureConfig()
    layers: list[Layer] = []
    c = n_channels
    for out in arch.conv_channels:
        layers += [Conv1D(c, out, arch.kernel_size), ReLU()]
        c = out
    layers += [GlobalTemporalPool(), Dense(c, arch.dense_dim), ReLU(), Dense(arch.dense_dim, 2)]
    return layers


class NeuralModel:
    """Sequential network ending in two logits; ``frozen[i]`` stops updates of layer i.

    Inputs pass through a fixed per-channel standardization ``(x - input_mean) / input_scale``
    before the first layer. It defaults to the identity and is set from the training
    windows by :meth:`fit_input_standardization`; it is never trained.
    """

    def __init__(self, layers: list[Layer], frozen: list[bool] | None = None, seed: int = 0):
        self.layers = layers
        self.frozen = list(frozen) if frozen is not None else [False] * len(layers)
        self.seed = seed
        self.train_config: dict = {}
        c = self.n_channels
        self.input_mean = np.zeros(c)
        self.input_scale = np.ones(c)

    @classmethod
    def create(cls, n_channels: int, arch: ArchitectureConfig | None = None, seed: int = 0):
        model = cls(build_layers(n_channels, arch), seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        for layer in model.layers:
            layer.init(rng)
        return model

    @property
    def n_channels(self) -> int:
        first = self.layers[0]
        return first.in_channels if isinstance(first, Conv1D) else first.in_dim

    @property
    def weight_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.has_weights]

    @property
    def representation_index(self) -> int:
        """Number of leading layers producing the penultimate representation."""
        return len(self.layers) - 1

    @property
    def representation_dim(self) -> int:
        return self.layers[-1].in_dim

    def spec(self) -> list[dict]:
        return [l.spec() for l in self.layers]

    def copy(self) -> "NeuralModel":
        return copy.deepcopy(self)

    def fit_input_standardization(self, X) -> None:
        X = np.asarray(X, dtype=np.float64)
        self.input_mean = X.mean(axis=(0, 1))
        sd = X.std(axis=(0, 1))
        self.input_scale = np.where(sd > 1e-12, sd, 1.0)

    def freeze_prefix(self, n_weight_layers: int) -> None:
        wl = self.weight_layers
        for rank, i in enumerate(wl):
            self.frozen[i] = rank < n_weight_layers

    def forward(self, x, upto: int | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        x = (x - self.input_mean) / self.input_scale
        caches = []
        for layer in self.layers[: upto if upto is not None else len(self.layers)]:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dout, caches, upto: int | None = None):
        """Backpropagate ``dout`` (gradient at the output of ``layers[upto-1]``).

        Returns per-layer gradient dicts; frozen layers get zero tensors.
        """
        n = upto if upto is not None else len(self.layers)
        grads: list[dict] = [{k: np.zeros_like(v) for k, v in l.params.items()} for l in self.layers]
        for i in range(n - 1, -1, -1):
            dout, g = self.layers[i].backward(dout, caches[i])
            if not self.frozen[i]:
                grads[i] = g
        return grads

    def logits(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def representation(self, X) -> np.ndarray:
        return self.forward(X, upto=self.representation_index)[0]

    def predict_scores(self, X, batch_size: int = 512) -> np.ndarray:
        """Softmax probability of the FOG class."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != self.n_channels:
            raise DimensionMismatch(f"expected [n, T, {self.n_channels}] windows, got {X.shape}")
        out = [softmax_fog(self.logits(X[i : i + batch_size])) for i in range(0, X.shape[0], batch_size)]
        return np.concatenate(out) if out else np.empty(0)

    def get_params(self) -> list[dict]:
        return [{k: v.copy() for k, v in l.params.items()} for l in self.layers]

    def set_params(self, params: list[dict]) -> None:
        for l, p in zip(self.layers, params):
            l.params = {k: v.copy() for k, v in p.items()}


def softmax_fog(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    d = np.clip(z[..., 0] - z[..., 1], -700, 700)
    return 1.0 / (1.0 + np.exp(d))


def weighted_cross_entropy(logits, labels, class_weights=(1.0, 1.0)):
    """Class-weighted mean softmax cross-entropy and its gradient w.r.t. the logits.

    The mean divides by the summed sample weights.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    w = np.asarray(class_weights, dtype=np.float64)[y]
    wsum = w.sum()
    rows = np.arange(z.shape[0])
    loss = -(w * logp[rows, y]).sum() / wsum
    dz = e / s
    dz[rows, y] -= 1.0
    dz *= (w / wsum)[:, None]
    return loss, dz


def forward_backward(model: NeuralModel, batch, labels, class_weights=(1.0, 1.0)):
    """Loss and exact analytic gradients for every layer (zeros where frozen)."""
    out, caches = model.forward(batch)
    loss, dz = weighted_cross_entropy(out, labels, class_weights)
    return loss, model.backward(dz, caches)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    class_weights: tuple[float, float] | None = None  # None -> inverse class frequency
    momentum: float = 0.9
    rng_seed: int = 0
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, batch_size must be positive and epochs non-negative")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate, "epochs": self.epochs, "batch_size": self.batch_size,
            "class_weights": list(self.class_weights) if self.class_weights else None,
            "momentum": self.momentum, "rng_seed": self.rng_seed, "arch": self.arch.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("arch") is not None:
            d["arch"] = ArchitectureConfig.from_dict(d["arch"])
        else:
            d.pop("arch", None)
        if d.get("class_weights") is not None:
            d["class_weights"] = tuple(d["class_weights"])
        return cls(**d)


def inverse_frequency_weights(labels) -> tuple[float, float]:
    y = np.asarray(labels)
    n = y.shape[0]
    n1 = int(y.sum())
    return (n / (2.0 * (n - n1)), n / (2.0 * n1))


GradHook = Callable[[NeuralModel, np.ndarray, list], list]
# a batch loss this many times the first batch's counts as divergence; the stable
# log-softmax keeps runaway losses finite long after the weights have blown up
DIVERGED_LOSS_RATIO = 1e3


def sgd_fit(model: NeuralModel, X, y, cfg: TrainConfig, validation=None, grad_hook: GradHook | None = None):
    """Minibatch SGD with momentum; updates ``model`` in place and returns it.

    ``grad_hook(model, batch_index, grads)`` may replace the predictor gradients
    (used by adversarial debiasing). With a validation ``(X, y)`` pair the
    weights of the epoch with the best macro F1 are restored at the end.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if np.unique(y).size < 2:
        raise SingleClassTraining("training labels contain a single class")
    weights = cfg.class_weights or inverse_frequency_weights(y)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed).spawn(2)[1])
    velocity = [{k: np.zeros_like(v) for k, v in l.params.items()} for l in model.layers]
    best_f1, best_params = -1.0, None
    n = X.shape[0]
    first_loss = None
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = forward_backward(model, X[idx], y[idx], weights)
            if first_loss is None:
                first_loss = loss
            if not np.isfinite(loss) or loss > DIVERGED_LOSS_RATIO * max(first_loss, 1e-3):
                raise DivergedLoss(f"loss became {loss}")
            if grad_hook is not None:
                grads = grad_hook(model, idx, grads)
            for i, layer in enumerate(model.layers):
                if model.frozen[i]:
                    continue
                for k, g in grads[i].items():
                    v = velocity[i][k]
                    v *= cfg.momentum
                    v -= cfg.learning_rate * g
                    layer.params[k] = layer.params[k] + v
        if validation is not None:
            Xv, yv = validation
            f1 = macro_f1((model.predict_scores(Xv) >= 0.5).astype(int), yv)
            if f1 > best_f1:
                best_f1, best_params = f1, model.get_params()
    if best_params is not None:
        model.set_params(best_params)
    return model


def train_neural(windows, labels, cfg: TrainConfig | None = None, validation=None) -> NeuralModel:
    cfg = cfg or TrainConfig()
    X = np.asarray(windows, dtype=np.float64)
    if np.unique(np.asarray(labels)).size < 2:
        raise SingleClassTraining("training labels contain a single class")
    model = NeuralModel.create(X.shape[2], cfg.arch, cfg.rng_seed)
    model.fit_input_standardization(X)
    model.train_config = cfg.to_dict()
    return sgd_fit(model, X, labels, cfg, validation)


def transfer_finetune(pretrained: NeuralModel, target_windows, labels, freeze_prefix: int = 2,
                      cfg: TrainConfig | None = None, validation=None) -> NeuralModel:
    """Fine-tune a copy of ``pretrained`` with its first ``freeze_prefix`` weight layers frozen."""
    cfg = cfg or TrainConfig()
    X = np.asarray(target_windows, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != pretrained.n_channels:
        raise ShapeIncompatible(
            f"target windows {X.shape} incompatible with a {pretrained.n_channels}-channel model"
        )
    model = pretrained.copy()
    model.freeze_prefix(freeze_prefix)
    model.train_config = cfg.to_dict()
    return sgd_fit(model, X, labels, cfg, validation)
