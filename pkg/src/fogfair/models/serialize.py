"""Versioned ``.npz`` persistence for forests and networks.

Arrays are stored verbatim (float64/int64) so reloaded models reproduce
predictions bitwise. A JSON header under the ``__meta__`` key records the
format version, model kind, architecture and training configuration.
"""
from __future__ import annotations

import json

import numpy as np

from .forest import ForestConfig, ForestModel, Tree
from .neural import NeuralModel, layer_from_spec

FORMAT_VERSION = 1
_TREE_FIELDS = ("feature", "threshold", "left", "right", "value")


def save_model(model, path) -> None:
    arrays = {}
    if isinstance(model, ForestModel):
        meta = {"kind": "forest", "n_features": model.n_features, "config": model.config.to_dict()}
        for i, t in enumerate(model.trees):
            for f in _TREE_FIELDS:
                arrays[f"tree{i}_{f}"] = getattr(t, f)
        meta["n_trees"] = len(model.trees)
        if model.oob_scores is not None:
            arrays["oob_scores"] = model.oob_scores
    elif isinstance(model, NeuralModel):
        meta = {"kind": "neural", "layers": model.spec(), "frozen": model.frozen,
                "seed": model.seed, "train_config": model.train_config}
        for i, layer in enumerate(model.layers):
            for k, v in layer.params.items():
                arrays[f"layer{i}_{k}"] = v
        arrays["input_mean"] = model.input_mean
        arrays["input_scale"] = model.input_scale
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    meta["format_version"] = FORMAT_VERSION
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {meta.get('format_version')}")
        if meta["kind"] == "forest":
            trees = [Tree(*(z[f"tree{i}_{f}"] for f in _TREE_FIELDS)) for i in range(meta["n_trees"])]
            model = ForestModel(trees, meta["n_features"], ForestConfig(**meta["config"]))
            if "oob_scores" in z.files:
                model.oob_scores = z["oob_scores"]
            return model
        layers = [layer_from_spec(s) for s in meta["layers"]]
        for i, layer in enumerate(layers):
            for k in layer.params:
                layer.params[k] = z[f"layer{i}_{k}"]
        model = NeuralModel(layers, meta["frozen"], meta["seed"])
        model.train_config = meta["train_config"]
        model.input_mean = z["input_mean"]
        model.input_scale = z["input_scale"]
        return model
