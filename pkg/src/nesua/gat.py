"""Two-layer graph attention network with a per-node softmax readout.

Each layer scores every node pair from a shared attention vector over
linearly transformed features, normalizes scores over the adjacency
neighborhood (self-loops included), and mixes the transformed features
with those weights. The readout maps final embeddings to one soft
association row per UE on the cell simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import HardAssociation
from .errors import ConfigError, ShapeError
from .scenario import GraphInstance

PARAM_NAMES = ("gat1.W", "gat1.a", "gat2.W", "gat2.a", "readout.Q", "readout.B")

_ACTIVATIONS = {
    "relu": ad.relu,
    "identity": lambda t: t,
}


@dataclass(frozen=True)
class GatConfig:
    """Architecture knobs; defaults give the full-size model."""

    hidden_dim: int = 512
    negative_slope: float = 0.2
    activation: str = "relu"
    readout_activation: str = "relu"
    heads: int = 1  # reserved; only single-head attention is implemented

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.negative_slope < 0:
            raise ConfigError(f"negative_slope must be >= 0, got {self.negative_slope}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.readout_activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown readout_activation {self.readout_activation!r}")
        if self.heads != 1:
            raise ConfigError("only heads=1 is supported")

    def to_dict(self):
        return {
            "hidden_dim": self.hidden_dim,
            "negative_slope": self.negative_slope,
            "activation": self.activation,
            "readout_activation": self.readout_activation,
            "heads": self.heads,
        }


@dataclass
class GatLayerParams:
    """One attention layer: transform W (d_out x d_in), scorer a (2 d_out)."""

    w: ad.Tensor
    a: ad.Tensor
    negative_slope: float


@dataclass
class GatModel:
    layer1: GatLayerParams
    layer2: GatLayerParams
    readout_q: ad.Tensor  # (hidden, n_cells)
    readout_b: ad.Tensor  # (n_cells,)
    config: GatConfig
    feat_dim: int
    n_cells: int

    def parameters(self) -> list[ad.Tensor]:
        return [
            self.layer1.w, self.layer1.a,
            self.layer2.w, self.layer2.a,
            self.readout_q, self.readout_b,
        ]

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return dict(zip(PARAM_NAMES, self.parameters()))


def init_model(feat_dim: int, n_cells: int, cfg: GatConfig, seed: int) -> GatModel:
    """Seed-controlled uniform init in +-sqrt(6/(fan_in+fan_out))."""
    rng = np.random.default_rng(seed)
    h = cfg.hidden_dim

    def uniform(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return ad.parameter(rng.uniform(-lim, lim, size=shape))

    layer1 = GatLayerParams(
        w=uniform((h, feat_dim), feat_dim, h),
        a=uniform((2 * h,), 2 * h, 1),
        negative_slope=cfg.negative_slope,
    )
    layer2 = GatLayerParams(
        w=uniform((h, h), h, h),
        a=uniform((2 * h,), 2 * h, 1),
        negative_slope=cfg.negative_slope,
    )
    return GatModel(
        layer1=layer1,
        layer2=layer2,
        readout_q=uniform((h, n_cells), h, n_cells),
        readout_b=ad.parameter(np.zeros(n_cells)),
        config=cfg,
        feat_dim=feat_dim,
        n_cells=n_cells,
    )


def _transformed(h: ad.Tensor, layer: GatLayerParams) -> ad.Tensor:
    return ad.matmul(h, ad.transpose(layer.w))


def attention_scores(h: ad.Tensor, layer: GatLayerParams) -> ad.Tensor:
    """Pairwise scores rho(u,v) for all node pairs.

    The scorer splits into a source and a destination half, so the K*K
    pair matrix is a broadcast sum of two length-K projections instead of
    K^2 concatenations.
    """
    hw = _transformed(h, layer)
    k, d = hw.shape
    if layer.a.shape != (2 * d,):
        raise ShapeError(
            f"attention vector {layer.a.shape} does not fit width {d}"
        )
    src = ad.matmul(hw, ad.slice_rows(layer.a, 0, d))
    dst = ad.matmul(hw, ad.slice_rows(layer.a, d, 2 * d))
    pair = ad.add(ad.reshape(src, (k, 1)), ad.reshape(dst, (1, k)))
    return ad.leaky_relu(pair, layer.negative_slope)


def attention_weights(h: ad.Tensor, adjacency, layer: GatLayerParams) -> ad.Tensor:
    """Scores normalized over each node's neighborhood; zero off-edges."""
    return ad.row_softmax_masked(attention_scores(h, layer), adjacency)


def gat_layer(
    h: ad.Tensor, adjacency, layer: GatLayerParams, activation: str = "relu"
) -> ad.Tensor:
    """One attention round: mix transformed neighbor features with the
    normalized attention weights, then apply the nonlinearity."""
    att = attention_weights(h, adjacency, layer)
    mixed = ad.matmul(att, _transformed(h, layer))
    return _ACTIVATIONS[activation](mixed)


def readout(h_final: ad.Tensor, model: GatModel) -> ad.Tensor:
    """Per-node soft association over cells."""
    logits = ad.add(ad.matmul(h_final, model.readout_q), model.readout_b)
    logits = _ACTIVATIONS[model.config.readout_activation](logits)
    k = h_final.shape[0]
    return ad.row_softmax_masked(logits, np.ones((k, model.n_cells)))


def forward(g: GraphInstance, model: GatModel) -> ad.Tensor:
    """Soft association matrix S for one graph instance."""
    if g.features.shape[1] != model.feat_dim:
        raise ShapeError(
            f"feature width {g.features.shape[1]} vs model "
            f"width {model.feat_dim}"
        )
    h0 = ad.constant(g.features)
    h1 = gat_layer(h0, g.adjacency, model.layer1, model.config.activation)
    h2 = gat_layer(h1, g.adjacency, model.layer2, model.config.activation)
    return readout(h2, model)


def harden(s) -> HardAssociation:
    """Per-row argmax of the soft association; ties to the lowest index."""
    values = s.values if isinstance(s, ad.Tensor) else np.asarray(s)
    return HardAssociation(
        assignment=np.argmax(values, axis=1), n_cells=values.shape[1]
    )


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, model: GatModel, extra: dict | None = None):
    """Self-describing JSON: named parameter tensors plus hyperparameters."""
    doc = {
        "params": [
            {
                "name": name,
                "shape": list(t.shape),
                "values": t.values.reshape(-1).tolist(),
            }
            for name, t in model.named_parameters().items()
        ],
        "gat": {
            **model.config.to_dict(),
            "feat_dim": model.feat_dim,
            "n_cells": model.n_cells,
        },
    }
    for key, value in (extra or {}).items():
        doc[key] = value
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[GatModel, dict]:
    """Rebuild the model; everything beyond params and gat keys is passed
    back untouched."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    meta = doc["gat"]
    cfg = GatConfig(
        hidden_dim=meta["hidden_dim"],
        negative_slope=meta["negative_slope"],
        activation=meta["activation"],
        readout_activation=meta["readout_activation"],
        heads=meta.get("heads", 1),
    )
    by_name = {}
    for entry in doc["params"]:
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        by_name[entry["name"]] = ad.parameter(values)
    missing = [n for n in PARAM_NAMES if n not in by_name]
    if missing:
        raise ConfigError(f"checkpoint lacks parameters: {missing}")
    model = GatModel(
        layer1=GatLayerParams(
            w=by_name["gat1.W"], a=by_name["gat1.a"],
            negative_slope=cfg.negative_slope,
        ),
        layer2=GatLayerParams(
            w=by_name["gat2.W"], a=by_name["gat2.a"],
            negative_slope=cfg.negative_slope,
        ),
        readout_q=by_name["readout.Q"],
        readout_b=by_name["readout.B"],
        config=cfg,
        feat_dim=meta["feat_dim"],
        n_cells=meta["n_cells"],
    )
    leftover = {k: v for k, v in doc.items() if k not in ("params", "gat")}
    return model, leftover
