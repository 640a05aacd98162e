"""Per-cluster linear forecasting heads.

All four variants reduce to an affine map of the weights: the input window is
transformed into one or two design matrices Z (plus a per-variate scale s and
offset o that do not depend on the weights), and the prediction is

    pred = (sum_m Z_m^T Theta_m) * s + o

applied along the time axis. Keeping forward in this form lets the loss module
compute exact gradients for every variant from the same expression.

Variants:
    linear   - plain weights on the raw window.
    nlinear  - subtract the window's last value per variate, add it back after.
    dlinear  - moving-average trend + remainder, one weight matrix each.
    rlinear  - per-window instance normalization, inverted after the map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .grouping import VariateGrouping, grouping_from_dict, grouping_to_dict
from .validation import check_lengths

VARIANTS = ("linear", "nlinear", "dlinear", "rlinear")
DEFAULT_MA_KERNEL = 25
INSTANCE_NORM_EPS = 1e-8
CHECKPOINT_VERSION = 1


@dataclass
class LinearHead:
    """Weights for one variate cluster.

    thetas holds one (l+1) x h matrix (last row = bias via constant-1 input
    augmentation), or two for the dlinear variant (trend, remainder). With
    use_bias off the matrices are l x h.
    """

    variant: str
    lookback: int
    horizon: int
    thetas: list
    ma_kernel: int = DEFAULT_MA_KERNEL
    use_bias: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        expected = 2 if self.variant == "dlinear" else 1
        if len(self.thetas) != expected:
            raise ValueError(f"{self.variant} carries {expected} weight matrices, "
                             f"got {len(self.thetas)}")
        d = self.lookback + (1 if self.use_bias else 0)
        for theta in self.thetas:
            if theta.shape != (d, self.horizon):
                raise ValueError(f"weight matrix shape {theta.shape} inconsistent "
                                 f"with l={self.lookback}, h={self.horizon}")
            if not np.all(np.isfinite(theta)):
                raise ValueError("weight matrix contains non-finite entries")
        if self.variant == "dlinear" and self.ma_kernel % 2 == 0:
            raise ValueError(f"ma_kernel must be odd, got {self.ma_kernel}")

    @property
    def theta(self):
        if self.variant == "dlinear":
            raise AttributeError("dlinear heads carry theta_trend and theta_remainder")
        return self.thetas[0]

    @property
    def theta_trend(self):
        return self.thetas[0]

    @property
    def theta_remainder(self):
        return self.thetas[1]

    def copy(self) -> "LinearHead":
        return LinearHead(variant=self.variant, lookback=self.lookback,
                          horizon=self.horizon, thetas=[t.copy() for t in self.thetas],
                          ma_kernel=self.ma_kernel, use_bias=self.use_bias)


def moving_average(x: np.ndarray, kernel: int) -> np.ndarray:
    """Centered moving average along axis 1 with edge-replication padding.

    x: (B, l, k). Returns the trend with the same shape.
    """
    pad = (kernel - 1) // 2
    front = np.repeat(x[:, :1, :], pad, axis=1)
    back = np.repeat(x[:, -1:, :], pad, axis=1)
    padded = np.concatenate([front, x, back], axis=1)
    win = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=1)
    return win.mean(axis=-1)


def decompose(x: np.ndarray, kernel: int):
    """Split a batch of windows into (trend, remainder); their sum is x exactly."""
    trend = moving_average(x, kernel)
    return trend, x - trend


def transform_inputs(head: LinearHead, x: np.ndarray):
    """Variant-specific affine decomposition of a window batch.

    Args:
        x: lookbacks (B, l, k).

    Returns:
        designs: list of (B, d, k) arrays aligned with head.thetas
            (d = l+1 with the augmented constant-1 row).
        scale: (B, k) multiplier on the linear output, or None for identity.
        offset: (B, k) additive term, or None for zero.
    """
    if x.ndim != 3 or x.shape[1] != head.lookback:
        raise ValueError(f"lookback batch shape {x.shape} does not match l={head.lookback}")
    if head.variant == "linear":
        parts, scale, offset = [x], None, None
    elif head.variant == "nlinear":
        last = x[:, -1, :]
        parts, scale, offset = [x - last[:, None, :]], None, last
    elif head.variant == "dlinear":
        trend, remainder = decompose(x, head.ma_kernel)
        parts, scale, offset = [trend, remainder], None, None
    else:  # rlinear
        mean = x.mean(axis=1)
        std = x.std(axis=1) + INSTANCE_NORM_EPS
        parts, scale, offset = [(x - mean[:, None, :]) / std[:, None, :]], std, mean
    designs = [_augment(p) if head.use_bias else p for p in parts]
    return designs, scale, offset


def _augment(x: np.ndarray) -> np.ndarray:
    ones = np.ones((x.shape[0], 1, x.shape[2]), dtype=x.dtype)
    return np.concatenate([x, ones], axis=1)


def forward_batch(head: LinearHead, x: np.ndarray) -> np.ndarray:
    """Predict a batch: lookbacks (B, l, k) -> predictions (B, h, k)."""
    designs, scale, offset = transform_inputs(head, x)
    pred = np.zeros((x.shape[0], x.shape[2], head.horizon))
    for design, theta in zip(designs, head.thetas):
        pred += design.transpose(0, 2, 1) @ theta
    if scale is not None:
        pred *= scale[:, :, None]
    if offset is not None:
        pred += offset[:, :, None]
    return pred.transpose(0, 2, 1)


def forward(head: LinearHead, x: np.ndarray) -> np.ndarray:
    """Single-window forward: lookback (l, k) -> prediction (h, k)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d window, got shape {x.shape}")
    return forward_batch(head, x[None])[0]


def init_head(variant: str, l: int, h: int, seed, ma_kernel: int = DEFAULT_MA_KERNEL,
              use_bias: bool = True) -> LinearHead:
    """Seeded head: weights uniform in +-1/sqrt(d), bias row zero."""
    check_lengths(l, h)
    d = l + (1 if use_bias else 0)
    bound = 1.0 / math.sqrt(d)
    rng = np.random.default_rng(seed)
    n_matrices = 2 if variant == "dlinear" else 1
    thetas = []
    for _ in range(n_matrices):
        theta = rng.uniform(-bound, bound, size=(d, h))
        if use_bias:
            theta[-1, :] = 0.0
        thetas.append(theta)
    return LinearHead(variant=variant, lookback=l, horizon=h, thetas=thetas,
                      ma_kernel=ma_kernel, use_bias=use_bias)


@dataclass
class HeadEnsemble:
    """One head per variate cluster, routing columns by the grouping."""

    heads: list
    grouping: VariateGrouping
    lookback: int
    horizon: int
    variate_names: tuple = field(default=())

    def __post_init__(self):
        if len(self.heads) != self.grouping.n_clusters:
            raise ValueError(f"{len(self.heads)} heads for "
                             f"{self.grouping.n_clusters} clusters")

    @property
    def n_variates(self):
        return self.grouping.n_variates

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Lookbacks (B, l, k) -> predictions (B, h, k), columns in input order."""
        if x.ndim != 3 or x.shape[2] != self.n_variates:
            raise ValueError(f"lookback batch shape {x.shape} does not match "
                             f"k={self.n_variates}")
        out = np.empty((x.shape[0], self.horizon, x.shape[2]))
        for head, members in zip(self.heads, self.grouping.clusters):
            cols = list(members)
            out[:, :, cols] = forward_batch(head, x[:, :, cols])
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Single lookback (l, k) -> prediction (h, k)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"expected a 2-d window, got shape {x.shape}")
        return self.predict_batch(x[None])[0]


def _head_to_dict(head: LinearHead) -> dict:
    record = {
        "variant": head.variant,
        "l": head.lookback,
        "h": head.horizon,
        "use_bias": head.use_bias,
    }
    if head.variant == "dlinear":
        record["ma_kernel"] = head.ma_kernel
        record["theta_trend"] = head.thetas[0].tolist()
        record["theta_remainder"] = head.thetas[1].tolist()
    else:
        record["theta"] = head.thetas[0].tolist()
    return record


def _head_from_dict(d) -> LinearHead:
    if d["variant"] == "dlinear":
        thetas = [np.asarray(d["theta_trend"], dtype=np.float64),
                  np.asarray(d["theta_remainder"], dtype=np.float64)]
    else:
        thetas = [np.asarray(d["theta"], dtype=np.float64)]
    return LinearHead(variant=d["variant"], lookback=d["l"], horizon=d["h"],
                      thetas=thetas, ma_kernel=d.get("ma_kernel", DEFAULT_MA_KERNEL),
                      use_bias=d.get("use_bias", True))


def save_checkpoint(ensemble: HeadEnsemble, path, norm=None):
    """Write a versioned JSON checkpoint. Floats serialize via repr, which
    round-trips float64 exactly."""
    record = {
        "version": CHECKPOINT_VERSION,
        "l": ensemble.lookback,
        "h": ensemble.horizon,
        "variate_names": list(ensemble.variate_names),
        "grouping": grouping_to_dict(ensemble.grouping),
        "heads": [_head_to_dict(h) for h in ensemble.heads],
        "norm": norm.to_dict() if norm is not None else None,
    }
    with open(path, "w") as f:
        json.dump(record, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    """Read a checkpoint; returns (ensemble, normalizer-or-None)."""
    from .data import Normalizer

    with open(path) as f:
        record = json.load(f)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    ensemble = HeadEnsemble(
        heads=[_head_from_dict(d) for d in record["heads"]],
        grouping=grouping_from_dict(record["grouping"]),
        lookback=record["l"],
        horizon=record["h"],
        variate_names=tuple(record.get("variate_names", ())),
    )
    norm = Normalizer.from_dict(record["norm"]) if record.get("norm") else None
    return ensemble, norm
