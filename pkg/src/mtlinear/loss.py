"""Error-scaled weighted MSE objective and its exact gradients.

Per cluster with k variates and horizon h, the objective on a batch of B
windows is

    loss = 1/(k*h*B) * sum_b sum_{i,j} w_{i,j} * (pred_{b,i,j} - y_{b,i,j})^2

where the penalty w_{i,j} = (K_j * H_i)^(-a) is built from the batch's
absolute-error matrix: K_j is the mean error across variates at horizon step
j, H_i the mean error across horizon steps for variate i. Weights are treated
as constants (never differentiated through). The 1/(k*h) normalization keeps
reported losses comparable across cluster sizes; it only rescales gradients.

Gradients are analytic. Every head variant's forward is affine in the weights
(see heads.transform_inputs), so for each weight matrix

    d loss / d Theta_m = 2/(k*h*B) * sum_b Z_m,b @ (s_b * W * R_b)

with Z the design, s the variant's per-variate output scale, and R the
residual matrix of the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import LinearHead, transform_inputs

PENALTY_EPS = 1e-8


@dataclass(frozen=True)
class ErrorMatrix:
    """Batch-averaged absolute errors, one row per variate, one column per
    horizon step."""

    e: np.ndarray

    def __post_init__(self):
        if self.e.ndim != 2:
            raise ValueError(f"error matrix must be 2-d, got shape {self.e.shape}")
        if not np.all(np.isfinite(self.e)) or self.e.min() < 0:
            raise ValueError("error matrix entries must be finite and nonnegative")


@dataclass(frozen=True)
class PenaltyWeights:
    """Strictly positive per-(variate, horizon) loss weights with exponent a."""

    w: np.ndarray
    a: int

    def __post_init__(self):
        if not np.all(self.w > 0):
            raise ValueError("penalty weights must be strictly positive")


def penalty_weights(e: ErrorMatrix, a: int) -> PenaltyWeights:
    """Weights w_{i,j} = max(K_j * H_i, eps)^(-a).

    K_j = column means of e (over variates), H_i = row means (over horizons).
    The floor guards exactly-zero errors without disturbing the exact
    homogeneity w(c*e) = c^(-2a) * w(e) away from the floor. a = 0 yields
    all-ones weights, reducing the objective to plain MSE.
    """
    if a not in (0, 1, 2):
        raise ValueError(f"penalty exponent must be 0, 1, or 2, got {a}")
    mat = e.e
    if a == 0:
        return PenaltyWeights(w=np.ones_like(mat), a=0)
    col_means = mat.mean(axis=0)          # K_j, per horizon step
    row_means = mat.mean(axis=1)          # H_i, per variate
    products = np.maximum(np.outer(row_means, col_means), PENALTY_EPS)
    # strict positivity survives overflow/underflow at absurd error scales
    w = np.maximum(products ** (-float(a)), np.finfo(np.float64).tiny)
    return PenaltyWeights(w=w, a=a)


def forward_residuals(head: LinearHead, lookbacks, targets, label=None):
    """Transform inputs once; return (designs, scale, residuals (B, k, h))."""
    designs, scale, offset = transform_inputs(head, lookbacks)
    pred = np.zeros((lookbacks.shape[0], lookbacks.shape[2], head.horizon))
    for design, theta in zip(designs, head.thetas):
        pred += design.transpose(0, 2, 1) @ theta
    if scale is not None:
        pred *= scale[:, :, None]
    if offset is not None:
        pred += offset[:, :, None]
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError(
            f"non-finite prediction from head {label if label is not None else head.variant!r}")
    if targets.shape != (lookbacks.shape[0], head.horizon, lookbacks.shape[2]):
        raise ValueError(f"target batch shape {targets.shape} does not match "
                         f"(B, h={head.horizon}, k={lookbacks.shape[2]})")
    residual = pred - targets.transpose(0, 2, 1)
    return designs, scale, residual


def error_matrix(head: LinearHead, lookbacks, targets, label=None) -> ErrorMatrix:
    """Absolute residuals |pred - y| averaged over the batch, shape (k, h)."""
    _, _, residual = forward_residuals(head, lookbacks, targets, label)
    return ErrorMatrix(e=np.abs(residual).mean(axis=0))


def loss_from_residual(residual, w):
    b, k, h = residual.shape
    return float(np.sum(w.w * residual ** 2) / (k * h * b))


def gradient_from_parts(designs, scale, residual, w):
    b, k, h = residual.shape
    weighted = w.w * residual
    if scale is not None:
        weighted = weighted * scale[:, :, None]
    factor = 2.0 / (k * h * b)
    return [factor * np.tensordot(design, weighted, axes=([0, 2], [0, 1]))
            for design in designs]


def weighted_loss(head: LinearHead, lookbacks, targets, w: PenaltyWeights,
                  label=None) -> float:
    """Scalar weighted MSE of the head on a batch."""
    _, _, residual = forward_residuals(head, lookbacks, targets, label)
    return loss_from_residual(residual, w)


def unweighted_mse(head: LinearHead, lookbacks, targets, label=None) -> float:
    """Plain MSE (all-ones weights); the validation and reporting metric."""
    _, _, residual = forward_residuals(head, lookbacks, targets, label)
    return float(np.mean(residual ** 2))


def analytic_gradient(head: LinearHead, lookbacks, targets, w: PenaltyWeights,
                      label=None):
    """Exact gradient of weighted_loss w.r.t. each weight matrix.

    Returns a list of arrays shaped like head.thetas. Batch-averaged with the
    same 1/(k*h*B) normalization as the loss, so it agrees with central finite
    differences to rounding error.
    """
    designs, scale, residual = forward_residuals(head, lookbacks, targets, label)
    grads = gradient_from_parts(designs, scale, residual, w)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient from head {label if label is not None else head.variant!r}")
    return grads


def loss_and_gradient(head: LinearHead, lookbacks, targets, w: PenaltyWeights,
                      label=None):
    """One fused pass returning (loss, gradients, error matrix); what a
    training step needs without re-running the input transform."""
    designs, scale, residual = forward_residuals(head, lookbacks, targets, label)
    loss = loss_from_residual(residual, w)
    grads = gradient_from_parts(designs, scale, residual, w)
    return loss, grads, ErrorMatrix(e=np.abs(residual).mean(axis=0))


def lipschitz_bound(design: np.ndarray, w: np.ndarray) -> float:
    """Gradient Lipschitz constant 2 * ||sum_j X diag(w_:,j) X^T||_F.

    Args:
        design: (d, n) matrix whose columns are the per-variate input vectors.
        w: (n, h) positive weights.

    The sum over horizon columns collapses to a single diagonal scaling by the
    row sums of w. For an identity design with unit weights and h = 1 this is
    2 * sqrt(n).
    """
    design = np.asarray(design, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if design.ndim != 2 or w.ndim != 2 or w.shape[0] != design.shape[1]:
        raise ValueError(f"design {design.shape} and weights {w.shape} disagree")
    gram = (design * w.sum(axis=1)) @ design.T
    return 2.0 * float(np.linalg.norm(gram, ord="fro"))


def head_design_matrix(head: LinearHead, lookbacks) -> np.ndarray:
    """Joint design matrix of a head on a batch: the variant-transformed,
    scale-absorbed per-variate columns of every window, with multi-matrix
    variants stacked vertically. Shape (n_matrices * d, B * k)."""
    designs, scale, _ = transform_inputs(head, lookbacks)
    if scale is not None:
        designs = [d * scale[:, None, :] for d in designs]
    stacked = np.concatenate(designs, axis=1)        # (B, M*d, k)
    return np.concatenate(list(stacked), axis=1)     # hstack over the batch


def head_lipschitz(head: LinearHead, lookbacks, w: PenaltyWeights,
                   normalized: bool = False) -> float:
    """Lipschitz bound for a head's gradient on a batch.

    With normalized=False this is the literal design-matrix formula (an upper
    bound for the batch-normalized loss as well, since k*h*B >= 1). With
    normalized=True the 1/(k*h*B) loss normalization is applied, giving a
    tighter bound and hence a larger safe step size.
    """
    b, _, k = lookbacks.shape
    tiled = np.tile(w.w, (b, 1))
    bound = lipschitz_bound(head_design_matrix(head, lookbacks), tiled)
    if normalized:
        bound /= k * head.horizon * b
    return bound
