"""Gradient-conflict counting and gradient-magnitude tracking.

A conflict between two variates is a negative inner product between their
task gradients. Per-variate gradients follow the task decomposition of the
weighted objective: g_i is variate i's contribution scaled by the cluster
size, so the k_g vectors average exactly to the head's total gradient.

Conflict inner products are taken over the data rows of each weight matrix
only: task directions live along the (transformed) variate vectors, and the
constant-1 augmentation row is shared by all tasks rather than a direction.
Dropping it preserves the exact identity that a variate and its negation
(with negated targets) produce equal gradients, hence zero conflicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .heads import LinearHead
from .loss import PenaltyWeights, forward_residuals


def per_variate_gradients_from_parts(designs, scale, residual,
                                     w: PenaltyWeights = None) -> np.ndarray:
    """Per-variate gradients from an already-computed forward pass (the
    tensors forward_residuals returns). Lets training instrument the exact
    pre-step state without a second forward."""
    b, k, h = residual.shape
    if w is None:
        w = PenaltyWeights(w=np.ones((k, h)), a=0)
    weighted = w.w * residual
    if scale is not None:
        weighted = weighted * scale[:, :, None]
    factor = 2.0 / (h * b)
    per_matrix = [factor * (design.transpose(2, 1, 0) @ weighted.transpose(1, 0, 2))
                  for design in designs]
    return np.stack(per_matrix, axis=1)


def per_variate_gradients(head: LinearHead, lookbacks, targets,
                          w: PenaltyWeights = None) -> np.ndarray:
    """Batch-averaged per-variate gradient tensors, shape (k, M, d, h).

    M is the head's number of weight matrices and d the augmented input
    length. The mean over the variate axis equals analytic_gradient exactly.
    Defaults to all-ones weights (the plain objective's task gradients).
    """
    designs, scale, residual = forward_residuals(head, lookbacks, targets)
    return per_variate_gradients_from_parts(designs, scale, residual, w)


def total_gradient_check(grads: np.ndarray, head: LinearHead, lookbacks, targets,
                         w: PenaltyWeights):
    """Max absolute deviation of mean-of-per-variate-gradients from the total
    analytic gradient (the decomposition identity)."""
    from .loss import analytic_gradient

    total = analytic_gradient(head, lookbacks, targets, w)
    mean = grads.mean(axis=0)
    return max(float(np.abs(mean[m] - total[m]).max()) for m in range(len(total)))


def conflict_flags(grads: np.ndarray, drop_bias_row: bool = True) -> np.ndarray:
    """Boolean k x k matrix: True where two variates' gradients conflict
    (negative inner product). Symmetric, False diagonal."""
    if drop_bias_row:
        grads = grads[:, :, :-1, :]
    flat = grads.reshape(grads.shape[0], -1)
    dots = flat @ flat.T
    flags = dots < 0.0
    np.fill_diagonal(flags, False)
    return flags


def count_conflicts(grads: np.ndarray, drop_bias_row: bool = True) -> np.ndarray:
    return conflict_flags(grads, drop_bias_row=drop_bias_row)


@dataclass
class ConflictLedger:
    """Cumulative pairwise conflict counts over a training run.

    counts is k x k over the full variate set; per_epoch holds one increment
    matrix per epoch and sums to counts. Heads train independently, so each
    head accumulates only its own block; merge() combines ledgers.
    """

    n_variates: int
    counts: np.ndarray = None
    per_epoch: list = field(default_factory=list)
    _current: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_variates, self.n_variates), dtype=np.int64)
        if self._current is None:
            self._current = np.zeros_like(self.counts)

    def record(self, flags: np.ndarray, members) -> None:
        """Add one step's conflict flags for a head's variate subset."""
        idx = np.asarray(list(members))
        self._current[np.ix_(idx, idx)] += flags.astype(np.int64)

    def end_epoch(self) -> None:
        self.per_epoch.append(self._current)
        self.counts = self.counts + self._current
        self._current = np.zeros_like(self.counts)

    def merge(self, other: "ConflictLedger") -> "ConflictLedger":
        """Elementwise-sum merge; epochs of different lengths are zero-padded."""
        if other.n_variates != self.n_variates:
            raise ValueError("cannot merge ledgers over different variate sets")
        merged = ConflictLedger(self.n_variates)
        merged.counts = self.counts + other.counts
        n = max(len(self.per_epoch), len(other.per_epoch))
        zero = np.zeros_like(merged.counts)
        merged.per_epoch = [
            (self.per_epoch[i] if i < len(self.per_epoch) else zero)
            + (other.per_epoch[i] if i < len(other.per_epoch) else zero)
            for i in range(n)
        ]
        return merged

    def total_conflicts(self) -> int:
        # Each conflict appears twice in the symmetric matrix.
        return int(self.counts.sum() // 2)


@dataclass
class GradErrorTrace:
    """Per-variate (error, gradient norm) samples along training, the raw
    material for error-vs-magnitude plots."""

    records: list = field(default_factory=list)

    def record(self, members, step: int, errors, grads: np.ndarray) -> None:
        norms = np.linalg.norm(grads.reshape(grads.shape[0], -1), axis=1)
        for local, variate in enumerate(members):
            self.records.append({
                "variate": int(variate),
                "step": int(step),
                "error": float(errors[local]),
                "grad_norm": float(norms[local]),
            })

    def extend(self, other: "GradErrorTrace") -> None:
        self.records.extend(other.records)


def correlation_vs_conflict_report(ledger: ConflictLedger, sim, names=None) -> dict:
    """Per-pair (|corr|, total conflicts) records plus their Spearman rank
    correlation. Pairs are unordered (i < j)."""
    k = ledger.n_variates
    names = list(names) if names is not None else [str(i) for i in range(k)]
    pairs = []
    corr_values, conflict_values = [], []
    for i in range(k):
        for j in range(i + 1, k):
            corr = float(sim.r_abs[i, j])
            conflicts = int(ledger.counts[i, j])
            pairs.append({
                "variate_a": names[i],
                "variate_b": names[j],
                "abs_corr": corr,
                "conflicts_total": conflicts,
            })
            corr_values.append(corr)
            conflict_values.append(conflicts)
    if len(pairs) > 1 and np.ptp(corr_values) > 0 and np.ptp(conflict_values) > 0:
        rank_corr = float(stats.spearmanr(corr_values, conflict_values).statistic)
    else:
        rank_corr = float("nan")
    return {"pairs": pairs, "rank_correlation": rank_corr,
            "n_epochs": len(ledger.per_epoch)}
