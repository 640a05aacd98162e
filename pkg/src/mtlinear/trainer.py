"""Training harness: one independent stochastic-gradient loop per cluster head.

Heads share nothing but the (immutable) normalized series and the batch
shuffle order, so they can train sequentially or in parallel with
bitwise-identical results. Each head owns its RNG stream (derived from the
run seed and its cluster index) and its own early-stopping clock; training
per head ends when its validation MSE has not improved for `patience` epochs,
and the best-validation snapshot is what the ensemble keeps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import SeriesFrame, fit_normalizer, windows
from .diagnostics import (ConflictLedger, GradErrorTrace, conflict_flags,
                          per_variate_gradients,
                          per_variate_gradients_from_parts)
from .grouping import VariateGrouping, cluster, correlation_matrix
from .heads import HeadEnsemble, LinearHead, init_head
from .loss import (ErrorMatrix, PenaltyWeights, forward_residuals,
                   gradient_from_parts, loss_from_residual, penalty_weights)
from .optimizers import make_optimizer

EVAL_BATCH = 512


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    variant: str = "nlinear"
    lookback: int = 96
    horizon: int = 96
    alpha_bar: float = math.pi / 2
    a: int = 1
    lr: float = 0.01
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    normalize: bool = True
    use_bias: bool = True
    ma_kernel: int = 25
    penalty_refresh: str = "batch"      # "batch" | "ema" | "fixed"
    ema_beta: float = 0.9
    lr_schedule: str = "none"           # "none" | "halving"
    diagnostics: bool = False
    diagnostics_mode: str = "per_step"  # "per_step" | "probe_epoch"
    jobs: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.a not in (0, 1, 2):
            raise ValueError(f"penalty exponent must be 0, 1, or 2, got {self.a}")
        if self.penalty_refresh not in ("batch", "ema", "fixed"):
            raise ValueError(f"unknown penalty_refresh {self.penalty_refresh!r}")
        if self.diagnostics_mode not in ("per_step", "probe_epoch"):
            raise ValueError(f"unknown diagnostics_mode {self.diagnostics_mode!r}")


@dataclass
class HeadTrainState:
    """Mutable per-head training state."""

    head: LinearHead
    optimizer: object
    best_thetas: list
    best_val: float = math.inf
    epochs_since_improvement: int = 0
    stopped: bool = False
    aborted: bool = False
    ema_error: np.ndarray = None
    fixed_weights: PenaltyWeights = None
    step: int = 0


@dataclass
class TrainResult:
    ensemble: HeadEnsemble
    frame: SeriesFrame                 # the (normalized) frame training used
    normalizer: object
    grouping: VariateGrouping
    similarity: object
    log: list
    head_summaries: list
    conflicts: ConflictLedger = None
    trace: GradErrorTrace = None


def _head_weights(state: HeadTrainState, error: ErrorMatrix, config: TrainConfig) -> PenaltyWeights:
    """Penalty weights for the current step under the configured refresh mode."""
    if config.penalty_refresh == "batch":
        return penalty_weights(error, config.a)
    if config.penalty_refresh == "ema":
        if state.ema_error is None:
            state.ema_error = error.e.copy()
        else:
            state.ema_error = config.ema_beta * state.ema_error \
                + (1.0 - config.ema_beta) * error.e
        return penalty_weights(ErrorMatrix(e=state.ema_error), config.a)
    # fixed: freeze the first batch's weights for the whole run
    if state.fixed_weights is None:
        state.fixed_weights = penalty_weights(error, config.a)
    return state.fixed_weights


def train_step(head: LinearHead, batch, config: TrainConfig, state: HeadTrainState,
               label=None, capture: bool = False):
    """One optimizer update from the weighted analytic gradient.

    Returns a step record with the loss, gradient norm, and an error-matrix
    summary; with capture=True the record also carries the per-step tensors
    the diagnostics hooks need (no extra forward pass, no state change).
    """
    designs, scale, residual = forward_residuals(head, batch.lookbacks,
                                                 batch.targets, label)
    error = ErrorMatrix(e=np.abs(residual).mean(axis=0))
    w = _head_weights(state, error, config)
    loss = loss_from_residual(residual, w)
    grads = gradient_from_parts(designs, scale, residual, w)
    if not math.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError(f"non-finite loss/gradient at head {label}")
    state.optimizer.step(head.thetas, grads)
    state.step += 1
    record = {
        "loss": loss,
        "grad_norm": float(np.sqrt(sum(np.sum(g * g) for g in grads))),
        "error_mean": float(error.e.mean()),
    }
    if capture:
        record["_parts"] = (designs, scale, residual, error, w)
    return record


def _validation_mse(head: LinearHead, frame: SeriesFrame, config: TrainConfig,
                    label=None) -> float:
    total, count = 0.0, 0
    for batch in windows(frame, "val", config.lookback, config.horizon,
                         batch_size=EVAL_BATCH):
        _, _, residual = forward_residuals(head, batch.lookbacks, batch.targets, label)
        total += float(np.sum(residual ** 2))
        count += residual.size
    return total / count


def _probe_batch(frame: SeriesFrame, config: TrainConfig):
    """The first chronological train batch: a fixed probe for per-epoch
    conflict counting."""
    return next(windows(frame, "train", config.lookback, config.horizon,
                        batch_size=config.batch_size))


def train_single_head(head_index: int, members, sub_frame: SeriesFrame,
                      config: TrainConfig, seed_seq, n_variates: int) -> dict:
    """Train one cluster head to its own early stop. Pure function of its
    arguments, so parallel and sequential execution agree bitwise."""
    head = init_head(config.variant, config.lookback, config.horizon, seed_seq,
                     ma_kernel=config.ma_kernel, use_bias=config.use_bias)
    state = HeadTrainState(
        head=head,
        optimizer=make_optimizer(config.optimizer, config.lr,
                                 betas=config.adam_betas, eps=config.adam_eps),
        best_thetas=[t.copy() for t in head.thetas],
    )
    ledger = ConflictLedger(n_variates) if config.diagnostics else None
    trace = GradErrorTrace() if config.diagnostics else None
    capture = config.diagnostics and config.diagnostics_mode == "per_step"
    log = []
    stopped_epoch = None

    for epoch in range(1, config.max_epochs + 1):
        if config.lr_schedule == "halving":
            state.optimizer.lr = config.lr * 0.5 ** (epoch - 1)
        losses, norms = [], []
        try:
            for batch in windows(sub_frame, "train", config.lookback, config.horizon,
                                 batch_size=config.batch_size,
                                 shuffle_seed=(config.seed, epoch)):
                rec = train_step(head, batch, config, state, label=head_index,
                                 capture=capture)
                losses.append(rec["loss"])
                norms.append(rec["grad_norm"])
                if capture:
                    # instrument the pre-step state the update was computed from
                    designs, scale, residual, error, w = rec.pop("_parts")
                    grads = per_variate_gradients_from_parts(designs, scale,
                                                             residual, w)
                    ledger.record(conflict_flags(grads, drop_bias_row=config.use_bias),
                                  members)
                    trace.record(members, state.step, error.e.mean(axis=1), grads)
        except FloatingPointError as exc:
            state.aborted = True
            warnings.warn(f"head {head_index} diverged at epoch {epoch}: {exc}; "
                          f"keeping best snapshot")
            log.append({"epoch": epoch, "head": head_index, "train_loss": None,
                        "val_mse": None, "grad_norm": None, "stopped": True,
                        "aborted": True})
            break

        if config.diagnostics and config.diagnostics_mode == "probe_epoch":
            probe = _probe_batch(sub_frame, config)
            grads = per_variate_gradients(head, probe.lookbacks, probe.targets)
            ledger.record(conflict_flags(grads, drop_bias_row=config.use_bias), members)
        if ledger is not None:
            ledger.end_epoch()

        val = _validation_mse(head, sub_frame, config, label=head_index)
        if val < state.best_val:
            state.best_val = val
            state.best_thetas = [t.copy() for t in head.thetas]
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= config.patience:
                state.stopped = True
                stopped_epoch = epoch
        log.append({"epoch": epoch, "head": head_index,
                    "train_loss": float(np.mean(losses)),
                    "val_mse": val,
                    "grad_norm": float(np.mean(norms)),
                    "stopped": state.stopped})
        if state.stopped:
            break

    head.thetas = state.best_thetas
    return {
        "index": head_index,
        "head": head,
        "log": log,
        "best_val": state.best_val,
        "stopped_epoch": stopped_epoch,
        "aborted": state.aborted,
        "ledger": ledger,
        "trace": trace,
    }


def prepare(frame: SeriesFrame, config: TrainConfig):
    """Shared front of the pipeline: normalize, correlate, cluster."""
    norm = fit_normalizer(frame) if config.normalize else None
    nframe = norm.transform_frame(frame) if norm is not None else frame
    sim = correlation_matrix(nframe)
    grouping = cluster(sim, config.alpha_bar)
    return nframe, norm, sim, grouping


def _sub_frame(frame: SeriesFrame, members) -> SeriesFrame:
    cols = list(members)
    return SeriesFrame(
        values=frame.values[:, cols],
        variate_names=tuple(frame.variate_names[i] for i in cols),
        timestamps=frame.timestamps,
        train_end=frame.train_end,
        val_end=frame.val_end,
        test_end=frame.test_end,
    )


def train(frame: SeriesFrame, config: TrainConfig) -> TrainResult:
    """Full pipeline: grouping, per-cluster head training, best-snapshot
    ensemble. See TrainConfig for every knob."""
    nframe, norm, sim, grouping = prepare(frame, config)
    jobs = [(i, members, _sub_frame(nframe, members), config,
             np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)),
             nframe.n_variates)
            for i, members in enumerate(grouping.clusters)]

    if config.jobs > 1 and len(jobs) > 1:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=config.jobs)(
            delayed(train_single_head)(*args) for args in jobs)
    else:
        outcomes = [train_single_head(*args) for args in jobs]

    outcomes.sort(key=lambda r: r["index"])
    ensemble = HeadEnsemble(heads=[r["head"] for r in outcomes],
                            grouping=grouping,
                            lookback=config.lookback, horizon=config.horizon,
                            variate_names=nframe.variate_names)
    log = sorted((row for r in outcomes for row in r["log"]),
                 key=lambda row: (row["epoch"], row["head"]))
    summaries = [{"head": r["index"], "best_val": r["best_val"],
                  "stopped_epoch": r["stopped_epoch"], "aborted": r["aborted"],
                  "n_variates": len(grouping.clusters[r["index"]])}
                 for r in outcomes]

    conflicts, trace = None, None
    if config.diagnostics:
        conflicts = ConflictLedger(nframe.n_variates)
        trace = GradErrorTrace()
        for r in outcomes:
            conflicts = conflicts.merge(r["ledger"])
            trace.extend(r["trace"])

    return TrainResult(ensemble=ensemble, frame=nframe, normalizer=norm,
                       grouping=grouping, similarity=sim, log=log,
                       head_summaries=summaries, conflicts=conflicts, trace=trace)


DEFAULT_ALPHA_GRID = (math.pi / 2, math.pi / 3, math.pi / 4, math.pi / 6)
DEFAULT_A_GRID = (1, 2)


@dataclass
class GridSearchResult:
    rows: list
    best_config: TrainConfig
    best_result: TrainResult
    best_row: dict


def _run_grid_cell(frame, config):
    from .evaluation import evaluate

    row = {"alpha_bar": config.alpha_bar, "a": config.a}
    try:
        result = train(frame, config)
        val = evaluate(result.ensemble, result.frame, "val")
        test = evaluate(result.ensemble, result.frame, "test")
        row.update(val_mse=val.mse, test_mse=test.mse, test_mae=test.mae,
                   n_clusters=result.grouping.n_clusters)
        return row, config, result
    except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
        row.update(val_mse=None, test_mse=None, test_mae=None, error=str(exc))
        return row, config, None


def grid_search(frame: SeriesFrame, base_config: TrainConfig,
                alpha_grid=DEFAULT_ALPHA_GRID, a_grid=DEFAULT_A_GRID,
                jobs: int = 1) -> GridSearchResult:
    """Train every (alpha_bar, a) cell; select by validation MSE.

    Ties prefer the smaller a, then the larger alpha_bar (fewer heads). Cell
    failures are recorded and skipped; raises only if every cell fails.
    jobs > 1 trains cells in parallel (heads within a cell then run
    sequentially); cells are independent, so results match sequential runs.
    """
    configs = [replace(base_config, alpha_bar=alpha, a=a,
                       jobs=1 if jobs > 1 else base_config.jobs)
               for alpha in alpha_grid for a in a_grid]
    if jobs > 1 and len(configs) > 1:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=jobs)(
            delayed(_run_grid_cell)(frame, c) for c in configs)
    else:
        outcomes = [_run_grid_cell(frame, c) for c in configs]

    rows, candidates = [], []
    for row, config, result in outcomes:
        rows.append(row)
        if result is not None:
            candidates.append((row["val_mse"], config.a, -config.alpha_bar,
                               row, config, result))
        else:
            warnings.warn(f"grid cell (alpha_bar={row['alpha_bar']:.4f}, "
                          f"a={row['a']}) failed: {row['error']}")
    if not candidates:
        raise RuntimeError("every grid cell failed")
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    _, _, _, best_row, best_config, best_result = candidates[0]
    return GridSearchResult(rows=rows, best_config=best_config,
                            best_result=best_result, best_row=best_row)
