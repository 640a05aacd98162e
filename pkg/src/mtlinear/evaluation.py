"""Test-set metrics, multi-horizon sweeps, and comparison tables.

All metrics are computed on the normalized scale (the benchmark convention;
every published baseline this work compares against reports normalized-scale
errors). MSE here equals the plain unweighted training objective evaluated on
the same windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import SeriesFrame, windows
from .heads import HeadEnsemble

EVAL_BATCH = 512


@dataclass(frozen=True)
class MetricRecord:
    dataset: str
    variant: str
    alpha_bar: float
    a: int
    lookback: int
    horizon: int
    mse: float
    mae: float
    seed: int

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("metrics must be nonnegative")

    def to_dict(self):
        return {
            "dataset": self.dataset, "variant": self.variant,
            "alpha_bar": self.alpha_bar, "a": self.a,
            "lookback": self.lookback, "horizon": self.horizon,
            "mse": self.mse, "mae": self.mae, "seed": self.seed,
        }


def evaluate(ensemble: HeadEnsemble, frame: SeriesFrame, split: str = "test",
             dataset: str = "", alpha_bar: float = float("nan"), a: int = 0,
             seed: int = 0) -> MetricRecord:
    """MSE and MAE averaged over every window, variate, and horizon step of
    one split. The frame must already be in model (normalized) space."""
    sq_sum, abs_sum, count = 0.0, 0.0, 0
    for batch in windows(frame, split, ensemble.lookback, ensemble.horizon,
                         batch_size=EVAL_BATCH):
        residual = ensemble.predict_batch(batch.lookbacks) - batch.targets
        sq_sum += float(np.sum(residual ** 2))
        abs_sum += float(np.sum(np.abs(residual)))
        count += residual.size
    return MetricRecord(
        dataset=dataset, variant=ensemble.heads[0].variant,
        alpha_bar=alpha_bar, a=a,
        lookback=ensemble.lookback, horizon=ensemble.horizon,
        mse=sq_sum / count, mae=abs_sum / count, seed=seed,
    )


@dataclass
class SweepResult:
    records: list       # one MetricRecord per (horizon, seed)
    per_horizon: list   # aggregate rows {horizon, mse_mean, mse_std, mae_mean, mae_std}
    average: dict       # mean over the per-horizon rows
    failures: list = None      # per-cell errors, if any


def _run_sweep_cell(frame, cell, dataset, alpha_grid, a_grid, grid_jobs=1):
    from .trainer import grid_search, train

    if alpha_grid is not None or a_grid is not None:
        grid = grid_search(frame, cell,
                           alpha_grid=alpha_grid or (cell.alpha_bar,),
                           a_grid=a_grid or (cell.a,), jobs=grid_jobs)
        result, used = grid.best_result, grid.best_config
    else:
        result, used = train(frame, cell), cell
    return evaluate(result.ensemble, result.frame, "test", dataset=dataset,
                    alpha_bar=used.alpha_bar, a=used.a, seed=cell.seed)


def horizon_sweep(frame: SeriesFrame, config, horizons, seeds=(0, 1, 2),
                  dataset: str = "", alpha_grid=None, a_grid=None,
                  jobs: int = 1) -> SweepResult:
    """Train and evaluate per horizon, repeated over seeds.

    When grids are given, each (horizon, seed) cell runs the full grid search
    and reports its validation winner's test metrics. Per-cell failures are
    recorded and excluded from the aggregates. jobs is split between sweep
    cells and each cell's grid; all cells are independent, so results do not
    depend on the schedule.
    """
    cells = [(horizon, seed) for horizon in horizons for seed in seeds]
    outer = min(jobs, len(cells)) if jobs > 1 else 1
    inner = max(1, jobs // outer)
    cell_jobs = inner if outer > 1 else getattr(config, "jobs", 1)
    configs = [replace(config, horizon=horizon, seed=seed,
                       jobs=1 if cell_jobs > 1 else cell_jobs)
               for horizon, seed in cells]
    grid_jobs = cell_jobs if (alpha_grid is not None or a_grid is not None) else 1

    def safe(cell_config):
        try:
            return _run_sweep_cell(frame, cell_config, dataset, alpha_grid,
                                   a_grid, grid_jobs=grid_jobs)
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            return {"horizon": cell_config.horizon, "seed": cell_config.seed,
                    "error": str(exc)}

    if outer > 1:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=outer)(delayed(safe)(c) for c in configs)
    else:
        outcomes = [safe(c) for c in configs]

    records = [r for r in outcomes if isinstance(r, MetricRecord)]
    failures = [r for r in outcomes if not isinstance(r, MetricRecord)]
    if not records:
        raise RuntimeError(f"every sweep cell failed: {failures}")
    for failure in failures:
        warnings.warn(f"sweep cell failed: {failure}")

    per_horizon = []
    for horizon in horizons:
        rows = [r for r in records if r.horizon == horizon]
        if not rows:
            continue
        mses = np.array([r.mse for r in rows])
        maes = np.array([r.mae for r in rows])
        per_horizon.append({
            "horizon": horizon,
            "mse_mean": float(mses.mean()), "mse_std": float(mses.std()),
            "mae_mean": float(maes.mean()), "mae_std": float(maes.std()),
            "n_seeds": len(rows),
        })
    average = {
        "horizon": "avg",
        "mse_mean": float(np.mean([row["mse_mean"] for row in per_horizon])),
        "mse_std": float(np.mean([row["mse_std"] for row in per_horizon])),
        "mae_mean": float(np.mean([row["mae_mean"] for row in per_horizon])),
        "mae_std": float(np.mean([row["mae_std"] for row in per_horizon])),
        "n_seeds": len(seeds),
    }
    return SweepResult(records=records, per_horizon=per_horizon, average=average,
                       failures=failures)


def improvement_pct(ours: float, baseline: float):
    """Relative improvement of ours over a baseline; None when undefined."""
    if baseline == 0:
        return None
    return (baseline - ours) / baseline * 100.0


def compare_table(records: dict, baseline_records: dict) -> list:
    """Rows of {key, ours, baseline, improvement_pct} for matching keys.

    Raises if the two mappings do not cover the same cells, listing the
    missing ones.
    """
    missing = sorted(set(records) ^ set(baseline_records))
    if missing:
        raise ValueError(f"mismatched comparison cells: {missing}")
    rows = []
    for key in sorted(records):
        ours, base = records[key], baseline_records[key]
        rows.append({"key": key, "ours": ours, "baseline": base,
                     "improvement_pct": improvement_pct(ours, base)})
    return rows


def render_comparison(rows, fmt: str = "text") -> str:
    """Aligned plain-text or Markdown rendering of a comparison table."""
    header = ["Dataset", "Ours", "Baseline", "% Imp"]
    body = []
    for row in rows:
        imp = row["improvement_pct"]
        body.append([str(row["key"]), f"{row['ours']:.3f}", f"{row['baseline']:.3f}",
                     "N/A" if imp is None else f"{imp:.1f}%"])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(4)]
    if fmt == "markdown":
        lines = ["| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |",
                 "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
        lines += ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"
                  for r in body]
    else:
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)
