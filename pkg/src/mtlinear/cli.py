"""Command-line interface: train, bench, groups, conflicts.

Configuration comes from a simple `key = value` text file plus CLI flag
overrides (flags win). Every run writes a `config.resolved` file with the
effective settings; re-running from that file with the same seed reproduces
the outputs byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from dataclasses import replace

import click

from .data import load_csv
from .diagnostics import correlation_vs_conflict_report
from .evaluation import evaluate, horizon_sweep
from .grouping import cluster, grouping_report, render_report
from .heads import save_checkpoint
from .trainer import TrainConfig, prepare, train

ILI_HORIZONS = (24, 36, 48, 60)
ILI_LOOKBACK = 36
STANDARD_HORIZONS = (96, 192, 336, 720)
STANDARD_LOOKBACK = 96
GROUPS_ALPHAS = (0.0, math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2)


def parse_angle(text):
    """Accept 'pi/6'-style fractions, 'pi', or plain radians."""
    s = str(text).strip().lower().replace(" ", "")
    if s in ("pi", "π"):
        return math.pi
    for token in ("pi/", "π/"):
        if s.startswith(token):
            try:
                return math.pi / float(s[len(token):])
            except ValueError:
                raise click.BadParameter(f"cannot parse angle {text!r}")
    try:
        return float(s)
    except ValueError:
        raise click.BadParameter(f"cannot parse angle {text!r}")


def angle_label(value: float) -> str:
    for denom in (2, 3, 4, 6):
        if abs(value - math.pi / denom) < 1e-9:
            return f"pi/{denom}"
    return f"{value:.6g}"


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment; values stay strings."""
    settings = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.UsageError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            settings[key.strip()] = value.strip()
    return settings


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _as_int_list(value):
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


DEFAULTS = {
    "date_column": "date",
    "variant": "nlinear",
    "lookback": None,          # resolved per dataset family
    "horizon": None,
    "horizons": None,
    "alpha_bar": "pi/2",
    "a": 1,
    "grid": False,
    "alpha_grid": "pi/2,pi/3,pi/4,pi/6",
    "a_grid": "1,2",
    "seed": 0,
    "seeds": "0,1,2",
    "lr": 0.01,
    "batch_size": 32,
    "max_epochs": 20,
    "patience": 3,
    "optimizer": "adam",
    "normalize": True,
    "use_bias": True,
    "ma_kernel": 25,
    "penalty_refresh": "batch",
    "ema_beta": 0.9,
    "lr_schedule": "halving",
    "diagnostics": False,
    "diagnostics_mode": "per_step",
    "jobs": "auto",
    "split.train_frac": 0.7,
    "split.val_frac": 0.1,
    "split.rows": "",
}


class RunConfig:
    """Effective settings for one CLI run."""

    def __init__(self, settings: dict):
        self.settings = settings

    def __getitem__(self, key):
        return self.settings[key]

    def is_ili(self) -> bool:
        stem = os.path.basename(str(self.settings.get("dataset", ""))).lower()
        return "ili" in stem or "illness" in stem

    def resolved_lookback(self) -> int:
        lb = self.settings.get("lookback")
        if lb in (None, ""):
            return ILI_LOOKBACK if self.is_ili() else STANDARD_LOOKBACK
        return int(lb)

    def resolved_horizons(self):
        hs = self.settings.get("horizons")
        if hs in (None, ""):
            h = self.settings.get("horizon")
            if h not in (None, ""):
                return [int(h)]
            return list(ILI_HORIZONS) if self.is_ili() else list(STANDARD_HORIZONS)
        return _as_int_list(hs)

    def train_config(self, horizon=None, seed=None, diagnostics=None) -> TrainConfig:
        s = self.settings
        return TrainConfig(
            variant=str(s["variant"]),
            lookback=self.resolved_lookback(),
            horizon=int(horizon if horizon is not None else self.resolved_horizons()[0]),
            alpha_bar=parse_angle(s["alpha_bar"]),
            a=int(s["a"]),
            lr=float(s["lr"]),
            batch_size=int(s["batch_size"]),
            max_epochs=int(s["max_epochs"]),
            patience=int(s["patience"]),
            optimizer=str(s["optimizer"]),
            seed=int(seed if seed is not None else s["seed"]),
            normalize=_as_bool(s["normalize"]),
            use_bias=_as_bool(s["use_bias"]),
            ma_kernel=int(s["ma_kernel"]),
            penalty_refresh=str(s["penalty_refresh"]),
            ema_beta=float(s["ema_beta"]),
            lr_schedule=str(s["lr_schedule"]),
            diagnostics=_as_bool(diagnostics if diagnostics is not None
                                 else s["diagnostics"]),
            diagnostics_mode=str(s["diagnostics_mode"]),
            jobs=self.resolved_jobs(),
        )

    def resolved_jobs(self) -> int:
        jobs = self.settings.get("jobs", "auto")
        if str(jobs).strip().lower() == "auto":
            return os.cpu_count() or 1
        return int(jobs)

    def alpha_grid(self):
        return [parse_angle(v) for v in str(self.settings["alpha_grid"]).split(",")
                if v.strip()]

    def a_grid(self):
        return _as_int_list(self.settings["a_grid"])

    def seeds(self):
        return _as_int_list(self.settings["seeds"])


def resolve_dataset_path(path: str) -> str:
    if os.path.isfile(path):
        return path
    base = os.environ.get("MTLINEAR_DATA_DIR")
    if base:
        candidate = os.path.join(base, path)
        if os.path.isfile(candidate):
            return candidate
    return path


def build_run_config(config_file, cli_overrides: dict) -> RunConfig:
    settings = dict(DEFAULTS)
    if config_file:
        settings.update(parse_config_file(config_file))
    for key, value in cli_overrides.items():
        if value is not None:
            settings[key] = value
    if not settings.get("dataset"):
        raise click.UsageError("a dataset is required (--dataset or config file)")
    settings["dataset"] = resolve_dataset_path(str(settings["dataset"]))
    return RunConfig(settings)


def write_resolved(run: RunConfig, out_dir: str, extra: dict = None):
    lines = []
    settings = dict(run.settings)
    if extra:
        settings.update(extra)
    for key in sorted(settings):
        value = settings[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    with open(os.path.join(out_dir, "config.resolved"), "w") as f:
        f.write("\n".join(lines) + "\n")


def prepare_out_dir(out: str, force: bool, expect: str = "results.csv"):
    if os.path.isdir(out) and os.path.exists(os.path.join(out, expect)) and not force:
        raise RuntimeError(f"output directory {out!r} already holds {expect}; "
                           f"pass --force to overwrite")
    for sub in ("checkpoints", "logs", "reports"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)


def write_jsonl(rows, path):
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_csv(rows, path, fieldnames):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k))
                             for k in fieldnames})


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


# Options shared by every subcommand.
def common_options(fn):
    decorators = [
        click.option("--config", "config_file", type=click.Path(exists=True),
                     help="key = value config file; flags override it."),
        click.option("--dataset", help="CSV path (MTLINEAR_DATA_DIR is searched)."),
        click.option("--date-column", "date_column", help="Date column name."),
        click.option("--variant",
                     type=click.Choice(["linear", "nlinear", "dlinear", "rlinear"]),
                     default=None),
        click.option("--lookback", type=int, default=None),
        click.option("--alpha-bar", "alpha_bar", default=None,
                     help="Grouping angle; accepts pi/6-style fractions."),
        click.option("--a", type=int, default=None, help="Penalty exponent (0, 1, 2)."),
        click.option("--seed", type=int, default=None),
        click.option("--jobs", type=int, default=None,
                     help="Parallel workers for heads/sweep cells."),
        click.option("--out", default=None, help="Output directory."),
        click.option("--force", is_flag=True, default=False,
                     help="Overwrite an existing output directory."),
        click.option("--lr", type=float, default=None),
        click.option("--batch-size", "batch_size", type=int, default=None),
        click.option("--max-epochs", "max_epochs", type=int, default=None),
        click.option("--patience", type=int, default=None),
        click.option("--optimizer", type=click.Choice(["sgd", "adam"]), default=None),
        click.option("--lr-schedule", "lr_schedule",
                     type=click.Choice(["none", "halving"]), default=None,
                     help="Per-epoch learning-rate decay (default: halving)."),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def _collect(kwargs) -> dict:
    keys = ("dataset", "date_column", "variant", "lookback", "alpha_bar", "a",
            "seed", "jobs", "out", "lr", "batch_size", "max_epochs", "patience",
            "optimizer", "lr_schedule", "horizon", "horizons", "seeds",
            "diagnostics")
    return {k: kwargs[k] for k in keys if k in kwargs and kwargs[k] is not None}


def _load_frame(run: RunConfig):
    s = run.settings
    split_rows = None
    if s.get("split.rows"):
        split_rows = _as_int_list(s["split.rows"])
    return load_csv(s["dataset"], date_column=str(s["date_column"]),
                    train_frac=float(s["split.train_frac"]),
                    val_frac=float(s["split.val_frac"]),
                    split_rows=split_rows)


@click.group()
def main():
    """Multi-head linear forecasting with correlation-based variate grouping."""


@main.command("train")
@common_options
@click.option("--horizon", type=int, default=None)
@click.option("--diagnostics", is_flag=True, default=None)
def cmd_train(config_file, force, **kwargs):
    """Train one configuration; write checkpoint, log, and grouping report."""
    try:
        run = build_run_config(config_file, _collect(kwargs))
        out = str(run.settings.get("out") or "runs/train")
        prepare_out_dir(out, force, expect=os.path.join("checkpoints", "ensemble.json"))
        config = run.train_config()
        frame = _load_frame(run)
        result = train(frame, config)

        save_checkpoint(result.ensemble, os.path.join(out, "checkpoints", "ensemble.json"),
                        norm=result.normalizer)
        write_jsonl(result.log, os.path.join(out, "logs", "train_log.jsonl"))
        report = grouping_report(result.grouping, frame.variate_names, result.similarity)
        with open(os.path.join(out, "reports", "grouping.json"), "w") as f:
            f.write(render_report(report))
        val = evaluate(result.ensemble, result.frame, "val")
        test = evaluate(result.ensemble, result.frame, "test")
        write_resolved(run, out, extra={"lookback": config.lookback,
                                        "horizon": config.horizon})
        click.echo(f"trained {config.variant} on {run.settings['dataset']}: "
                   f"{result.grouping.n_clusters} heads, "
                   f"val mse {val.mse:.6f}, test mse {test.mse:.6f}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(str(exc))


@main.command("bench")
@common_options
@click.option("--horizons", default=None, help="Comma-separated horizon list.")
@click.option("--seeds", default=None, help="Comma-separated seed list.")
@click.option("--grid/--no-grid", "grid", default=True,
              help="Run the (alpha_bar, a) validation grid per cell (default on).")
def cmd_bench(config_file, force, grid, **kwargs):
    """Benchmark protocol: per-horizon training over seeds, grid-searched."""
    try:
        run = build_run_config(config_file, _collect(kwargs))
        out = str(run.settings.get("out") or "runs/bench")
        prepare_out_dir(out, force)
        horizons = run.resolved_horizons()
        seeds = run.seeds()
        dataset = os.path.splitext(os.path.basename(run.settings["dataset"]))[0]
        frame = _load_frame(run)
        config = run.train_config()

        sweep = horizon_sweep(
            frame, config, horizons, seeds=tuple(seeds), dataset=dataset,
            alpha_grid=tuple(run.alpha_grid()) if grid else None,
            a_grid=tuple(run.a_grid()) if grid else None,
            jobs=run.resolved_jobs(),
        )

        record_rows = [r.to_dict() for r in sweep.records]
        write_csv(record_rows, os.path.join(out, "results.csv"),
                  fieldnames=["dataset", "variant", "alpha_bar", "a", "lookback",
                              "horizon", "seed", "mse", "mae"])
        summary_rows = sweep.per_horizon + [sweep.average]
        write_csv(summary_rows, os.path.join(out, "summary.csv"),
                  fieldnames=["horizon", "mse_mean", "mse_std", "mae_mean",
                              "mae_std", "n_seeds"])
        with open(os.path.join(out, "results.json"), "w") as f:
            json.dump({"records": record_rows, "per_horizon": sweep.per_horizon,
                       "average": sweep.average, "failures": sweep.failures},
                      f, sort_keys=True, indent=2)
        write_resolved(run, out, extra={"grid": grid, "horizons": horizons,
                                        "seeds": seeds,
                                        "lookback": config.lookback})
        click.echo(f"bench {dataset}: avg mse {sweep.average['mse_mean']:.6f} "
                   f"mae {sweep.average['mae_mean']:.6f} over horizons {horizons}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))


@main.command("groups")
@common_options
@click.option("--alphas", default=None,
              help="Comma-separated angle list (default 0,pi/6,pi/4,pi/3,pi/2).")
def cmd_groups(config_file, force, alphas, **kwargs):
    """Grouping reports for a sweep of angle thresholds."""
    try:
        run = build_run_config(config_file, _collect(kwargs))
        out = str(run.settings.get("out") or "runs/groups")
        prepare_out_dir(out, force, expect=os.path.join("reports", "group_counts.json"))
        frame = _load_frame(run)
        config = run.train_config(horizon=1)
        _, _, sim, _ = prepare(frame, replace(config, alpha_bar=0.0))

        angle_values = ([parse_angle(v) for v in str(alphas).split(",") if v.strip()]
                        if alphas else list(GROUPS_ALPHAS))
        counts = {}
        for alpha in angle_values:
            grouping = cluster(sim, alpha)
            label = angle_label(alpha)
            counts[label] = grouping.n_clusters
            report = grouping_report(grouping, frame.variate_names, sim)
            name = label.replace("/", "_")
            with open(os.path.join(out, "reports", f"grouping_{name}.json"), "w") as f:
                f.write(render_report(report))
        with open(os.path.join(out, "reports", "group_counts.json"), "w") as f:
            json.dump(counts, f, sort_keys=True, indent=2)
        write_resolved(run, out, extra={"alphas": [angle_label(a) for a in angle_values]})
        click.echo("group counts: " + ", ".join(
            f"{angle_label(a)}={counts[angle_label(a)]}" for a in angle_values))
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))


@main.command("conflicts")
@common_options
@click.option("--horizon", type=int, default=None)
@click.option("--mode", "diagnostics_mode",
              type=click.Choice(["per_step", "probe_epoch"]), default=None)
def cmd_conflicts(config_file, force, diagnostics_mode, **kwargs):
    """Train with gradient instrumentation; emit the conflict report."""
    try:
        run = build_run_config(config_file, _collect(kwargs))
        if diagnostics_mode:
            run.settings["diagnostics_mode"] = diagnostics_mode
        out = str(run.settings.get("out") or "runs/conflicts")
        prepare_out_dir(out, force, expect=os.path.join("reports", "conflicts.csv"))
        frame = _load_frame(run)
        config = run.train_config(diagnostics=True)
        result = train(frame, config)

        report = correlation_vs_conflict_report(result.conflicts, result.similarity,
                                                names=frame.variate_names)
        write_csv(report["pairs"], os.path.join(out, "reports", "conflicts.csv"),
                  fieldnames=["variate_a", "variate_b", "abs_corr", "conflicts_total"])
        per_epoch = [m.tolist() for m in result.conflicts.per_epoch]
        with open(os.path.join(out, "reports", "conflicts_per_epoch.json"), "w") as f:
            json.dump({"per_epoch": per_epoch,
                       "rank_correlation": report["rank_correlation"]},
                      f, sort_keys=True)
        write_jsonl(result.log, os.path.join(out, "logs", "train_log.jsonl"))
        write_resolved(run, out, extra={"diagnostics": True,
                                        "horizon": config.horizon,
                                        "lookback": config.lookback})
        rc = report["rank_correlation"]
        rc_text = "nan" if rc != rc else f"{rc:.4f}"
        click.echo(f"conflicts: {result.conflicts.total_conflicts()} total, "
                   f"rank corr(|corr|, conflicts) = {rc_text}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))


if __name__ == "__main__":
    main()
