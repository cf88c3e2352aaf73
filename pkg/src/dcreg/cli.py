"""Command-line driver: phantom | train | evaluate | rates.

Each command locks its output directory, regenerates everything it needs
deterministically from the config's master seed, writes its artifacts,
and finishes by writing a manifest with checksums.  The manifest is the
success marker: a directory without one holds the debris of a failed or
interrupted run.  Exit codes: 0 success, 1 configuration or usage error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import LockError, output_lock, write_csv, write_manifest, write_pgm
from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .learn import checkpoint_load, checkpoint_save
from .linalg import IterationLimitError
from .operators import radon_build
from .pipelines import (
    AGGREGATE_HEADER,
    LADDER_HEADER,
    RATE_ROW_HEADER,
    RATE_SUMMARY_HEADER,
    SAMPLE_HEADER,
    GaussProblem,
    NumericalFailure,
    TrainedModels,
    build_gauss_problem,
    build_radon_problem,
    convergence_table,
    evaluate_experiment,
    make_datasets,
    rate_table,
    train_rate_network,
    train_variants,
)
from .rng import Rng

VARIANTS = {
    "gauss-sat": ("plain", "dc"),
    "radon-sat": ("plain_image", "chained_sino", "chained_image", "dc_sino", "dc_image"),
    "convergence": ("dc_sino", "dc_image"),
    "rates": ("rate_net",),
}


def _build_problem(cfg: ExperimentConfig):
    if cfg.experiment == "gauss-sat":
        return build_gauss_problem(cfg)
    return build_radon_problem(cfg)


def _require_experiment(cfg: ExperimentConfig, command: str, allowed: tuple) -> None:
    if cfg.experiment not in allowed:
        raise ConfigError(
            f"command {command!r} needs experiment in {allowed}, got {cfg.experiment!r}"
        )


def cmd_phantom(cfg: ExperimentConfig, out_dir: Path) -> tuple[list, dict]:
    """Export the test-set phantoms, measured data, and starting recons."""
    _require_experiment(cfg, "phantom", ("gauss-sat", "radon-sat", "convergence"))
    rng = Rng(cfg.run.seed)
    problem = _build_problem(cfg)
    ds = make_datasets(cfg, problem, rng)["test"]
    paths = []
    for i in range(ds.truths.shape[0]):
        truth_path = out_dir / f"truth_{i:03d}.pgm"
        write_pgm(truth_path, ds.truths[i])
        paths.append(truth_path)
        if isinstance(problem, GaussProblem):
            # the right inverse is the identity here, so the measured
            # image doubles as the network input; one file covers both
            data_path = out_dir / f"data_{i:03d}.pgm"
            write_pgm(data_path, ds.data[i])
            paths.append(data_path)
        else:
            data_path = out_dir / f"sino_{i:03d}.csv"
            n_bins = ds.data[i].shape[1]
            header = [f"bin{j}" for j in range(n_bins)]
            write_csv(data_path, header, [list(row) for row in ds.data[i]])
            paths.append(data_path)
            recon_path = out_dir / f"recon_{i:03d}.pgm"
            write_pgm(recon_path, ds.inputs[i])
            paths.append(recon_path)
    return paths, {"count": ds.truths.shape[0]}


def _checkpoint_path(out_dir: Path, name: str) -> Path:
    return out_dir / f"checkpoint_{name}.npz"


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> tuple[list, dict]:
    """Train every variant and store one checkpoint per network."""
    _require_experiment(
        cfg, "train", ("gauss-sat", "radon-sat", "convergence", "rates")
    )
    rng = Rng(cfg.run.seed)
    if cfg.experiment == "rates":
        radon = radon_build(cfg.grid.n, cfg.radon.n_angles)
        params, history = train_rate_network(cfg, radon, rng)
        models = TrainedModels(params={"rate_net": params}, history={"rate_net": history})
    else:
        problem = _build_problem(cfg)
        ds = make_datasets(cfg, problem, rng)
        models = train_variants(
            cfg, problem, ds, rng, only_dc=cfg.experiment == "convergence"
        )
    paths = []
    metrics: dict = {}
    curve_rows = []
    for name, params in models.params.items():
        losses = models.history[name]["train_loss"]
        if not all(np.isfinite(losses)):
            raise NumericalFailure(f"training diverged for variant {name!r}")
        meta = {"variant": name, "experiment": cfg.experiment}
        if name in models.alphas:
            meta["alpha"] = models.alphas[name]
        path = _checkpoint_path(out_dir, name)
        checkpoint_save(path, params, meta)
        paths.append(path)
        for epoch, loss in enumerate(losses):
            curve_rows.append((name, epoch, loss))
        metrics[f"final_train_loss/{name}"] = losses[-1]
        if "val_loss" in models.history[name]:
            metrics[f"val_loss/{name}"] = models.history[name]["val_loss"]
    curves_path = out_dir / "training_curves.csv"
    write_csv(curves_path, ["variant", "epoch", "train_loss"], curve_rows)
    paths.append(curves_path)
    return paths, metrics


def _load_models(cfg: ExperimentConfig, out_dir: Path) -> TrainedModels:
    models = TrainedModels()
    for name in VARIANTS[cfg.experiment]:
        path = _checkpoint_path(out_dir, name)
        if not path.exists():
            raise ConfigError(
                f"missing checkpoint {path.name} in {out_dir}; run the train command first"
            )
        params, meta = checkpoint_load(path)
        models.params[name] = params
        if "alpha" in meta:
            models.alphas[name] = float(meta["alpha"])
    return models


def cmd_evaluate(cfg: ExperimentConfig, out_dir: Path) -> tuple[list, dict]:
    """Metric tables (and preview images), or the ladder table."""
    _require_experiment(cfg, "evaluate", ("gauss-sat", "radon-sat", "convergence"))
    rng = Rng(cfg.run.seed)
    problem = _build_problem(cfg)
    models = _load_models(cfg, out_dir)
    paths = []
    metrics: dict = {}
    if cfg.experiment == "convergence":
        rows, report = convergence_table(cfg, problem, models, rng)
        ladder_path = out_dir / "convergence.csv"
        write_csv(ladder_path, list(LADDER_HEADER), rows)
        paths.append(ladder_path)
        metrics["slope"] = report.slope
        metrics["fit_residual"] = report.fit_residual
        metrics["first_error"] = report.errors[0]
        metrics["last_error"] = report.errors[-1]
        return paths, metrics

    ds = make_datasets(cfg, problem, rng)
    sample_rows, agg_rows, recons = evaluate_experiment(cfg, problem, ds, models)
    samples_path = out_dir / "metrics_samples.csv"
    write_csv(samples_path, list(SAMPLE_HEADER), sample_rows)
    agg_path = out_dir / "metrics_aggregate.csv"
    write_csv(agg_path, list(AGGREGATE_HEADER), agg_rows)
    paths.extend([samples_path, agg_path])
    n_preview = cfg.data.n_preview
    for set_name in ("test", "test_modified"):
        data = ds[set_name]
        for i in range(min(n_preview, data.truths.shape[0])):
            p = out_dir / f"{set_name}_truth_{i:03d}.pgm"
            write_pgm(p, data.truths[i])
            paths.append(p)
        for method, hats in recons[set_name].items():
            for i in range(min(n_preview, hats.shape[0])):
                p = out_dir / f"{set_name}_{method}_{i:03d}.pgm"
                write_pgm(p, hats[i])
                paths.append(p)
    for row in agg_rows:
        metrics[f"psnr_mean/{row[0]}/{row[1]}"] = row[3]
    return paths, metrics


def cmd_rates(cfg: ExperimentConfig, out_dir: Path) -> tuple[list, dict]:
    """Empirical rate fits for the compared regularization variants."""
    _require_experiment(cfg, "rates", ("rates",))
    u1 = _load_models(cfg, out_dir).params["rate_net"]
    rows, summary, _ = rate_table(cfg, Rng(cfg.run.seed), u1=u1)
    rows_path = out_dir / "rates.csv"
    write_csv(rows_path, list(RATE_ROW_HEADER), rows)
    summary_path = out_dir / "rate_summary.csv"
    write_csv(summary_path, list(RATE_SUMMARY_HEADER), summary)
    metrics = {f"slope/{name}": slope for name, slope, _, _ in summary}
    return [rows_path, summary_path], metrics


COMMANDS = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "rates": cmd_rates,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems share the config exit code
        raise ConfigError(message)


def _parse_args(argv):
    parser = _Parser(prog="dcreg", description=__doc__, add_help=True)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override run.out_dir")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    started = time.time()
    try:
        args = _parse_args(argv)
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
        if args.out is not None:
            cfg = replace(cfg, run=replace(cfg.run, out_dir=args.out))
        out_dir = Path(cfg.run.out_dir)
        with output_lock(out_dir):
            paths, metrics = COMMANDS[args.command](cfg, out_dir)
            write_manifest(
                out_dir,
                args.command,
                serialize_config(cfg),
                paths,
                metrics=metrics,
                started=started,
            )
    except (ConfigError, LockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, IterationLimitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
