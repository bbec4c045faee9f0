"""Command-line entry point.

Commands: ``divergence`` (evaluate between two densities), ``fit-density``
(Gaussian fit by divergence descent), ``gradcheck`` (finite-difference
diagnostics), ``toy`` (outlier-corrupted linear regression table) and
``uci`` (nested cross-validated grid search on a CSV).

Every run writes its fully resolved configuration to ``<out>/config.json``
next to the results; feeding that file back with ``--config`` reproduces
the outputs byte for byte.  Exit codes: 0 success, 1 diagnostic failure,
2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .density_fit import FitObjective, Gaussian1D, fit_gaussian
from .density_spec import GridSpec, SpecError, parse_density_spec, tabulate_pair
from .divergence import (
    DivergenceParams,
    DomainError,
    EvaluationError,
    classify_region,
    eval_sab,
)
from .experiments import (
    CSVFormatError,
    CVRunConfig,
    GridSearchSpec,
    ToyRunConfig,
    corrupt,
    load_csv,
    nested_cv,
    normalize,
    run_toy_experiment,
)
from .models import BNNModel, model_from_config, model_to_config
from .optim import AdamConfig
from .vi import TrainingDiverged, UnsupportedRegionError

EXIT_OK = 0
EXIT_DIAGNOSTIC = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _resolve_params(config) -> DivergenceParams:
    alpha, lam, beta = config.get("alpha"), config.get("lam"), config.get("beta")
    if beta is None:
        raise ConfigError("beta is required")
    if (alpha is None) == (lam is None):
        raise ConfigError("give exactly one of --alpha or --lambda")
    if alpha is None:
        return DivergenceParams.from_lambda(lam, beta)
    return DivergenceParams(alpha, beta)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_divergence(config: dict, outdir: Path) -> int:
    params = _resolve_params(config)
    spec_p = parse_density_spec(config["p"])
    spec_q = parse_density_spec(config["q"])
    p, q = tabulate_pair(spec_p, spec_q, n=config["grid_points"])
    value = eval_sab(params, p, q)
    result = {"value": value, "region": classify_region(params).value,
              "alpha": params.alpha, "beta": params.beta, "lambda": params.lam}
    _dump_json(outdir / "results.json", result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_fit_density(config: dict, outdir: Path) -> int:
    kind = config["divergence"]
    if kind == "kl":
        objective = FitObjective.kl()
    elif kind == "renyi":
        if config.get("alpha") is None:
            raise ConfigError("renyi fit needs --alpha")
        objective = FitObjective.renyi(config["alpha"])
    elif kind == "gamma":
        if config.get("beta") is None:
            raise ConfigError("gamma fit needs --beta")
        objective = FitObjective.gamma(config["beta"])
    elif kind == "sab":
        params = _resolve_params(config)
        objective = FitObjective.sab(params.alpha, params.beta)
    else:
        raise ConfigError(f"unknown fit divergence {kind!r}")

    spec = parse_density_spec(config["target"])
    if isinstance(spec, GridSpec):
        target = spec.density
    else:
        lo, hi = spec.range_hint(10.0)
        target = spec.tabulate(lo, hi, config["grid_points"])

    init = None
    if config.get("init_mu") is not None:
        init = Gaussian1D(config["init_mu"], config.get("init_log_sigma", 0.0))
    opt = AdamConfig(learning_rate=config["learning_rate"])
    result = fit_gaussian(objective, target, init=init, opt=opt,
                          max_iters=config["max_iters"])

    payload = {"objective": objective.label(), **result.to_dict()}
    _dump_json(outdir / "results.json", payload)
    _write_csv(outdir / "trace.csv", ["iteration", "divergence"],
               [(i, repr(float(v))) for i, v in enumerate(result.divergence_trace)])
    fitted = result.final.tabulate(target)
    _write_csv(outdir / "densities.csv", ["x", "target_pdf", "fitted_pdf"],
               [(repr(float(x)), repr(float(tp)), repr(float(fp)))
                for x, tp, fp in zip(target.x, np.exp(target.log_values),
                                     np.exp(fitted.log_values))])
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(config: dict, outdir: Path) -> int:
    perturb = 0.01 if config.get("inject_gradient_error") else 0.0
    rows = gradcheck.run_suites(only=config.get("only"), seed=config["seed"],
                                perturb=perturb)
    _dump_json(outdir / "results.json", {"rows": rows})
    width = max(len(r["case"]) for r in rows)
    for r in rows:
        print(f"{r['suite']:12s} {r['case']:{width}s} "
              f"max_rel_err={r['max_rel_err']:.3e} "
              f"threshold={r['threshold']:.0e} {'ok' if r['ok'] else 'FAIL'}")
    failures = [r for r in rows if not r["ok"]]
    if failures:
        print(f"{len(failures)} gradient check(s) failed")
        return EXIT_DIAGNOSTIC
    print(f"all {len(rows)} gradient checks passed")
    return EXIT_OK


def _parse_settings(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            lam, beta = (float(v) for v in part.split(","))
        except ValueError:
            raise ConfigError(f"bad setting {part!r}; want LAMBDA,BETA") from None
        out.append((lam, beta))
    if not out:
        raise ConfigError("no settings given")
    return out


def cmd_toy(config: dict, outdir: Path) -> int:
    settings = _parse_settings(config["settings"])
    seeds = [config["seed_base"] + i for i in range(config["seeds"])]
    cfg = ToyRunConfig(n_train=config["train_size"], n_test=config["test_size"],
                       dim=config["dim"], p_outliers=config["outliers"],
                       mc_samples=config["mc_samples"], steps=config["steps"],
                       learning_rate=config["learning_rate"])
    try:
        result = run_toy_experiment(settings, seeds, cfg, collect_reports=True)
    except TrainingDiverged as exc:
        _dump_json(outdir / "error.json", {"error": str(exc)})
        raise
    reports = result.pop("reports")
    _dump_json(outdir / "results.json", result)
    _dump_json(outdir / "reports.json", reports)
    _write_csv(outdir / "traces.csv", ["lambda", "beta", "seed", "step", "objective"],
               [(r["lambda"], r["beta"], r["seed"], step, repr(v))
                for r in reports for step, v in enumerate(r["trace"])])
    _write_csv(outdir / "table.csv",
               ["lambda", "beta", "alpha", "mae_mean", "mae_std", "mse_mean", "mse_std"],
               [(r["lambda"], r["beta"], r["alpha"], repr(r["mae_mean"]), repr(r["mae_std"]),
                 repr(r["mse_mean"]), repr(r["mse_std"])) for r in result["rows"]])
    for r in result["rows"]:
        print(f"(lambda={r['lambda']}, beta={r['beta']})  "
              f"MAE {r['mae_mean']:.4f} +/- {r['mae_std']:.4f}  "
              f"MSE {r['mse_mean']:.4f} +/- {r['mse_std']:.4f}")
    return EXIT_OK


def cmd_uci(config: dict, outdir: Path) -> int:
    dataset = normalize(load_csv(config["csv"], config["target_column"]))
    if config["corrupt"] > 0:
        dataset = corrupt(dataset, config["corrupt"], config["seed"])
    grid = GridSearchSpec(step=config["grid_step"])
    if config["full"]:
        cv_cfg = CVRunConfig.full_scale()
        k1, k2 = 10, 2
    else:
        cv_cfg = CVRunConfig(hidden=tuple(config["hidden"]),
                             mc_samples=config["mc_samples"], steps=config["steps"],
                             learning_rate=config["learning_rate"])
        k1, k2 = config["k1"], config["k2"]
    if config.get("model_config"):
        with open(config["model_config"]) as fh:
            model_cfg = json.load(fh)
        model = model_from_config(model_cfg)
        if not isinstance(model, BNNModel):
            raise ConfigError("the grid search trains Bayesian networks; "
                              "give a 'bnn' model config")
        if model.layer_sizes[0] != dataset.dim:
            raise ConfigError(f"model input size {model.layer_sizes[0]} does not "
                              f"match the {dataset.dim} CSV features")
        cv_cfg = CVRunConfig(hidden=model.layer_sizes[1:-1],
                             mc_samples=cv_cfg.mc_samples, steps=cv_cfg.steps,
                             learning_rate=cv_cfg.learning_rate,
                             noise_sigma=math.exp(model.noise_log_sigma),
                             learn_noise=model.learn_noise)
    try:
        report = nested_cv(dataset, grid, k1=k1, k2=k2, config=cv_cfg,
                           seed=config["seed"], collect_reports=True)
    except TrainingDiverged as exc:
        _dump_json(outdir / "error.json", {"error": str(exc)})
        raise
    payload = report.to_dict()
    _dump_json(outdir / "reports.json", payload.pop("train_reports"))
    payload["model"] = model_to_config(cv_cfg.build_model(dataset.dim))
    _dump_json(outdir / "results.json", payload)
    _write_csv(outdir / "cells.csv",
               ["alpha", "beta", "lambda", "val_rmse_mean", "val_rmse_std", "failures"],
               [(c["alpha"], c["beta"], c["lambda"],
                 "" if c["val_rmse_mean"] is None else repr(c["val_rmse_mean"]),
                 "" if c["val_rmse_std"] is None else repr(c["val_rmse_std"]),
                 c["failures"]) for c in report.cells])
    _write_csv(outdir / "folds.csv",
               ["fold", "selected_alpha", "selected_beta", "test_rmse", "kl_test_rmse"],
               [(f["fold"], f["selected"][0], f["selected"][1],
                 repr(f["test_rmse"]), repr(f["kl_test_rmse"])) for f in report.folds])
    _write_csv(outdir / "heatmap.csv", ["alpha", "beta", "val_rmse_mean"],
               [(c["alpha"], c["beta"],
                 "" if c["val_rmse_mean"] is None else repr(c["val_rmse_mean"]))
                for c in report.cells])
    print(f"selected (alpha, beta) = {tuple(report.selected)}  "
          f"test RMSE {report.test_rmse_mean:.4f} +/- {report.test_rmse_std:.4f}  "
          f"KL cell RMSE {report.kl_rmse_mean:.4f}")
    return EXIT_OK


COMMANDS = {
    "divergence": cmd_divergence,
    "fit-density": cmd_fit_density,
    "gradcheck": cmd_gradcheck,
    "toy": cmd_toy,
    "uci": cmd_uci,
}


# ---------------------------------------------------------------------------
# argument parsing and config resolution
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sabvi",
        description="scale-invariant alpha-beta divergence toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (required unless --config)")
        p.add_argument("--config", help="resolved config JSON from a previous run")

    p = sub.add_parser("divergence", help="evaluate the divergence between two densities")
    common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float,
                   help="alpha + beta (alternative to --alpha)")
    p.add_argument("--beta", type=float)
    p.add_argument("--p", help="first density spec")
    p.add_argument("--q", help="second density spec")
    p.add_argument("--grid-points", type=int, default=4001)

    p = sub.add_parser("fit-density", help="fit a Gaussian by divergence descent")
    common(p)
    p.add_argument("--divergence", default="sab", choices=["sab", "kl", "renyi", "gamma"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--target", default="mixture:default")
    p.add_argument("--init-mu", type=float)
    p.add_argument("--init-log-sigma", type=float)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--grid-points", type=int, default=4001)

    p = sub.add_parser("gradcheck", help="finite-difference gradient diagnostics")
    common(p)
    p.add_argument("--only", action="append", choices=sorted(gradcheck.SUITES),
                   help="run a subset of suites (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-gradient-error", action="store_true",
                   help="negative control: perturb analytic gradients so checks fail")

    p = sub.add_parser("toy", help="outlier-corrupted linear regression table")
    common(p)
    p.add_argument("--settings", default="1.0,0.0;1.0,0.3;1.8,0.8;1.9,-0.3",
                   help="semicolon-separated LAMBDA,BETA pairs")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--outliers", type=float, default=0.05)
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--mc-samples", type=int, default=5)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=0.01)

    p = sub.add_parser("uci", help="nested cross-validated grid search on a CSV")
    common(p)
    p.add_argument("--csv")
    p.add_argument("--target-column", default="y")
    p.add_argument("--corrupt", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-step", type=float, default=0.5)
    p.add_argument("--k1", type=int, default=5)
    p.add_argument("--k2", type=int, default=2)
    p.add_argument("--hidden", type=int, nargs="+", default=[10])
    p.add_argument("--mc-samples", type=int, default=5)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--model-config",
                   help="JSON model configuration file overriding the network shape")
    p.add_argument("--full", action="store_true",
                   help="full-scale settings: 0.25 grid step, 10 outer folds, "
                        "two 50-unit layers, 500 steps, 25 MC samples")

    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Either load a previous run's config verbatim or snapshot the CLI args."""
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        if config.get("command") != args.command:
            raise ConfigError(
                f"config file is for {config.get('command')!r}, not {args.command!r}")
        return config
    config = {k: v for k, v in vars(args).items() if k != "config"}
    if not config.get("out"):
        raise ConfigError("--out is required (or pass --config)")
    return config


def _validate(config: dict) -> None:
    cmd = config["command"]
    if cmd == "divergence" and (not config.get("p") or not config.get("q")):
        raise ConfigError("divergence needs --p and --q density specs")
    if cmd == "uci" and not config.get("csv"):
        raise ConfigError("uci needs --csv")
    if cmd == "uci" and not 0.0 <= config.get("corrupt", 0.0) < 1.0:
        raise ConfigError("--corrupt must be in [0, 1)")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        _validate(config)
        outdir = Path(config["out"])
        outdir.mkdir(parents=True, exist_ok=True)
        _dump_json(outdir / "config.json", config)
        return COMMANDS[config["command"]](config, outdir)
    except (ConfigError, SpecError, CSVFormatError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, DomainError, UnsupportedRegionError,
            TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
