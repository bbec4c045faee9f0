"""Dataset handling and the two experiment harnesses.

The toy harness fits Bayesian linear regression to synthetic data whose
training targets are partially shifted by a constant outlier offset, then
scores each divergence setting on a fresh clean test draw.  The
cross-validation harness runs a nested grid search over (alpha, beta) for
a small Bayesian network on a corrupted regression table.

Corruption bookkeeping: `corrupt` adds OUTLIER_SHIFT to the normalized
target at a sampled index set and records the mask, so evaluation code can
always recover the clean targets (training always sees the corrupted
values, validation and test scores never do).

Random streams: every task gets its own counter-based stream composed from
a purpose id and the (fold, cell, split) indices, so grid cells and folds
are independent and a rerun with the same seed reproduces every file
byte for byte.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .divergence import DivergenceParams
from .models import BLRModel, BNNModel, XYData, predict
from .optim import AdamConfig
from .vi import MCConfig, MeanFieldGaussian, TrainingDiverged, train

OUTLIER_SHIFT = 5.0
TOY_WEIGHT = 0.5
TOY_NOISE_SIGMA = 0.1
TOY_OUTLIER_X_SIGMA = 0.2


@dataclass(frozen=True)
class Dataset:
    """A regression table plus the normalization and corruption bookkeeping."""

    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    feature_means: np.ndarray = field(repr=False)
    feature_stds: np.ndarray = field(repr=False)
    y_mean: float
    y_std: float
    outlier_mask: np.ndarray = field(repr=False)
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        mask = np.asarray(self.outlier_mask, dtype=bool)
        if X.ndim != 2 or y.shape != (X.shape[0],) or mask.shape != y.shape:
            raise ValueError("inconsistent dataset dimensions")
        if np.any(np.asarray(self.feature_stds) <= 0) or self.y_std <= 0:
            raise ValueError("normalization stds must be positive")
        for name, arr in (("X", X), ("y", y), ("outlier_mask", mask)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def y_clean(self) -> np.ndarray:
        """Targets with the known corruption shift removed."""
        return self.y - OUTLIER_SHIFT * self.outlier_mask

    @classmethod
    def raw(cls, X, y, mask=None, feature_names=None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if mask is None:
            mask = np.zeros(y.size, dtype=bool)
        return cls(X=X, y=y, feature_means=np.zeros(X.shape[1]),
                   feature_stds=np.ones(X.shape[1]), y_mean=0.0, y_std=1.0,
                   outlier_mask=mask, feature_names=feature_names)


# ---------------------------------------------------------------------------
# data generation and ingestion
# ---------------------------------------------------------------------------


def gen_toy(n: int, dim: int, p_outliers: float, seed: int,
            stream: int | None = None) -> Dataset:
    """Linear data with slope 1/2 per feature; a fixed fraction of points is
    replaced by near-origin inputs whose targets sit OUTLIER_SHIFT higher."""
    if n < 1 or dim < 1 or not 0.0 <= p_outliers < 1.0:
        raise ValueError("need n >= 1, dim >= 1 and 0 <= p_outliers < 1")
    if stream is None:
        stream = rng.compose_stream(rng.STREAM_DATA)
    g = rng.generator(seed, stream)
    w = np.full(dim, TOY_WEIGHT)
    X = g.uniform(-1.0, 1.0, (n, dim))
    y = X @ w + TOY_NOISE_SIGMA * g.standard_normal(n)
    mask = np.zeros(n, dtype=bool)
    n_out = round(p_outliers * n)
    if n_out:
        idx = g.choice(n, size=n_out, replace=False)
        X = X.copy()
        X[idx] = TOY_OUTLIER_X_SIGMA * g.standard_normal((n_out, dim))
        y[idx] = OUTLIER_SHIFT + X[idx] @ w + TOY_NOISE_SIGMA * g.standard_normal(n_out)
        mask[idx] = True
    return Dataset.raw(X, y, mask)


def gen_nonlinear(n: int, dim: int, seed: int, noise: float = 0.1) -> Dataset:
    """Small smooth nonlinear regression table for the desk-scale CV runs."""
    if dim < 2:
        raise ValueError("need at least two features")
    g = rng.generator(seed, rng.compose_stream(rng.STREAM_DATA, 2))
    X = g.uniform(-1.0, 1.0, (n, dim))
    y = 1.5 * np.sin(2.0 * X[:, 0]) + X[:, 1] ** 2
    if dim >= 3:
        y = y - 0.8 * X[:, 2]
    y = y + noise * g.standard_normal(n)
    return Dataset.raw(X, y)


class CSVFormatError(ValueError):
    pass


def load_csv(path, target_column: str) -> Dataset:
    """Numeric CSV with a header row; the named column becomes the target."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise CSVFormatError(f"{path}: missing target column {target_column!r}")
        t_idx = header.index(target_column)
        rows = []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CSVFormatError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(i for i, c in enumerate(row) if not _is_number(c))
                raise CSVFormatError(
                    f"{path}: non-numeric cell at row {r}, column {header[bad]!r}") from None
    if not rows:
        raise CSVFormatError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    feat_idx = [i for i in range(len(header)) if i != t_idx]
    names = tuple(header[i] for i in feat_idx)
    return Dataset.raw(table[:, feat_idx], table[:, t_idx], feature_names=names)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def save_csv(dataset: Dataset, path, target_column: str = "y"):
    names = dataset.feature_names or tuple(f"x{i}" for i in range(dataset.dim))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + [target_column])
        for row, target in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def normalize(dataset: Dataset) -> Dataset:
    """Standardize features and target to zero mean, unit variance."""
    x_mean = dataset.X.mean(axis=0)
    x_std = dataset.X.std(axis=0)
    for i, s in enumerate(x_std):
        if s <= 0:
            name = dataset.feature_names[i] if dataset.feature_names else f"column {i}"
            raise ValueError(f"zero variance feature {name!r}")
    y_std = float(dataset.y.std())
    if y_std <= 0:
        raise ValueError("zero variance target")
    y_mean = float(dataset.y.mean())
    return replace(dataset,
                   X=(dataset.X - x_mean) / x_std,
                   y=(dataset.y - y_mean) / y_std,
                   feature_means=x_mean, feature_stds=x_std,
                   y_mean=y_mean, y_std=y_std)


def denormalize_y(dataset: Dataset, y: np.ndarray) -> np.ndarray:
    return np.asarray(y) * dataset.y_std + dataset.y_mean


def corrupt(dataset: Dataset, p: float, seed: int) -> Dataset:
    """Shift round(p * N) targets up by OUTLIER_SHIFT (normalized units).

    Indices are sampled without replacement, so no point is ever shifted
    twice; the mask records exactly which rows were touched.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("corruption fraction must be in [0, 1)")
    n_out = round(p * dataset.n)
    if n_out == 0:
        return dataset
    g = rng.generator(seed, rng.compose_stream(rng.STREAM_CORRUPT))
    idx = g.choice(dataset.n, size=n_out, replace=False)
    y = dataset.y.copy()
    y[idx] += OUTLIER_SHIFT
    mask = dataset.outlier_mask.copy()
    mask[idx] = True
    return replace(dataset, y=y, outlier_mask=mask)


def metrics(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("metrics need non-empty arrays of equal length")
    err = y_pred - y_true
    mse = float(np.mean(err**2))
    return {"mae": float(np.mean(np.abs(err))), "mse": mse, "rmse": math.sqrt(mse)}


# ---------------------------------------------------------------------------
# toy experiment (table of MAE/MSE per divergence setting)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyRunConfig:
    n_train: int = 1000
    n_test: int = 1000
    dim: int = 4
    p_outliers: float = 0.05
    mc_samples: int = 5
    steps: int = 1000
    learning_rate: float = 0.01
    predict_draws: int = 1000

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_toy_experiment(settings: list[tuple[float, float]], seeds: list[int],
                       config: ToyRunConfig | None = None,
                       collect_reports: bool = False) -> dict:
    """Train one BLR per (lambda, beta) setting and seed; aggregate MAE/MSE.

    Settings are (lambda, beta) pairs; (1, 0) runs the KL path, anything
    else must land in the generic region.  Test data is a fresh clean draw
    per seed and is scored against the predictive mean.  With
    collect_reports the serialized per-run training reports (traces
    included) ride along in the result.
    """
    cfg = config or ToyRunConfig()
    rows = []
    reports = []
    for setting_idx, (lam, beta) in enumerate(settings):
        params = DivergenceParams.from_lambda(lam, beta)
        per_seed = []
        for seed in seeds:
            train_ds = gen_toy(cfg.n_train, cfg.dim, cfg.p_outliers, seed,
                               stream=rng.compose_stream(rng.STREAM_DATA, 0))
            test_ds = gen_toy(cfg.n_test, cfg.dim, 0.0, seed,
                              stream=rng.compose_stream(rng.STREAM_DATA, 1))
            model = BLRModel(input_dim=cfg.dim, noise_sigma=TOY_NOISE_SIGMA)
            try:
                report = train(params, MeanFieldGaussian.initial(model.dim), model,
                               train_ds, MCConfig(cfg.mc_samples, seed),
                               AdamConfig(learning_rate=cfg.learning_rate, steps=cfg.steps),
                               stream=rng.compose_stream(rng.STREAM_TRAIN, setting_idx))
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"toy setting (lambda={lam}, beta={beta}) seed {seed}: {exc}",
                    exc.report) from exc
            summary = predict(report.final, model, test_ds.X, cfg.predict_draws, seed,
                              stream=rng.compose_stream(rng.STREAM_PREDICT, setting_idx))
            m = metrics(test_ds.y, summary.mean)
            per_seed.append({"seed": seed, **m})
            if collect_reports:
                reports.append({"lambda": lam, "beta": beta, "seed": seed,
                                **report.to_dict()})
        to_arr = lambda key: np.array([r[key] for r in per_seed])
        rows.append({
            "lambda": lam, "beta": beta, "alpha": params.alpha,
            "kl_path": params.alpha == 1.0 and params.beta == 0.0,
            "mae_mean": float(to_arr("mae").mean()), "mae_std": float(to_arr("mae").std()),
            "mse_mean": float(to_arr("mse").mean()), "mse_std": float(to_arr("mse").std()),
            "rmse_mean": float(to_arr("rmse").mean()),
            "per_seed": per_seed,
        })
    result = {"config": cfg.to_dict(), "seeds": list(seeds), "rows": rows}
    if collect_reports:
        result["reports"] = reports
    return result


# ---------------------------------------------------------------------------
# nested cross-validated grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSearchSpec:
    """The (alpha, beta) grid; exact limit cells are excluded because the
    sampling estimator cannot train there, with the single exception of
    (1, 0) which trains through the KL path."""

    alpha_range: tuple[float, float] = (-0.5, 2.5)
    beta_range: tuple[float, float] = (-1.5, 1.5)
    step: float = 0.25

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.alpha_range[0] > self.alpha_range[1] or self.beta_range[0] > self.beta_range[1]:
            raise ValueError("ranges must be ordered")

    def cells(self) -> list[tuple[float, float]]:
        def axis(lo, hi):
            k = int(math.floor((hi - lo) / self.step + 1e-9))
            return [round(lo + i * self.step, 10) for i in range(k + 1)]

        out = []
        for a in axis(*self.alpha_range):
            for b in axis(*self.beta_range):
                if (a, b) == (1.0, 0.0):
                    out.append((a, b))
                    continue
                if a == 0.0 or b == 0.0 or round(a + b, 10) == 0.0:
                    continue
                out.append((a, b))
        return out


@dataclass(frozen=True)
class CVRunConfig:
    hidden: tuple[int, ...] = (10,)
    mc_samples: int = 5
    steps: int = 300
    learning_rate: float = 0.01
    predict_draws: int = 200
    noise_sigma: float = 0.1
    learn_noise: bool = False

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d

    def build_model(self, input_dim: int) -> BNNModel:
        return BNNModel(layer_sizes=(input_dim, *self.hidden, 1),
                        noise_log_sigma=math.log(self.noise_sigma),
                        learn_noise=self.learn_noise)

    @classmethod
    def full_scale(cls) -> "CVRunConfig":
        return cls(hidden=(50, 50), mc_samples=25, steps=500)


@dataclass
class CVReport:
    """Everything the selection produced, fold by fold and cell by cell."""

    grid: GridSearchSpec
    k1: int
    k2: int
    seed: int
    cells: list
    folds: list
    excluded_cells: list
    warnings: list
    selected: tuple[float, float]
    test_rmse_mean: float
    test_rmse_std: float
    kl_rmse_mean: float
    train_reports: list | None = None

    def to_dict(self) -> dict:
        out = {
            "grid": {"alpha_range": list(self.grid.alpha_range),
                     "beta_range": list(self.grid.beta_range), "step": self.grid.step},
            "k1": self.k1, "k2": self.k2, "seed": self.seed,
            "cells": self.cells, "folds": self.folds,
            "excluded_cells": self.excluded_cells, "warnings": self.warnings,
            "selected": list(self.selected),
            "test_rmse_mean": self.test_rmse_mean,
            "test_rmse_std": self.test_rmse_std,
            "kl_rmse_mean": self.kl_rmse_mean,
        }
        if self.train_reports is not None:
            out["train_reports"] = self.train_reports
        return out


def _kl_distance(cell: tuple[float, float]) -> float:
    return abs(cell[0] - 1.0) + abs(cell[1])


def _fold_scaler(X, y):
    xm, xs = X.mean(axis=0), X.std(axis=0)
    if np.any(xs <= 0):
        raise ValueError("zero variance feature inside a fold")
    ym, ys = float(y.mean()), float(y.std())
    if ys <= 0:
        raise ValueError("zero variance target inside a fold")
    return xm, xs, ym, ys


def _train_and_score(cell, model, X_tr, y_tr, X_ev, y_ev_clean, cfg, seed, stream_ids):
    params = DivergenceParams(cell[0], cell[1])
    report = train(params, MeanFieldGaussian.initial(model.dim), model,
                   XYData(X_tr, y_tr),
                   MCConfig(cfg.mc_samples, seed),
                   AdamConfig(learning_rate=cfg.learning_rate, steps=cfg.steps),
                   stream=rng.compose_stream(rng.STREAM_TRAIN, *stream_ids))
    summary = predict(report.final, model, X_ev, cfg.predict_draws, seed,
                      stream=rng.compose_stream(rng.STREAM_PREDICT, *stream_ids))
    return metrics(y_ev_clean, summary.mean)["rmse"], report


def nested_cv(dataset: Dataset, grid: GridSearchSpec, k1: int = 5, k2: int = 2,
              config: CVRunConfig | None = None, seed: int = 0,
              collect_reports: bool = False) -> CVReport:
    """Outer k1-fold / inner k2-fold grid search over (alpha, beta).

    Expects a normalized (and usually corrupted) dataset.  Scaling is
    refit on every outer training split; inner splits reuse the outer
    fold's scaler.  Training always sees observed (corrupted) targets
    while validation and test scores use the clean ones.  The per-fold
    winner is retrained on the whole outer training split, and the KL
    cell is scored the same way for comparison.  Cells whose training
    aborts on more than half of their inner fits are excluded from
    selection with a recorded warning.
    """
    if k1 < 2 or k2 < 2:
        raise ValueError("need k1 >= 2 and k2 >= 2")
    if dataset.n < k1 * k2:
        raise ValueError("dataset too small for the requested folds")
    cfg = config or CVRunConfig()
    cells = grid.cells()
    kl_cell = (1.0, 0.0)

    perm = rng.generator(seed, rng.compose_stream(rng.STREAM_FOLDS)).permutation(dataset.n)
    outer_folds = np.array_split(perm, k1)
    y_clean = dataset.y_clean

    val_scores = {cell: [] for cell in cells}
    failures = {cell: 0 for cell in cells}
    attempts = {cell: 0 for cell in cells}
    fold_rows = []
    warnings = []
    train_reports = [] if collect_reports else None

    def log_report(fold, cell, role, rep):
        if train_reports is not None:
            train_reports.append({"fold": fold, "alpha": cell[0], "beta": cell[1],
                                  "role": role, **rep.to_dict()})

    for f, test_idx in enumerate(outer_folds):
        train_idx = np.concatenate([fold for j, fold in enumerate(outer_folds) if j != f])
        xm, xs, ym, ys = _fold_scaler(dataset.X[train_idx], dataset.y[train_idx])
        scale_x = lambda X: (X - xm) / xs
        scale_y = lambda y: (y - ym) / ys
        X_tr_all = scale_x(dataset.X[train_idx])
        y_tr_obs = scale_y(dataset.y[train_idx])
        y_tr_clean = scale_y(y_clean[train_idx])
        X_te = scale_x(dataset.X[test_idx])
        y_te_clean = scale_y(y_clean[test_idx])
        model = cfg.build_model(dataset.dim)

        inner_perm = rng.generator(seed, rng.compose_stream(rng.STREAM_FOLDS, 1, f)) \
            .permutation(train_idx.size)
        inner_folds = np.array_split(inner_perm, k2)

        fold_cell_scores = {}
        for c, cell in enumerate(cells):
            scores = []
            for j, val_rows in enumerate(inner_folds):
                fit_rows = np.concatenate(
                    [rows for jj, rows in enumerate(inner_folds) if jj != j])
                attempts[cell] += 1
                try:
                    score, rep = _train_and_score(
                        cell, model, X_tr_all[fit_rows], y_tr_obs[fit_rows],
                        X_tr_all[val_rows], y_tr_clean[val_rows], cfg, seed,
                        (f, c, j))
                except TrainingDiverged:
                    failures[cell] += 1
                    continue
                log_report(f, cell, f"inner-{j}", rep)
                scores.append(score)
                val_scores[cell].append(score)
            if scores:
                fold_cell_scores[cell] = float(np.mean(scores))

        selectable = {cell: s for cell, s in fold_cell_scores.items()
                      if failures[cell] <= attempts[cell] / 2}
        if not selectable:
            raise TrainingDiverged(f"no trainable cell in outer fold {f}", None)
        winner = min(selectable, key=lambda cell: (selectable[cell], _kl_distance(cell)))

        test_rmse, rep = _train_and_score(winner, model, X_tr_all, y_tr_obs,
                                          X_te, y_te_clean, cfg, seed, (f, len(cells), 0))
        log_report(f, winner, "retrain", rep)
        if winner == kl_cell:
            kl_rmse = test_rmse
        else:
            kl_rmse, rep = _train_and_score(kl_cell, model, X_tr_all, y_tr_obs,
                                            X_te, y_te_clean, cfg, seed,
                                            (f, len(cells) + 1, 0))
            log_report(f, kl_cell, "kl-baseline", rep)
        fold_rows.append({
            "fold": f,
            "selected": list(winner),
            "selected_lambda": winner[0] + winner[1],
            "test_rmse": test_rmse,
            "kl_test_rmse": kl_rmse,
        })

    excluded = sorted(cell for cell in cells
                      if attempts[cell] and failures[cell] > attempts[cell] / 2)
    for cell in excluded:
        warnings.append(f"cell (alpha={cell[0]}, beta={cell[1]}) failed "
                        f"{failures[cell]}/{attempts[cell]} fits; excluded from selection")

    cell_rows = [{
        "alpha": cell[0], "beta": cell[1], "lambda": round(cell[0] + cell[1], 10),
        "val_rmse_mean": float(np.mean(val_scores[cell])) if val_scores[cell] else None,
        "val_rmse_std": float(np.std(val_scores[cell])) if val_scores[cell] else None,
        "n_scores": len(val_scores[cell]), "failures": failures[cell],
    } for cell in cells]

    counts = {}
    for row in fold_rows:
        key = tuple(row["selected"])
        counts[key] = counts.get(key, 0) + 1
    best = max(counts.values())
    selected = min((cell for cell, cnt in counts.items() if cnt == best),
                   key=_kl_distance)

    test_rmses = np.array([row["test_rmse"] for row in fold_rows])
    kl_rmses = np.array([row["kl_test_rmse"] for row in fold_rows])
    return CVReport(grid=grid, k1=k1, k2=k2, seed=seed, cells=cell_rows,
                    folds=fold_rows, excluded_cells=[list(c) for c in excluded],
                    warnings=warnings, selected=selected,
                    test_rmse_mean=float(test_rmses.mean()),
                    test_rmse_std=float(test_rmses.std()),
                    kl_rmse_mean=float(kl_rmses.mean()),
                    train_reports=train_reports)
