"""Regression joint densities: Bayesian linear regression and a small
ReLU Bayesian neural network.

A model exposes ``dim``, ``log_joint(theta, data)``,
``grad_log_joint(theta, data)`` and ``predict_f(theta, X)``; anything with
that surface plugs into the variational trainer.  ``data`` is any object
with ``X`` (N x D) and ``y`` (N,) attributes.

Gradient correctness for every model is enforced by
`check_log_joint_gradient`, the shared finite-difference conformance
check, run both in the tests and by the gradient-diagnostics command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng

_LOG_2PI = math.log(2.0 * math.pi)


class XYData(NamedTuple):
    X: np.ndarray
    y: np.ndarray


def _as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("data must provide X as N x D and y of length N")
    return X, y


def _gaussian_logpdf_sum(resid: np.ndarray, sigma: float) -> float:
    n = resid.size
    return float(-0.5 * np.dot(resid, resid) / sigma**2
                 - n * (math.log(sigma) + 0.5 * _LOG_2PI))


# ---------------------------------------------------------------------------
# Bayesian linear regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BLRModel:
    """Gaussian-prior, Gaussian-likelihood linear regression.

    theta packs the weights first and the bias last (when present).
    """

    input_dim: int
    prior_w_sigma: float = 1.0
    prior_b_sigma: float = 1.0
    noise_sigma: float = 0.1
    include_bias: bool = True

    def __post_init__(self):
        if min(self.prior_w_sigma, self.prior_b_sigma, self.noise_sigma) <= 0:
            raise ValueError("all model sigmas must be positive")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")

    @property
    def dim(self) -> int:
        return self.input_dim + (1 if self.include_bias else 0)

    def _split(self, theta: np.ndarray) -> tuple[np.ndarray, float]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        if self.include_bias:
            return theta[:-1], float(theta[-1])
        return theta, 0.0

    def predict_f(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        w, b = self._split(theta)
        return np.asarray(X, dtype=float) @ w + b

    def log_joint(self, theta: np.ndarray, data) -> float:
        w, b = self._split(theta)
        X, y = _as_xy(data)
        value = _gaussian_logpdf_sum(w, self.prior_w_sigma)
        if self.include_bias:
            value += _gaussian_logpdf_sum(np.array([b]), self.prior_b_sigma)
        if y.size:
            value += _gaussian_logpdf_sum(y - self.predict_f(theta, X), self.noise_sigma)
        return value

    def grad_log_joint(self, theta: np.ndarray, data) -> np.ndarray:
        w, b = self._split(theta)
        X, y = _as_xy(data)
        resid = y - self.predict_f(theta, X) if y.size else np.zeros(0)
        grad_w = -w / self.prior_w_sigma**2
        if y.size:
            grad_w = grad_w + X.T @ resid / self.noise_sigma**2
        if not self.include_bias:
            return grad_w
        grad_b = -b / self.prior_b_sigma**2
        if y.size:
            grad_b += resid.sum() / self.noise_sigma**2
        return np.concatenate([grad_w, [grad_b]])


def blr_design_matrix(model: BLRModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if not model.include_bias:
        return X
    return np.hstack([X, np.ones((X.shape[0], 1))])


def blr_exact_posterior(model: BLRModel, data) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form Gaussian posterior (mean, covariance).

    Precision = Phi' Phi / noise^2 + prior precisions.  A singular
    precision raises numpy's LinAlgError; regularization is the prior's
    job, never added silently here.
    """
    X, y = _as_xy(data)
    phi = blr_design_matrix(model, X)
    prior_prec = np.full(model.dim, model.prior_w_sigma ** -2)
    if model.include_bias:
        prior_prec[-1] = model.prior_b_sigma ** -2
    precision = phi.T @ phi / model.noise_sigma**2 + np.diag(prior_prec)
    cov = np.linalg.inv(precision)
    mean = cov @ (phi.T @ y) / model.noise_sigma**2
    return mean, cov


# ---------------------------------------------------------------------------
# Bayesian neural network (ReLU MLP, Gaussian likelihood)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BNNModel:
    """Fully connected ReLU network with standard-normal weight priors.

    Parameter packing is normative so seeds reproduce: for each layer,
    the weight matrix W (out x in) in row-major order, then the bias
    vector; an optional learnable log-noise scalar sits at the very end.
    The ReLU subgradient at exactly zero is taken to be 0.
    """

    layer_sizes: tuple[int, ...]
    prior_sigma: float = 1.0
    noise_log_sigma: float = math.log(0.1)
    learn_noise: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need at least input, one hidden layer, and output")
        if sizes[-1] != 1:
            raise ValueError("output layer must have size 1")
        if any(s < 1 for s in sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.prior_sigma <= 0:
            raise ValueError("prior_sigma must be positive")

    @property
    def dim(self) -> int:
        count = sum(n_out * n_in + n_out
                    for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        return count + (1 if self.learn_noise else 0)

    def _unpack(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        layers = []
        pos = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = theta[pos:pos + n_out * n_in].reshape(n_out, n_in)
            pos += n_out * n_in
            b = theta[pos:pos + n_out]
            pos += n_out
            layers.append((W, b))
        log_sigma = float(theta[pos]) if self.learn_noise else self.noise_log_sigma
        return layers, log_sigma

    def _forward(self, layers, X: np.ndarray):
        h = np.asarray(X, dtype=float)
        pre_acts = []
        acts = [h]
        for i, (W, b) in enumerate(layers):
            z = h @ W.T + b
            pre_acts.append(z)
            h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
            acts.append(h)
        return acts, pre_acts

    def predict_f(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        layers, _ = self._unpack(theta)
        acts, _ = self._forward(layers, X)
        return acts[-1][:, 0]

    def log_joint(self, theta: np.ndarray, data) -> float:
        layers, log_sigma = self._unpack(theta)
        X, y = _as_xy(data)
        theta = np.asarray(theta, dtype=float)
        value = _gaussian_logpdf_sum(theta, self.prior_sigma)
        if y.size:
            f = self.predict_f(theta, X)
            value += _gaussian_logpdf_sum(y - f, math.exp(log_sigma))
        return value

    def grad_log_joint(self, theta: np.ndarray, data) -> np.ndarray:
        layers, log_sigma = self._unpack(theta)
        X, y = _as_xy(data)
        theta = np.asarray(theta, dtype=float)
        grad = -theta / self.prior_sigma**2
        if not y.size:
            return grad

        sigma = math.exp(log_sigma)
        acts, pre_acts = self._forward(layers, X)
        resid = y - acts[-1][:, 0]
        # backprop of the Gaussian log-likelihood through the network
        delta = (resid / sigma**2)[:, None]  # d loglik / d output
        pos = self.dim - (1 if self.learn_noise else 0)
        grads_rev = []
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            gW = delta.T @ acts[i]
            gb = delta.sum(axis=0)
            grads_rev.append((gW, gb))
            if i > 0:
                delta = (delta @ W) * (pre_acts[i - 1] > 0)
        flat = []
        for gW, gb in reversed(grads_rev):
            flat.append(gW.ravel())
            flat.append(gb)
        net_grad = np.concatenate(flat)
        grad[:pos] += net_grad
        if self.learn_noise:
            grad[pos] += float(np.sum(resid**2 / sigma**2 - 1.0))
        return grad


def model_noise_sigma(model) -> float:
    if isinstance(model, BLRModel):
        return model.noise_sigma
    if isinstance(model, BNNModel):
        return math.exp(model.noise_log_sigma)
    return float(getattr(model, "noise_sigma", 0.0))


# ---------------------------------------------------------------------------
# model configuration format (JSON-friendly dicts)
# ---------------------------------------------------------------------------


def model_to_config(model) -> dict:
    if isinstance(model, BLRModel):
        return {"kind": "blr", "input_dim": model.input_dim,
                "prior_w_sigma": model.prior_w_sigma,
                "prior_b_sigma": model.prior_b_sigma,
                "noise_sigma": model.noise_sigma,
                "include_bias": model.include_bias}
    if isinstance(model, BNNModel):
        return {"kind": "bnn", "layer_sizes": list(model.layer_sizes),
                "prior_sigma": model.prior_sigma,
                "noise_sigma": math.exp(model.noise_log_sigma),
                "learn_noise": model.learn_noise}
    raise ValueError(f"cannot serialize model of type {type(model).__name__}")


def model_from_config(config: dict):
    """Build a model from its configuration dict (kinds: "blr", "bnn")."""
    kind = config.get("kind")
    try:
        if kind == "blr":
            return BLRModel(input_dim=int(config["input_dim"]),
                            prior_w_sigma=config.get("prior_w_sigma", 1.0),
                            prior_b_sigma=config.get("prior_b_sigma", 1.0),
                            noise_sigma=config.get("noise_sigma", 0.1),
                            include_bias=config.get("include_bias", True))
        if kind == "bnn":
            return BNNModel(layer_sizes=tuple(config["layer_sizes"]),
                            prior_sigma=config.get("prior_sigma", 1.0),
                            noise_log_sigma=math.log(config.get("noise_sigma", 0.1)),
                            learn_noise=config.get("learn_noise", False))
    except KeyError as exc:
        raise ValueError(f"model config missing field {exc}") from exc
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# posterior-predictive evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictiveSummary:
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)
    draws: int

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("need at least one posterior draw")


def predict(q, model, X_test: np.ndarray, draws: int, seed: int,
            stream: int | None = None) -> PredictiveSummary:
    """Monte Carlo posterior-predictive mean and stddev.

    Draws reparameterized thetas from q, averages the deterministic model
    outputs, and adds the observation noise to the spread in quadrature
    (so the predictive stddev never drops below the noise floor).
    """
    X_test = np.asarray(X_test, dtype=float)
    if stream is None:
        stream = rng.compose_stream(rng.STREAM_PREDICT)
    eps = rng.noise_block(seed, stream, 0, draws, q.dim).epsilons
    thetas = q.mu[None, :] + np.exp(q.log_sigma)[None, :] * eps
    outputs = np.stack([model.predict_f(theta, X_test) for theta in thetas])
    mean = outputs.mean(axis=0)
    var = outputs.var(axis=0)
    noise = model_noise_sigma(model)
    return PredictiveSummary(mean=mean, std=np.sqrt(var + noise**2), draws=draws)


# ---------------------------------------------------------------------------
# shared gradient conformance check
# ---------------------------------------------------------------------------


def check_log_joint_gradient(model, data, seed: int = 0, n_points: int = 20,
                             h: float = 1e-6, scale: float = 0.5) -> float:
    """Max relative error between grad_log_joint and central differences.

    Points are drawn continuously so ReLU kinks are almost surely avoided;
    each component error is measured against max(1, |finite difference|).
    """
    g = rng.generator(seed, rng.compose_stream(rng.STREAM_DATA))
    worst = 0.0
    for _ in range(n_points):
        theta = scale * g.standard_normal(model.dim)
        analytic = model.grad_log_joint(theta, data)
        fd = np.empty_like(analytic)
        for i in range(model.dim):
            step = np.zeros(model.dim)
            step[i] = h * max(1.0, abs(theta[i]))
            fd[i] = (model.log_joint(theta + step, data)
                     - model.log_joint(theta - step, data)) / (2 * step[i])
        err = np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)))
        worst = max(worst, float(err))
    return worst
