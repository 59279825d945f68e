"""Contrastive-divergence training with RMSprop, plus layer-wise stacking."""

import logging
import time
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .gibbs import run_chain
from .model import (
    DeepModel,
    Kind,
    MAX_BINARY_UNITS,
    check_visible,
    cond_hidden,
    cond_visible,
    doc_lengths,
    exact_log_partition,
    hidden_mean,
    init_model,
    log_p_star,
)
from .truncnorm import trunc_moments

log = logging.getLogger(__name__)

PARAM_NAMES = ("W", "a", "d", "b", "c")


@dataclass
class Gradient:
    """Log-likelihood ascent direction, one array per parameter."""

    dW: np.ndarray
    da: np.ndarray
    dd: np.ndarray
    db: np.ndarray
    dc: np.ndarray

    def __getitem__(self, name):
        return getattr(self, "d" + name)

    def __sub__(self, other):
        return Gradient(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, f.name)) for f in fields(self)])

    @classmethod
    def zeros_like(cls, model):
        return cls(*(np.zeros_like(getattr(model, p)) for p in PARAM_NAMES))


@dataclass
class TrainConfig:
    cd_k: int = 25
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.95
    rmsprop_epsilon: float = 1e-8
    batch_size: int = 100
    epochs: int = 1
    seed: int = 0
    fix_d: Optional[float] = None
    precision_floor: float = 1e-3
    # exact test log-likelihood is reported for binary models up to this size
    exact_max_units: int = 16

    def __post_init__(self):
        if self.cd_k < 1:
            raise ValueError("cd_k must be at least 1")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class RmspropState:
    mean_sq: Gradient

    @classmethod
    def fresh(cls, model):
        return cls(Gradient.zeros_like(model))


@dataclass
class EpochMetrics:
    epoch: int
    recon_error: float
    exact_loglik: Optional[float]
    wall_seconds: float


def hidden_moments(model, X):
    """E[h | x] and E[h^2 | x] for each row of X."""
    p = cond_hidden(model, X)
    if model.kind.truncated_hidden:
        return trunc_moments(p)
    return p.xi, p.xi ** 2 + p.lambda_sq


def log_p_star_grad(model, X):
    """Gradient of the batch-mean log p*(x), written with conditional moments.

    d/dW_ij = x_i E[h_j|x], d/dc_j = E[h_j|x] (times K for count data),
    d/dd_j = -E[h_j^2|x]/2, d/db_i = x_i, d/da_i = -x_i^2/2.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = X.shape[0]
    eh, eh2 = hidden_moments(model, X)
    scale = doc_lengths(X)[:, None] if model.kind is Kind.COUNT else 1.0
    return Gradient(
        dW=X.T @ eh / B,
        da=-0.5 * np.mean(X * X, axis=0) if model.kind.has_precision else np.zeros(model.n),
        dd=-0.5 * np.mean(eh2, axis=0),
        db=np.mean(X, axis=0),
        dc=np.mean(scale * eh, axis=0),
    )


def moment_gradient(model, x_data, x_model):
    """CD estimate from the chain's first and last visible states."""
    return log_p_star_grad(model, x_data) - log_p_star_grad(model, x_model)


def cd_gradient(model, X, cd_k, rng):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    chain = run_chain(model, X, cd_k, rng)
    return moment_gradient(model, X, chain.x)


def rmsprop_update(model, grad, state, cfg):
    """One ascent step; returns (new_model, new_state).  Inputs are not mutated."""
    rho = cfg.rmsprop_decay
    mean_sq = Gradient(*(rho * state.mean_sq[p] + (1.0 - rho) * grad[p] ** 2 for p in PARAM_NAMES))
    learn_d = model.d_learnable and cfg.fix_d is None
    new = {}
    for p in PARAM_NAMES:
        value = getattr(model, p)
        if (p == "a" and not model.kind.has_precision) or (p == "d" and not learn_d):
            new[p] = np.array(value)
            continue
        new[p] = value + cfg.learning_rate * grad[p] / (np.sqrt(mean_sq[p]) + cfg.rmsprop_epsilon)
    if model.kind.has_precision:
        new["a"] = np.maximum(new["a"], cfg.precision_floor)
    new["d"] = np.maximum(new["d"], cfg.precision_floor)
    if cfg.fix_d is not None:
        new["d"] = np.full(model.m, float(cfg.fix_d))
    return model.copy(**new), RmspropState(mean_sq)


def reconstruction_error(model, X):
    """Mean squared gap between x and E[x | h = E[h | x]]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cond = cond_visible(model, hidden_mean(model, X))
    lengths = doc_lengths(X) if model.kind is Kind.COUNT else None
    return float(np.mean((X - cond.mean(lengths)) ** 2))


def exact_test_loglik(model, X):
    return float(np.mean(log_p_star(model, X)) - exact_log_partition(model))


def _as_matrix(data):
    if hasattr(data, "to_array"):
        return data.to_array()
    return np.atleast_2d(np.asarray(data, dtype=float))


def train(model, data, cfg, test=None, callback=None):
    """Minibatch CD-k training.

    Returns the trained model and one ``EpochMetrics`` per epoch, including an
    epoch-0 row for the initial model.  ``callback`` receives each row as it
    is produced.  The exact log-likelihood is measured on ``test`` (or the
    training data) for binary models with at most ``cfg.exact_max_units``
    visible units.
    """
    X = _as_matrix(data)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    check_visible(model, X)
    if model.kind is Kind.COUNT:
        empty = doc_lengths(X) == 0
        if empty.any():
            log.warning("skipping %d empty documents", int(empty.sum()))
            X = X[~empty]
            if X.shape[0] == 0:
                raise ValueError("training data has no non-empty documents")
    X_eval = X if test is None else _as_matrix(test)
    exact = model.kind.binary_visible and model.n <= min(cfg.exact_max_units, MAX_BINARY_UNITS)

    rng = np.random.default_rng(cfg.seed)
    state = RmspropState.fresh(model)
    metrics = []
    start = time.perf_counter()

    def record(epoch):
        row = EpochMetrics(
            epoch=epoch,
            recon_error=reconstruction_error(model, X),
            exact_loglik=exact_test_loglik(model, X_eval) if exact else None,
            wall_seconds=time.perf_counter() - start,
        )
        metrics.append(row)
        if callback is not None:
            callback(row)

    record(0)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(X.shape[0])
        for lo in range(0, len(order), cfg.batch_size):
            batch = X[order[lo:lo + cfg.batch_size]]
            grad = cd_gradient(model, batch, cfg.cd_k, rng)
            model, state = rmsprop_update(model, grad, state, cfg)
        record(epoch)
    return model, metrics


def fit(data, n_hidden, kind, cfg, test=None, callback=None):
    """Initialize from ``cfg.seed`` and train."""
    X = _as_matrix(data)
    model = init_model(X.shape[1], n_hidden, kind, seed=cfg.seed)
    if cfg.fix_d is not None:
        model = model.copy(d=np.full(n_hidden, float(cfg.fix_d)))
    return train(model, X, cfg, test=test, callback=callback)


def train_deep(widths, data, cfg, kind=Kind.BINARY, callback=None):
    """Layer-wise training; each layer learns from E[h | x] of the one below.

    ``callback`` receives ``(layer_index, EpochMetrics)``.  Layer l > 0 uses
    seed ``cfg.seed + l``.
    """
    if not widths:
        raise ValueError("need at least one hidden layer")
    X = _as_matrix(data)
    layers, history = [], []
    for ell, width in enumerate(widths):
        layer_cfg = cfg if ell == 0 else _reseed(cfg, cfg.seed + ell)
        layer_kind = kind if ell == 0 else Kind.TRUNCATED_REAL
        cb = None if callback is None else (lambda row, ell=ell: callback(ell, row))
        model, metrics = fit(X, width, layer_kind, layer_cfg, callback=cb)
        layers.append(model)
        history.append(metrics)
        X = hidden_mean(model, X)
    return DeepModel(layers), history


def _reseed(cfg, seed):
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values["seed"] = seed
    return TrainConfig(**values)


def relu_layers(deep):
    """Affine maps (weight, bias) with ReLU(weight @ x + bias) ~ E[h | x]."""
    out = []
    for layer in deep.layers:
        out.append((layer.W.T / layer.d[:, None], layer.c / layer.d))
    return out


def export_relu_init(deep, path):
    from .data_io import save_relu_init

    if not isinstance(deep, DeepModel):
        deep = DeepModel([deep])
    save_relu_init(path, deep)
