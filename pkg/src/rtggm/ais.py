"""Annealed importance sampling for log Z, test log-probabilities and perplexity.

The path runs from a base-rate model A (no couplings, visible biases b_A,
hidden units with the target's precisions) to the target B.  Hidden units of
both ends are integrated out analytically, so each chain only carries x.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .gibbs import draw_visible
from .model import Kind, VisibleConditional, check_visible, doc_lengths, hidden_input, log_p_star
from .truncnorm import TruncNormParams, sample_trunc, std_normal_log_cdf

AIS_KINDS = (Kind.BINARY, Kind.COUNT, Kind.RGGM_BINARY)


@dataclass
class BaseRateModel:
    b_A: np.ndarray


@dataclass
class AISConfig:
    n_temps: int = 100_000
    n_chains: int = 100
    schedule: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.n_temps < 2 or self.n_chains < 1:
            raise ValueError("need n_temps >= 2 and n_chains >= 1")
        if self.schedule != "uniform":
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def betas(self):
        return np.linspace(0.0, 1.0, self.n_temps)


@dataclass
class AISResult:
    log_weights: np.ndarray
    log_z: float
    log_z_stderr: float
    log_z_base: float = field(default=0.0)


def fit_base_rate(data, smoothing=0.01, kind=Kind.BINARY):
    """Visible biases of the base model from data marginals."""
    X = data.to_array() if hasattr(data, "to_array") else np.atleast_2d(np.asarray(data, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("cannot fit a base rate to empty data")
    kind = Kind(kind)
    if kind.binary_visible:
        p = X.mean(axis=0)
        return BaseRateModel(np.log((p + smoothing) / (1.0 - p + smoothing)))
    if kind is Kind.COUNT:
        freq = X.sum(axis=0) / X.sum()
        return BaseRateModel(np.log(freq + smoothing))
    raise ValueError(f"base-rate model not defined for {kind.name}")


def _check_kind(model):
    if model.kind not in AIS_KINDS:
        raise ValueError(f"AIS is implemented for binary, count and RGGM models, not {model.kind.name}")


def _hidden_const(model, scale):
    """log integral of exp(-scale * d h^2 / 2) over the model's hidden domain."""
    out = 0.5 * np.log(2.0 * np.pi / (scale * model.d))
    if model.kind.truncated_hidden:
        out = out - np.log(2.0)
    return float(np.sum(out))


def log_z_base(base, model, length=None):
    _check_kind(model)
    if model.kind is Kind.COUNT:
        if length is None:
            raise ValueError("count base partition function needs a document length")
        visible = length * float(logsumexp(base.b_A))
    else:
        visible = float(np.sum(np.logaddexp(0.0, base.b_A)))
    return visible + _hidden_const(model, 1.0)


def intermediate_log_p_star(model, base, X, beta):
    """log p*_beta(x) with both hidden layers integrated out.

    At beta = 0 the target's hidden factor is absent and at beta = 1 the base
    model's hidden factor is absent, so the endpoints are exactly the base
    and target unnormalized marginals.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    out = (1.0 - beta) * (X @ base.b_A)
    if beta < 1.0:
        out = out + _hidden_const(model, 1.0 - beta)
    if beta > 0.0:
        if beta == 1.0:
            out = out + log_p_star(model, X)
        else:
            s = hidden_input(model, X)
            tempered = beta * (X @ model.b) + np.sum(beta * s * s / (2.0 * model.d), axis=-1)
            tempered += np.sum(0.5 * np.log(2.0 * np.pi / (beta * model.d)))
            if model.kind.truncated_hidden:
                tempered += np.sum(std_normal_log_cdf(np.sqrt(beta) * s / np.sqrt(model.d)), axis=-1)
            out = out + tempered
    return float(out[0]) if single else out


def _sample_base(model, base, n_chains, rng, length):
    if model.kind is Kind.COUNT:
        probs = softmax(base.b_A)
        return rng.multinomial(int(length), probs, size=n_chains).astype(float)
    return (rng.random((n_chains, model.n)) < expit(base.b_A)).astype(float)


def _transition(model, base, X, beta, rng, lengths):
    """Gibbs sweep leaving p_beta invariant: h_B | x, then x | h_B.

    The base model's hidden units never couple to x, so they are not drawn.
    """
    s = hidden_input(model, X)
    xi = s / model.d
    var = 1.0 / (beta * model.d)
    if model.kind.truncated_hidden:
        h = np.asarray(sample_trunc(TruncNormParams(xi, np.broadcast_to(var, xi.shape)), rng))
    else:
        h = xi + np.sqrt(var) * rng.standard_normal(xi.shape)
    t = (1.0 - beta) * base.b_A + beta * (h @ model.W.T + model.b)
    if model.kind is Kind.COUNT:
        return draw_visible(VisibleConditional(Kind.COUNT, probs=softmax(t, axis=-1)), rng, lengths)
    return (rng.random(t.shape) < expit(t)).astype(float)


def ais_run(model, base, cfg, rng=None, length=None):
    """Estimate log Z of ``model``; count models need the document length."""
    _check_kind(model)
    if model.kind is Kind.COUNT and (length is None or length < 1):
        raise ValueError("count AIS needs a positive document length")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    betas = cfg.betas()
    X = _sample_base(model, base, cfg.n_chains, rng, length)
    lengths = doc_lengths(X) if model.kind is Kind.COUNT else None
    log_w = np.zeros(cfg.n_chains)
    f_prev = intermediate_log_p_star(model, base, X, betas[0])
    for k in range(1, len(betas)):
        f_next = intermediate_log_p_star(model, base, X, betas[k])
        log_w += f_next - f_prev
        if k == len(betas) - 1:
            break
        X = _transition(model, base, X, betas[k], rng, lengths)
        f_prev = intermediate_log_p_star(model, base, X, betas[k])
    lz_base = log_z_base(base, model, length)
    log_mean_w = float(logsumexp(log_w) - np.log(cfg.n_chains))
    # delta method: var(log z_hat) ~ var(w) / (M mean(w)^2)
    ratio = np.exp(log_w - log_mean_w)
    stderr = float(np.sqrt(np.var(ratio) / cfg.n_chains))
    return AISResult(log_weights=log_w, log_z=log_mean_w + lz_base, log_z_stderr=stderr,
                     log_z_base=lz_base)


def ais_per_length(model, base, cfg, lengths):
    """One AIS estimate per distinct document length; keyed by length."""
    out = {}
    for K in sorted({int(k) for k in lengths}):
        rng = np.random.default_rng([cfg.seed, K])
        out[K] = ais_run(model, base, cfg, rng, length=K)
    return out


def test_log_prob(model, log_z, X):
    """Per-example log p(x) = log p*(x) - log Z, and their mean."""
    if not np.isfinite(log_z):
        raise ValueError("log_z must be finite")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    check_visible(model, X)
    lp = log_p_star(model, X) - log_z
    return lp, float(np.mean(lp))


test_log_prob.__test__ = False  # not a pytest test


def perplexity(model, log_z_per_length, X):
    """exp(-sum_d log p(X_d) / sum_d K_d) over a set of documents."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    check_visible(model, X)
    lengths = doc_lengths(X).astype(int)
    missing = sorted(set(lengths.tolist()) - set(log_z_per_length))
    if missing:
        raise ValueError(f"no log Z available for document lengths {missing}")
    log_z = np.array([log_z_per_length[K] for K in lengths], dtype=float)
    total = float(np.sum(log_p_star(model, X) - log_z))
    return float(np.exp(-total / lengths.sum()))
