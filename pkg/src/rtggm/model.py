"""Model parameters, energies, conditionals and closed-form marginals.

Visible states are always handled in batch form: ``X`` has shape (B, n).  For
count data a row is the word-count vector of one document (n = vocabulary
size) and its length K is the row sum.  Single vectors are promoted to a batch
of one and the result is squeezed back.
"""

import enum
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln, logsumexp, softmax

from .truncnorm import (
    TruncNormParams,
    std_normal_log_cdf,
    trunc_mean,
)


class DomainError(ValueError):
    """A visible or hidden state lies outside the model's domain."""


class Kind(enum.IntEnum):
    # values double as checkpoint kind tags
    TRUNCATED_REAL = 0
    REAL = 1
    BINARY = 2
    COUNT = 3
    RGGM_BINARY = 4

    @property
    def has_precision(self):
        """Whether the visible precisions ``a`` enter the energy."""
        return self in (Kind.TRUNCATED_REAL, Kind.REAL)

    @property
    def truncated_hidden(self):
        return self is not Kind.RGGM_BINARY

    @property
    def binary_visible(self):
        return self in (Kind.BINARY, Kind.RGGM_BINARY)


@dataclass
class ModelParams:
    """One two-layer model: couplings W (n x m), precisions a, d, biases b, c.

    For ``Kind.COUNT`` n is the vocabulary size and ``a`` is unused.
    """

    W: np.ndarray
    a: np.ndarray
    d: np.ndarray
    b: np.ndarray
    c: np.ndarray
    kind: Kind
    d_learnable: bool = True

    def __post_init__(self):
        self.kind = Kind(self.kind)
        for name in ("a", "d", "b", "c"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        self.W = np.asarray(self.W, dtype=float).reshape(len(self.b), len(self.c))
        self.validate()

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def m(self):
        return self.W.shape[1]

    @property
    def vocab_size(self):
        return self.n if self.kind is Kind.COUNT else 0

    def validate(self):
        n, m = self.W.shape
        if self.a.shape != (n,) or self.b.shape != (n,):
            raise ValueError(f"a and b must have length {n}")
        if self.d.shape != (m,) or self.c.shape != (m,):
            raise ValueError(f"d and c must have length {m}")
        for name in ("W", "a", "d", "b", "c"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        if np.any(self.d <= 0):
            raise ValueError("hidden precisions d must be positive")
        if self.kind.has_precision and np.any(self.a <= 0):
            raise ValueError("visible precisions a must be positive")
        if self.kind is Kind.COUNT and n < 2:
            raise ValueError("count models need a vocabulary of at least 2 words")

    def copy(self, **changes):
        fields = {k: np.array(getattr(self, k)) for k in ("W", "a", "d", "b", "c")}
        fields.update(changes)
        return replace(self, **fields)


@dataclass
class DeepModel:
    """Stack of two-layer models, bottom first."""

    layers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a deep model needs at least one layer")
        for lo, hi in zip(self.layers, self.layers[1:]):
            if lo.m != hi.n:
                raise ValueError(f"hidden width {lo.m} does not match next visible width {hi.n}")
            if hi.kind is not Kind.TRUNCATED_REAL:
                raise ValueError("layers above the bottom must be TRUNCATED_REAL")


def init_model(n, m, kind, seed=0, W_std=0.01, vocab_size=None):
    """Small random couplings, zero biases, a = 1, d = 5 for binary else 1.

    Binary models start with ``d_learnable=False``; everything else learns d.
    """
    kind = Kind(kind)
    if kind is Kind.COUNT and vocab_size is not None:
        n = vocab_size
    rng = np.random.default_rng(seed)
    d0 = 5.0 if kind is Kind.BINARY else 1.0
    return ModelParams(
        W=rng.normal(0.0, W_std, size=(n, m)),
        a=np.ones(n) if kind.has_precision else np.zeros(n),
        d=np.full(m, d0),
        b=np.zeros(n),
        c=np.zeros(m),
        kind=kind,
        d_learnable=kind is not Kind.BINARY,
    )


def _batch(X):
    X = np.asarray(X, dtype=float)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def check_visible(model, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.n:
        raise DomainError(f"visible state has {X.shape[-1]} units, model expects {model.n}")
    kind = model.kind
    if kind.binary_visible and not np.all((X == 0) | (X == 1)):
        raise DomainError("binary visible states must be in {0, 1}")
    if kind is Kind.TRUNCATED_REAL and np.any(X < 0):
        raise DomainError("truncated visible states must be nonnegative")
    if kind is Kind.COUNT and (np.any(X < 0) or np.any(X != np.round(X))):
        raise DomainError("count vectors must hold nonnegative integers")
    if not np.all(np.isfinite(X)):
        raise DomainError("visible state has non-finite entries")


def doc_lengths(X):
    return np.asarray(X, dtype=float).sum(axis=-1)


def hidden_input(model, X):
    """s = W^T x + c, or W^T x_hat + K c for count data; shape (B, m)."""
    X, _ = _batch(X)
    s = X @ model.W
    if model.kind is Kind.COUNT:
        return s + doc_lengths(X)[:, None] * model.c
    return s + model.c


def energy(model, x, h):
    x, single = _batch(x)
    h = np.asarray(h, dtype=float)
    h = h[None, :] if h.ndim == 1 else h
    check_visible(model, x)
    if h.shape[-1] != model.m:
        raise DomainError(f"hidden state has {h.shape[-1]} units, model expects {model.m}")
    if model.kind.truncated_hidden and np.any(h < 0):
        raise DomainError("hidden states must be nonnegative")
    hcoef = doc_lengths(x)[:, None] if model.kind is Kind.COUNT else 1.0
    e = 0.5 * np.sum(model.d * h * h, axis=-1)
    e -= np.sum((x @ model.W) * h, axis=-1)
    e -= x @ model.b
    e -= np.sum(hcoef * model.c * h, axis=-1)
    if model.kind.has_precision:
        e += 0.5 * np.sum(model.a * x * x, axis=-1)
    return float(e[0]) if single else e


def cond_hidden(model, X):
    """Per-unit (xi, lambda^2) of p(h | x); lambda^2 = 1/d regardless of x.

    For RGGM models the same pair parameterizes an untruncated normal.
    """
    Xb, single = _batch(X)
    check_visible(model, Xb)
    xi = hidden_input(model, Xb) / model.d
    lam_sq = np.broadcast_to(1.0 / model.d, xi.shape)
    if single:
        return TruncNormParams(xi[0], lam_sq[0])
    return TruncNormParams(xi, lam_sq)


def hidden_mean(model, X):
    """E[h | x]."""
    p = cond_hidden(model, X)
    if model.kind.truncated_hidden:
        return np.asarray(trunc_mean(p))
    return np.asarray(p.xi)


@dataclass
class VisibleConditional:
    """p(x | h) for a batch of hidden states.

    ``loc``/``var`` describe (truncated) normals; ``probs`` describe Bernoulli
    units or, for count data, one categorical over the vocabulary per row.
    """

    kind: Kind
    loc: np.ndarray = None
    var: np.ndarray = None
    probs: np.ndarray = None

    def mean(self, lengths=None):
        if self.kind is Kind.TRUNCATED_REAL:
            return np.asarray(trunc_mean(TruncNormParams(self.loc, self.var)))
        if self.kind is Kind.REAL:
            return self.loc
        if self.kind is Kind.COUNT:
            if lengths is None:
                raise ValueError("count conditional mean needs document lengths")
            return np.asarray(lengths, dtype=float)[..., None] * self.probs
        return self.probs


def visible_input(model, H):
    H = np.asarray(H, dtype=float)
    return H @ model.W.T + model.b


def cond_visible(model, H):
    H = np.asarray(H, dtype=float)
    if H.shape[-1] != model.m:
        raise DomainError(f"hidden state has {H.shape[-1]} units, model expects {model.m}")
    if model.kind.truncated_hidden and np.any(H < 0):
        raise DomainError("hidden states must be nonnegative")
    t = visible_input(model, H)
    kind = model.kind
    if kind.has_precision:
        return VisibleConditional(kind, loc=t / model.a, var=np.broadcast_to(1.0 / model.a, t.shape))
    if kind is Kind.COUNT:
        return VisibleConditional(kind, probs=softmax(t, axis=-1))
    return VisibleConditional(kind, probs=expit(t))


def hidden_log_integral(s, d, truncated=True):
    """log of the integral over h of exp(-d h^2 / 2 + s h), over [0, inf) or R."""
    out = 0.5 * np.log(2.0 * np.pi / d) + s * s / (2.0 * d)
    if truncated:
        out = out + std_normal_log_cdf(s / np.sqrt(d))
    return out


def log_p_star(model, X):
    """log of the unnormalized visible marginal, hidden units integrated out."""
    Xb, single = _batch(X)
    check_visible(model, Xb)
    s = hidden_input(model, Xb)
    out = np.sum(hidden_log_integral(s, model.d, model.kind.truncated_hidden), axis=-1)
    out = out + Xb @ model.b
    if model.kind.has_precision:
        out = out - 0.5 * np.sum(model.a * Xb * Xb, axis=-1)
    return float(out[0]) if single else out


MAX_BINARY_UNITS = 20
MAX_SEQUENCES = 10**6


def count_states(vocab_size, length):
    """All count vectors with the given total, with log multiplicities.

    The multiplicity is the number of ordered word sequences mapping to each
    count vector (the multinomial coefficient).
    """
    rows = []
    for combo in itertools.combinations_with_replacement(range(vocab_size), length):
        rows.append(np.bincount(np.asarray(combo, dtype=int), minlength=vocab_size))
    X = np.asarray(rows, dtype=float).reshape(-1, vocab_size)
    log_mult = gammaln(length + 1.0) - np.sum(gammaln(X + 1.0), axis=1)
    return X, log_mult


def binary_states(n):
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(-1, n)


def exact_log_partition(model, length=None):
    """Brute-force log Z over the whole visible domain.

    Binary kinds sum over all 2^n states.  Count models sum over every ordered
    word sequence of ``length`` words (Z depends on the document length).
    """
    kind = model.kind
    if kind.binary_visible:
        if model.n > MAX_BINARY_UNITS:
            raise ValueError(f"exact enumeration limited to n <= {MAX_BINARY_UNITS}, got n={model.n}")
        return float(logsumexp(log_p_star(model, binary_states(model.n))))
    if kind is Kind.COUNT:
        if length is None:
            raise ValueError("count partition function needs a document length")
        if length * math.log(model.n) > math.log(MAX_SEQUENCES) + 1e-9:
            raise ValueError(f"exact enumeration limited to N^K <= {MAX_SEQUENCES}, got {model.n}^{length}")
        X, log_mult = count_states(model.n, int(length))
        return float(logsumexp(log_p_star(model, X) + log_mult))
    raise ValueError(f"exact partition function not available for {kind.name}")


def precision_matrix(model):
    if model.kind is not Kind.TRUNCATED_REAL:
        raise ValueError("the joint precision matrix is defined for TRUNCATED_REAL models")
    return np.block([[np.diag(model.a), -model.W], [-model.W.T, np.diag(model.d)]])


def is_positive_definite(model):
    P = precision_matrix(model)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return False
    return True
