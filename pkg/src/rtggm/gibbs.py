"""Block-Gibbs sampling for single and stacked models.

Chains are vectorized: every function works on a batch of states, one row per
chain, drawing from a single ``numpy.random.Generator``.  A fixed seed
therefore reproduces the whole batch of chains exactly.
"""

from dataclasses import dataclass

import numpy as np

from .model import Kind, cond_hidden, cond_visible, doc_lengths
from .truncnorm import TruncNormParams, sample_trunc, trunc_mean


@dataclass
class ChainState:
    x: np.ndarray
    h: np.ndarray
    step_count: int = 0


@dataclass
class GeneratedSamples:
    """Emitted states, shape (n_samples, n_chains, n).

    ``means`` holds E[x | h] at each emitted step; for binary models these are
    the per-pixel probabilities.
    """

    samples: np.ndarray
    means: np.ndarray
    steps: int


def sample_hidden(model, X, rng):
    p = cond_hidden(model, X)
    if model.kind.truncated_hidden:
        return np.asarray(sample_trunc(p, rng))
    return p.xi + np.sqrt(p.lambda_sq) * rng.standard_normal(np.shape(p.xi))


def draw_visible(cond, rng, lengths=None):
    kind = cond.kind
    if kind is Kind.TRUNCATED_REAL:
        return np.asarray(sample_trunc(TruncNormParams(cond.loc, cond.var), rng))
    if kind is Kind.REAL:
        return cond.loc + np.sqrt(cond.var) * rng.standard_normal(cond.loc.shape)
    if kind is Kind.COUNT:
        return rng.multinomial(np.asarray(lengths, dtype=np.int64), cond.probs).astype(float)
    return (rng.random(cond.probs.shape) < cond.probs).astype(float)


def sample_visible(model, H, rng, lengths=None):
    """Draw x ~ p(x | h); count rows draw ``lengths`` words each."""
    return draw_visible(cond_visible(model, H), rng, lengths)


def gibbs_step(model, X, rng):
    """One sweep h ~ p(h | x), x' ~ p(x | h).  Returns (h, x')."""
    X = np.asarray(X, dtype=float)
    lengths = doc_lengths(X) if model.kind is Kind.COUNT else None
    H = sample_hidden(model, X, rng)
    return H, sample_visible(model, H, rng, lengths)


def run_chain(model, x0, k, rng):
    if k < 1:
        raise ValueError("k must be at least 1")
    x = np.asarray(x0, dtype=float)
    for _ in range(k):
        h, x = gibbs_step(model, x, rng)
    return ChainState(x=x, h=h, step_count=k)


def initial_state(model, n_chains, rng, doc_length=None):
    """Starting visible states for unconditional generation."""
    n = model.n
    kind = model.kind
    if kind.binary_visible:
        return (rng.random((n_chains, n)) < 0.5).astype(float)
    if kind is Kind.TRUNCATED_REAL:
        x0 = trunc_mean(TruncNormParams(model.b / model.a, 1.0 / model.a))
        return np.tile(x0, (n_chains, 1))
    if kind is Kind.REAL:
        return np.zeros((n_chains, n))
    if doc_length is None:
        raise ValueError("count generation needs a document length")
    return rng.multinomial(int(doc_length), np.full(n, 1.0 / n), size=n_chains).astype(float)


def generate(model, burn_in, n_samples, thin=1, rng=None, n_chains=1, doc_length=None):
    """Run ``burn_in`` steps, then emit every ``thin``-th state.

    Total steps are burn_in + (n_samples - 1) * thin; the first emitted state
    is the one reached after burn-in.
    """
    if burn_in < 0 or n_samples < 1 or thin < 1:
        raise ValueError("need burn_in >= 0, n_samples >= 1, thin >= 1")
    rng = np.random.default_rng() if rng is None else rng
    x = initial_state(model, n_chains, rng, doc_length)
    lengths = doc_lengths(x) if model.kind is Kind.COUNT else None

    def sweep(x):
        h = sample_hidden(model, x, rng)
        cond = cond_visible(model, h)
        return draw_visible(cond, rng, lengths), cond

    cond = None
    steps = 0
    for _ in range(burn_in):
        x, cond = sweep(x)
        steps += 1
    if cond is None:
        # no sweep yet: describe the initial state through one hidden draw
        cond = cond_visible(model, sample_hidden(model, x, rng))

    samples = np.empty((n_samples, n_chains, model.n))
    means = np.empty_like(samples)
    for i in range(n_samples):
        if i:
            for _ in range(thin):
                x, cond = sweep(x)
                steps += 1
        samples[i] = x
        means[i] = cond.mean(lengths)
    return GeneratedSamples(samples, means, steps)


def generate_deep(deep, burn_in, n_samples, thin=1, rng=None, n_chains=1, doc_length=None):
    """Gibbs-sample the top model, then pass samples down layer by layer.

    A one-layer stack is exactly ``generate`` on that layer.
    """
    rng = np.random.default_rng() if rng is None else rng
    layers = deep.layers
    if len(layers) == 1:
        return generate(layers[0], burn_in, n_samples, thin, rng, n_chains, doc_length)
    top = generate(layers[-1], burn_in, n_samples, thin, rng, n_chains)
    h = top.samples.reshape(-1, layers[-1].n)
    for layer in reversed(layers[1:-1]):
        h = sample_visible(layer, h, rng)
    bottom = layers[0]
    cond = cond_visible(bottom, h)
    lengths = None
    if bottom.kind is Kind.COUNT:
        if doc_length is None:
            raise ValueError("count generation needs a document length")
        lengths = np.full(h.shape[0], int(doc_length))
    x = draw_visible(cond, rng, lengths)
    shape = (n_samples, n_chains, bottom.n)
    return GeneratedSamples(x.reshape(shape), cond.mean(lengths).reshape(shape), top.steps)
