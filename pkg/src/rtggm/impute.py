"""Filling in unobserved visible units by Gibbs sampling the induced model.

Fixing the observed units x_o of a model leaves another model of the same
kind over (x_u, h): the rows of W, a, b belonging to x_u survive and the
hidden bias absorbs the observed part, c~ = c + W_o^T x_o.
"""

import numpy as np

from .gibbs import draw_visible, sample_hidden
from .model import DomainError, Kind, check_visible, cond_visible, ModelParams


def _mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask has shape {mask.shape}, model has {n} visible units")
    if mask.all() or not mask.any():
        raise ValueError("mask must mark at least one observed and one unobserved unit")
    return mask


def conditional_model(model, x_o, mask):
    """Model over the unobserved units given ``x_o`` at the observed positions."""
    if model.kind is Kind.COUNT:
        raise ValueError("imputation is not supported for count models")
    observed = _mask(mask, model.n)
    x_o = np.asarray(x_o, dtype=float)
    if x_o.shape != (observed.sum(),):
        raise ValueError(f"expected {observed.sum()} observed values, got {x_o.shape}")
    probe = np.zeros(model.n)
    probe[observed] = x_o
    try:
        check_visible(model, probe)
    except DomainError as err:
        raise DomainError(f"observed values: {err}") from None
    free = ~observed
    return ModelParams(
        W=model.W[free],
        a=model.a[free],
        d=model.d.copy(),
        b=model.b[free],
        c=model.c + x_o @ model.W[observed],
        kind=model.kind,
        d_learnable=model.d_learnable,
    )


def impute(model, x_o, mask, burn_in=1000, n_samples=1000, rng=None, n_chains=1):
    """Estimate E[x_u | x_o].

    Averages E[x_u | h] over the retained hidden draws of ``n_chains``
    parallel chains rather than averaging raw x_u samples.
    """
    if n_samples < 1 or burn_in < 0:
        raise ValueError("need n_samples >= 1 and burn_in >= 0")
    rng = np.random.default_rng() if rng is None else rng
    sub = conditional_model(model, x_o, mask)
    if sub.kind.binary_visible:
        x = (rng.random((n_chains, sub.n)) < 0.5).astype(float)
    else:
        x = np.zeros((n_chains, sub.n))
    total = np.zeros(sub.n)
    for step in range(burn_in + n_samples):
        h = sample_hidden(sub, x, rng)
        cond = cond_visible(sub, h)
        if step >= burn_in:
            total += cond.mean().sum(axis=0)
        x = draw_visible(cond, rng)
    return total / (n_samples * n_chains)


def fill(x, mask, estimate):
    """Full visible vector with observed entries kept and the rest estimated."""
    out = np.array(x, dtype=float)
    out[~np.asarray(mask, dtype=bool)] = estimate
    return out
