import numpy as np
import pytest
from scipy import integrate
from scipy.special import logsumexp

from oracles import enumerate_binary
from rtggm.ais import (
    AISConfig,
    BaseRateModel,
    ais_per_length,
    ais_run,
    fit_base_rate,
    intermediate_log_p_star,
    log_z_base,
    perplexity,
    test_log_prob as log_prob,
)
from rtggm.model import Kind, ModelParams, count_states, exact_log_partition, init_model, log_p_star
from rtggm.truncnorm import std_normal_log_cdf


def binary(n, m, seed, W_std=0.5, kind=Kind.BINARY):
    rng = np.random.default_rng(seed)
    return ModelParams(W=rng.normal(0, W_std, (n, m)), a=np.zeros(n), d=rng.uniform(1, 2, m),
                       b=rng.normal(0, 0.5, n), c=rng.normal(0, 0.5, m), kind=kind)


def test_fit_base_rate_binary():
    base = fit_base_rate(np.zeros((10, 3)), smoothing=0.01)
    np.testing.assert_allclose(base.b_A, np.log(0.01 / 1.01))
    assert base.b_A[0] == pytest.approx(-4.6151, abs=1e-4)
    half = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
    np.testing.assert_allclose(fit_base_rate(half, smoothing=0.0).b_A, 0.0, atol=1e-15)


def test_fit_base_rate_count():
    X = np.array([[2, 2, 2], [1, 1, 1]], dtype=float)
    b = fit_base_rate(X, kind=Kind.COUNT).b_A
    assert np.ptp(b) == 0.0
    with pytest.raises(ValueError):
        fit_base_rate(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        fit_base_rate(np.ones((2, 3)), kind=Kind.REAL)


def test_log_z_base_examples():
    model = ModelParams(W=np.zeros((2, 1)), a=np.zeros(2), d=[1.0], b=np.zeros(2), c=[0.0], kind=Kind.BINARY)
    base = BaseRateModel(np.zeros(2))
    assert log_z_base(base, model) == pytest.approx(2 * np.log(2) + 0.2257913526, abs=1e-10)
    model4 = model.copy(d=np.array([4.0]))
    assert log_z_base(base, model4) - 2 * np.log(2) == pytest.approx(-0.5 * np.log(4) + 0.2257913526, abs=1e-10)
    assert log_z_base(base, model4) - 2 * np.log(2) == pytest.approx(-0.4673, abs=1e-4)


def test_log_z_base_equals_enumeration():
    model = binary(5, 2, 0)
    base = BaseRateModel(np.random.default_rng(1).normal(size=5))
    decoupled = model.copy(W=np.zeros((5, 2)), b=base.b_A, c=np.zeros(2))
    assert log_z_base(base, model) == pytest.approx(exact_log_partition(decoupled), rel=1e-12)
    count = init_model(3, 2, Kind.COUNT, seed=0)
    cbase = BaseRateModel(np.array([0.1, -0.3, 0.7]))
    decoupled = count.copy(W=np.zeros((3, 2)), b=cbase.b_A, c=np.zeros(2))
    assert log_z_base(cbase, count, 3) == pytest.approx(exact_log_partition(decoupled, 3), rel=1e-12)
    with pytest.raises(ValueError):
        log_z_base(cbase, count)


def test_intermediate_endpoints():
    model = binary(4, 2, 3)
    base = BaseRateModel(np.linspace(-1, 1, 4))
    X = enumerate_binary(4)
    np.testing.assert_allclose(intermediate_log_p_star(model, base, X, 1.0), log_p_star(model, X), rtol=1e-14)
    decoupled = model.copy(W=np.zeros((4, 2)), b=base.b_A, c=np.zeros(2))
    np.testing.assert_allclose(intermediate_log_p_star(model, base, X, 0.0), log_p_star(decoupled, X), rtol=1e-14)
    assert np.ndim(intermediate_log_p_star(model, base, X[3], 0.3)) == 0
    with pytest.raises(ValueError):
        intermediate_log_p_star(model, base, X, 1.5)


@pytest.mark.parametrize("kind", [Kind.BINARY, Kind.RGGM_BINARY])
def test_intermediate_matches_quadrature(kind):
    model = binary(3, 1, 4, kind=kind)
    base = BaseRateModel(np.array([0.2, -0.4, 0.9]))
    x = np.array([1.0, 0.0, 1.0])
    d, (w,), (c,) = model.d[0], model.W.T, model.c
    lo = -np.inf if kind is Kind.RGGM_BINARY else 0.0

    def f(hb, ha):
        e_a = 0.5 * d * ha * ha - base.b_A @ x
        e_b = 0.5 * d * hb * hb - (x @ w + c) * hb - model.b @ x
        return np.exp(-0.5 * e_a - 0.5 * e_b)

    val = integrate.dblquad(f, lo, np.inf, lo, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert intermediate_log_p_star(model, base, x, 0.5) == pytest.approx(np.log(val), rel=1e-8)


def test_ais_identical_models():
    base = BaseRateModel(np.array([0.3, -0.2, 0.5]))
    model = ModelParams(W=np.zeros((3, 2)), a=np.zeros(3), d=[1.0, 2.0], b=base.b_A, c=np.zeros(2),
                        kind=Kind.BINARY)
    res = ais_run(model, base, AISConfig(n_temps=50, n_chains=20))
    np.testing.assert_allclose(res.log_weights, 0.0, atol=1e-12)
    assert res.log_z == pytest.approx(log_z_base(base, model), abs=1e-12)
    assert res.log_z_stderr == pytest.approx(0.0, abs=1e-10)


def test_ais_zero_coupling_closed_form():
    model = ModelParams(W=np.zeros((4, 2)), a=np.zeros(4), d=[1.0, 2.5], b=[0.5, -1.0, 0.0, 2.0], c=[1.0, -0.7],
                        kind=Kind.BINARY)
    base = BaseRateModel(np.zeros(4))
    res = ais_run(model, base, AISConfig(n_temps=500, n_chains=100, seed=2))
    s = model.c / np.sqrt(model.d)
    closed = np.sum(np.logaddexp(0, model.b)) + np.sum(
        -0.5 * np.log(model.d) + std_normal_log_cdf(s) + 0.5 * np.log(2 * np.pi) + 0.5 * s * s)
    assert abs(res.log_z - closed) <= max(3 * res.log_z_stderr, 1e-9)


@pytest.mark.parametrize("kind", [Kind.BINARY, Kind.RGGM_BINARY])
def test_ais_tiny_model(kind):
    model = binary(6, 2, 7, W_std=0.6, kind=kind)
    data = (np.random.default_rng(0).random((50, 6)) < 0.4).astype(float)
    base = fit_base_rate(data)
    res = ais_run(model, base, AISConfig(n_temps=2000, n_chains=100, seed=1))
    assert abs(res.log_z - exact_log_partition(model)) < 0.1
    assert res.log_weights.shape == (100,)
    assert res.log_z_stderr > 0


def test_ais_count_model():
    rng = np.random.default_rng(3)
    model = ModelParams(W=rng.normal(0, 0.5, (3, 2)), a=np.zeros(3), d=[1.0, 1.5], b=rng.normal(0, 0.5, 3),
                        c=rng.normal(0, 0.3, 2), kind=Kind.COUNT)
    base = BaseRateModel(np.zeros(3))
    est = ais_per_length(model, base, AISConfig(n_temps=2000, n_chains=100, seed=0), [2, 3, 2])
    assert sorted(est) == [2, 3]
    for K, res in est.items():
        assert abs(res.log_z - exact_log_partition(model, K)) < 0.1
    with pytest.raises(ValueError):
        ais_run(model, base, AISConfig(n_temps=10, n_chains=2))


def test_ais_rejects_real_kinds():
    with pytest.raises(ValueError):
        ais_run(init_model(3, 2, Kind.REAL), BaseRateModel(np.zeros(3)), AISConfig(n_temps=10))


def test_ais_config_validation():
    with pytest.raises(ValueError):
        AISConfig(n_temps=1)
    with pytest.raises(ValueError):
        AISConfig(n_chains=0)
    with pytest.raises(ValueError):
        AISConfig(schedule="geometric")
    np.testing.assert_array_equal(AISConfig(n_temps=3).betas(), [0, 0.5, 1])


def test_ais_reproducible():
    model = binary(4, 2, 1)
    base = BaseRateModel(np.zeros(4))
    a = ais_run(model, base, AISConfig(n_temps=100, n_chains=10, seed=4))
    b = ais_run(model, base, AISConfig(n_temps=100, n_chains=10, seed=4))
    np.testing.assert_array_equal(a.log_weights, b.log_weights)


def test_log_prob_normalizes():
    model = binary(5, 3, 2)
    X = enumerate_binary(5)
    lp, mean = log_prob(model, exact_log_partition(model), X)
    assert np.exp(logsumexp(lp)) == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(lp.mean())
    with pytest.raises(ValueError):
        log_prob(model, np.inf, X)


def test_log_prob_uniform():
    model = ModelParams(W=np.zeros((4, 2)), a=np.zeros(4), d=np.ones(2), b=np.zeros(4), c=np.zeros(2),
                        kind=Kind.BINARY)
    lp, _ = log_prob(model, exact_log_partition(model), enumerate_binary(4))
    np.testing.assert_allclose(lp, -4 * np.log(2), rtol=1e-13)


def test_perplexity_uniform_words():
    model = ModelParams(W=np.zeros((5, 2)), a=np.zeros(5), d=np.ones(2), b=np.zeros(5), c=np.zeros(2),
                        kind=Kind.COUNT)
    X = np.array([[1, 0, 2, 0, 0], [0, 1, 0, 0, 3]], dtype=float)
    log_z = {K: exact_log_partition(model, K) for K in (3, 4)}
    assert perplexity(model, log_z, X) == pytest.approx(5.0, rel=1e-12)
    with pytest.raises(ValueError, match="4"):
        perplexity(model, {3: log_z[3]}, X)


def test_perplexity_single_document():
    rng = np.random.default_rng(8)
    model = ModelParams(W=rng.normal(size=(2, 1)), a=np.zeros(2), d=[1.0], b=rng.normal(size=2), c=[0.3],
                        kind=Kind.COUNT)
    X, log_mult = count_states(2, 2)
    log_z = float(logsumexp(log_p_star(model, X) + log_mult))
    doc = np.array([[1.0, 1.0]])
    expected = np.exp(-(log_p_star(model, doc)[0] - log_z) / 2)
    assert perplexity(model, {2: log_z}, doc) == pytest.approx(expected, rel=1e-12)
