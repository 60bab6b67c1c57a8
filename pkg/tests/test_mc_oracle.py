import math

import numpy as np
import pytest

from macfn import mc_oracle as mo
from macfn.errors import OracleError, UsageError


def brute_force_2d(fn, bound, n=1000):
    """Plain 10^6-node midpoint grid over [-b, b]^2 without any product structure."""
    h = 2 * bound / n
    x = -bound + h * (np.arange(n) + 0.5)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return float(fn(X, Y).sum() * h * h)


def test_constant_flow_exact():
    flow = mo.AnalyticFlow("constant", 1, 1)
    for seed in range(5):
        for K in (1, 7, 1000):
            assert mo.mc_estimate(flow, [0.0], K, np.random.default_rng(seed)) == 2 * 1.5
    f2 = mo.AnalyticFlow("constant", 1, 2)
    assert mo.quadrature_integral(f2) == pytest.approx(4 * 1.5, rel=1e-12)


def test_two_agent_estimate_equals_product_function():
    flow = mo.AnalyticFlow("separable_product", 2, 1)
    state = np.array([[0.1], [-0.3]])
    a = np.random.default_rng(0).uniform(-1, 1, (50, 2, 1))
    est = mo.mc_estimate(flow, state, 50, None, actions=a)
    # the same samples as a single-agent integrand over the joint box
    prod = [flow.factor(0, state[0], a[k, 0]) * flow.factor(1, state[1], a[k, 1]) for k in range(50)]
    assert est == pytest.approx(flow.measure * np.mean(prod), rel=1e-13)


def test_gaussian_quadrature_matches_closed_form_and_brute_force():
    flow = mo.AnalyticFlow("gaussian_bump", 1, 2)
    q = mo.quadrature_integral(flow)
    assert q == pytest.approx(mo.gaussian_closed_form(flow), rel=1e-6)
    p = flow.params
    bf = brute_force_2d(lambda X, Y: p["floor"] + p["height"] * np.exp(
        -((X - p["center"]) ** 2 + (Y - p["center"]) ** 2) / (2 * p["width"] ** 2)), flow.bound)
    assert q == pytest.approx(bf, rel=1e-6)


def test_odd_integrand_cancels():
    flow = mo.AnalyticFlow("separable_product", 1, 1, params={"phases": [0.0]})
    # 1 + amp*sin(freq*a) at o=0: the odd part integrates to zero
    assert mo.quadrature_integral(flow) == pytest.approx(2.0, rel=1e-9)


def test_quadrature_errors():
    with pytest.raises(UsageError):
        mo.quadrature_integral(mo.AnalyticFlow("constant", 1, 1), nodes=8)
    sharp = mo.AnalyticFlow("gaussian_bump", 1, 1, params={"width": 0.02, "center": 0.1234})
    with pytest.raises(OracleError):
        mo.quadrature_integral(sharp, max_nodes=64)


@pytest.mark.parametrize("kind,n,d", [("gaussian_bump", 1, 2), ("gaussian_bump", 2, 1), ("separable_product", 2, 1),
                                      ("separable_product", 1, 2)])
def test_supplied_lipschitz_constant_is_valid(kind, n, d):
    flow = mo.AnalyticFlow(kind, n, d)
    rng = np.random.default_rng(0)
    s = np.zeros((n, d))
    x = rng.uniform(-1, 1, (20_000, n, d))
    y = x + rng.normal(scale=1e-3, size=x.shape)
    ratio = np.abs(flow(s, x) - flow(s, y)) / np.linalg.norm((x - y).reshape(len(x), -1), axis=-1)
    assert ratio.max() <= flow.lipschitz


def test_unbiasedness_small():
    flow = mo.AnalyticFlow("gaussian_bump", 1, 2)
    r = mo.unbiasedness_check(flow, 2000, 300, np.random.default_rng(0))
    assert r["passed"]


def test_concentration_constant_is_zero():
    r = mo.concentration_trial(mo.AnalyticFlow("constant", 2, 1), 100, 0.5, 500, np.random.default_rng(0))
    assert r["exceedance"] == 0.0 and r["passed"]


def test_exceedance_nonincreasing_in_k():
    flow = mo.AnalyticFlow("gaussian_bump", 1, 1)
    truth = mo.quadrature_integral(flow)
    # fixed absolute radius: larger K concentrates the estimator
    radius_at = lambda K: 0.05
    freqs = []
    for K in (100, 1000, 10_000):
        est = mo._mc_many(flow, np.zeros((1, 1)), K, 2000, np.random.default_rng(K))
        freqs.append(float(np.mean(np.abs(est - truth) >= radius_at(K))))
    assert freqs[0] >= freqs[1] >= freqs[2]
    # and with the theorem's shrinking radius, each stays below the bound
    for K in (100, 1000, 10_000):
        r = mo.concentration_trial(flow, K, 2.0, 2000, np.random.default_rng(K), truth=truth)
        assert r["passed"]


def test_strongly_understated_lipschitz_breaks_bound():
    flow = mo.AnalyticFlow("gaussian_bump", 1, 1)
    # at delta=1 the bound exceeds one and cannot fail, so use delta=3
    r = mo.concentration_trial(flow, 100, 3.0, 4000, np.random.default_rng(0), lipschitz_scale=0.05)
    assert not r["passed"]


def test_halved_lipschitz_still_within_bound():
    # the radius carries slack (std of a Lipschitz integrand is well below L*diam), so halving L
    # does not produce a violation for these flows
    flow = mo.AnalyticFlow("gaussian_bump", 1, 1)
    r = mo.concentration_trial(flow, 100, 3.0, 4000, np.random.default_rng(0), lipschitz_scale=0.5)
    assert r["passed"]


def test_inverse_degenerate_box_and_perturbation():
    flow = mo.AnalyticFlow("gaussian_bump", 1, 1, bound=0.0)
    assert mo.inflow_estimate_with_inverse(flow, [0.0], 10, np.random.default_rng(0)) == 0.0
    g = mo.AnalyticFlow("gaussian_bump", 1, 1)
    r = mo.perturbation_check(g, 100, 0.01, 1000, np.random.default_rng(1))
    assert r["passed"] and r["max_added_error"] > 0
    r2 = mo.inverse_concentration_trial(g, 100, 2.0, 2000, np.random.default_rng(2))
    assert r2["passed"]


def test_run_suite_rows_and_bound_column():
    rows = mo.run_suite("concentration", np.random.default_rng(0), n_trials=500, ks=(100,), ns=(1,))
    assert [r["delta"] for r in rows] == [1.0, 2.0, 3.0]
    for r in rows:
        assert r["bound"] == pytest.approx(2 * math.exp(-r["delta"] ** 2 / 2))
    with pytest.raises(UsageError):
        mo.run_suite("nope", np.random.default_rng(0))
