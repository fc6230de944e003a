import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covadj.inference.fit import ParameterDraws
from covadj.marginalize import marginal_dm, marginal_hr, marginal_rr, marginalize
from covadj.splines import SplineBasis, i_spline_eval

NAMES = ("x1", "x2")


def make_draws(endpoint, terms, coef, psi=None, basis=None):
    """Wrap fixed coefficient rows ``(S, 1 + len(terms))`` as one chain of draws."""
    coef = np.atleast_2d(np.asarray(coef, dtype=float))
    design_terms = ("A", *terms)
    names = ["(Intercept)", *design_terms]
    cols = [coef]
    if endpoint == "continuous":
        names.append("sigma")
        cols.append(np.ones((coef.shape[0], 1)))
    if endpoint == "tte":
        names += [f"psi[{k + 1}]" for k in range(psi.shape[1])]
        cols.append(psi)
    values = np.hstack(cols)[None]
    return ParameterDraws(tuple(names), values, design_terms, endpoint, "m", basis)


def _rows(rng, n):
    return np.column_stack([rng.integers(0, 2, n), rng.normal(size=n)]).astype(float)


def _eta(coef, terms, a, x):
    """Linear predictor of one row, written out term by term."""
    val = coef[0] + coef[1] * a
    env = dict(zip(NAMES, x))
    for c, t in zip(coef[2:], terms):
        if t.startswith("A:"):
            val += c * a * env[t[2:]]
        elif t.endswith("^2"):
            val += c * env[t[:-2]] ** 2
        else:
            val += c * env[t]
    return val


# --- difference in means ----------------------------------------------------

def test_dm_collapsible_equals_phi(rng):
    coef = rng.normal(size=(50, 3))
    d = make_draws("continuous", ("x1", "x2"), coef)
    mp = marginal_dm(d, _rows(rng, 7), NAMES)
    assert np.array_equal(mp.draws, coef[:, 1])
    assert mp.estimand == "DM"


def test_dm_interaction_hand_arithmetic():
    d = make_draws("continuous", ("x1", "A:x1"), [[1.0, 0.5, 1.0, 1.0]])
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert marginal_dm(d, X, NAMES).draws[0] == pytest.approx(1.5, abs=1e-12)


def test_dm_interaction_brute_force(rng):
    terms = ("x1", "x2", "A:x2")
    coef = rng.normal(size=(3, 5))
    X = _rows(rng, 5)
    got = marginal_dm(make_draws("continuous", terms, coef), X, NAMES).draws
    for s in range(3):
        want = sum(_eta(coef[s], terms, 1, x) - _eta(coef[s], terms, 0, x) for x in X) / 5
        assert got[s] == pytest.approx(want, abs=1e-12)


# --- relative risk -----------------------------------------------------------

def _expit(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_rr_intercept_only_closed_form():
    d = make_draws("binary", (), [[0.0, -1.0]])
    rr = marginal_rr(d, np.zeros((4, 2)), NAMES).draws[0]
    assert rr == pytest.approx(_expit(-1.0) / 0.5, abs=1e-14)
    assert rr == pytest.approx(0.53788, abs=1e-5)


def test_rr_null_is_exactly_one(rng):
    coef = rng.normal(size=(20, 4))
    coef[:, 1] = 0.0
    rr = marginal_rr(make_draws("binary", ("x1", "x2^2"), coef), _rows(rng, 9), NAMES).draws
    assert np.all(rr == 1.0)


def test_rr_brute_force(rng):
    terms = ("x1", "x2")
    coef = rng.normal(size=(3, 4))
    X = _rows(rng, 5)
    got = marginal_rr(make_draws("binary", terms, coef), X, NAMES).draws
    for s in range(3):
        p1 = sum(_expit(_eta(coef[s], terms, 1, x)) for x in X) / 5
        p0 = sum(_expit(_eta(coef[s], terms, 0, x)) for x in X) / 5
        assert got[s] == pytest.approx(p1 / p0, abs=1e-12)


def test_rr_vanishing_control_risk_excluded():
    d = make_draws("binary", (), [[0.0, -1.0], [-40.0, 1.0], [0.5, 0.2]])
    mp = marginal_rr(d, np.zeros((3, 2)), NAMES)
    assert mp.n_excluded == 1 and np.isnan(mp.draws[1])
    assert mp.unreliable and mp.finite.size == 2


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 3.0))
def test_rr_monotone_in_treated_linear_predictor(seed, delta):
    g = np.random.default_rng(seed)
    coef = g.normal(size=(10, 4))
    X = _rows(g, 8)
    base = marginal_rr(make_draws("binary", ("x1", "x2"), coef), X, NAMES).draws
    bumped = coef.copy()
    bumped[:, 1] += delta  # raises eta(A=1, x) by delta for every row
    up = marginal_rr(make_draws("binary", ("x1", "x2"), bumped), X, NAMES).draws
    assert np.all(up > base)


# --- hazard ratio -------------------------------------------------------------

BASIS = SplineBasis(3, (10.0, 25.0), (0.0, 40.0))


def _psi(rng, s):
    return rng.dirichlet(np.ones(BASIS.L), size=s)


def test_hr_unadjusted_equals_exp_phi(rng):
    coef = rng.normal(-3.0, 0.3, size=(40, 2))
    d = make_draws("tte", (), coef, _psi(rng, 40), BASIS)
    hr = marginal_hr(d, _rows(rng, 12), NAMES, 30.0).draws
    assert np.allclose(hr, np.exp(coef[:, 1]), rtol=1e-10)


def test_hr_null_is_one(rng):
    coef = rng.normal(-3.0, 0.3, size=(40, 5))
    coef[:, 1] = 0.0
    d = make_draws("tte", ("x1", "x2", "x2^2"), coef, _psi(rng, 40), BASIS)
    assert np.allclose(marginal_hr(d, _rows(rng, 12), NAMES, 30.0).draws, 1.0, atol=1e-12)


def test_hr_brute_force(rng):
    terms = ("x1", "x2")
    coef = np.column_stack([rng.normal(-2.0, 0.3, 3), rng.normal(-0.5, 0.3, 3),
                            rng.normal(size=(3, 2))])
    psi = _psi(rng, 3)
    X = _rows(rng, 10)
    t = 33.0
    got = marginal_hr(make_draws("tte", terms, coef, psi, BASIS), X, NAMES, t).draws
    I_t = i_spline_eval(BASIS, t)[0]
    for s in range(3):
        H0 = float(I_t @ psi[s])
        S = [sum(math.exp(-H0 * math.exp(_eta(coef[s], terms, a, x))) for x in X) / 10
             for a in (0, 1)]
        want = math.log(-math.log(S[1])) - math.log(-math.log(S[0]))
        assert got[s] == pytest.approx(math.exp(want), rel=1e-10, abs=1e-10)


def test_hr_degenerate_survival_excluded(rng):
    coef = np.array([[-2.0, -0.3], [60.0, 0.1]])  # second draw: everyone has the event
    d = make_draws("tte", (), coef, _psi(rng, 2), BASIS)
    mp = marginal_hr(d, np.zeros((5, 2)), NAMES, 30.0)
    assert mp.n_excluded == 1 and mp.eval_time == 30.0


# --- symmetry and dispatch ------------------------------------------------------

def test_counterfactual_swap(rng):
    X = _rows(rng, 9)
    coef = rng.normal(-1.0, 0.5, size=(30, 5))
    terms = ("x1", "x2", "A:x2")
    dm = make_draws("continuous", terms, coef)
    assert np.allclose(marginal_dm(dm, X, NAMES, arms=(0, 1)).draws,
                       -marginal_dm(dm, X, NAMES).draws, atol=1e-14)
    rr = make_draws("binary", terms, coef)
    fwd = marginal_rr(rr, X, NAMES).draws
    rev = marginal_rr(rr, X, NAMES, arms=(0, 1)).draws
    assert np.allclose(fwd * rev, 1.0, rtol=1e-14)
    hr = make_draws("tte", terms, coef, _psi(rng, 30), BASIS)
    fwd = marginal_hr(hr, X, NAMES, 20.0).draws
    rev = marginal_hr(hr, X, NAMES, 20.0, arms=(0, 1)).draws
    assert np.allclose(fwd * rev, 1.0, rtol=1e-14)


def test_dispatch_by_endpoint(rng):
    X = _rows(rng, 4)
    assert marginalize(make_draws("continuous", (), [[0, 1]]), X, NAMES).estimand == "DM"
    assert marginalize(make_draws("binary", (), [[0, 1]]), X, NAMES).estimand == "RR"
    tte = make_draws("tte", (), [[0, 1]], _psi(rng, 1), BASIS)
    assert marginalize(tte, X, NAMES, t=10.0).estimand == "HR"
    with pytest.raises(ValueError):
        marginalize(tte, X, NAMES)
