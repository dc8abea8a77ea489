import math

import numpy as np
import pytest

from gevrey_renorm import mcf
from gevrey_renorm.errors import (NeumannDivergence, NotRenormalizable, NoConvergence,
                                  PreconditionViolated)
from gevrey_renorm.fourier import (FourierField, GevreyParams, c_nu_minus_one, norm_F,
                                   norm_Fprime, project, pushforward_linear)
from gevrey_renorm.lattice import l1_ball, opnorm1
from gevrey_renorm.renorm import (RenormParams, eliminate, epsilon_threshold, homotopy_path,
                                  prepare_schedule, pullback, run, schedule_report,
                                  synthetic_field)
from gevrey_renorm.conjugacy import flow, sample_points

GOLD = mcf.Frequency.preset("golden")

# epsilon at sigma=0.1, nu=0.3, |w|_1=|(gamma,1)|_1, s=2, d=2.  Frozen from a
# 30-digit mpmath evaluation with C_nu - 1 summed shell by shell to |k|_1 < 40000.
EPS_SNAPSHOT = 5.3450599425970717791e-14
CNU_M1_SNAPSHOT = 5925.6230324209318483


@pytest.fixture(scope="module")
def golden():
    exp = mcf.expansion(GOLD, n_max=12)
    steps = mcf.matrix_sequence(GOLD, mcf.stopping_times(exp, 8), exp)
    sigma = mcf.sigma_schedule(steps, 0, mcf.standins(steps)["C1"])
    return exp, steps, sigma, np.asarray(steps[0].omega_n, dtype=float)


@pytest.fixture(scope="module")
def gp16():
    return GevreyParams.with_defaults(2, 1.0, 16)


def far_cos(w, k, v, amp, K=16):
    """w + amp*cos(k.x)*v, i.e. coefficient amp*v/2 at +-k."""
    c = 0.5 * amp * np.asarray(v)
    return FourierField.from_dict(2, K, {k: c, tuple(-np.array(k)): c}) + w


# ------------------------------------------------------------- epsilon

def test_epsilon_snapshot():
    wn = float(np.abs(GOLD.omega.astype(float)).sum())
    assert c_nu_minus_one(2, 0.3, 2) == pytest.approx(CNU_M1_SNAPSHOT, rel=1e-13)
    assert epsilon_threshold(0.1, 0.3, wn, 2, 2) == pytest.approx(EPS_SNAPSHOT, rel=1e-12)


@pytest.mark.parametrize("s", [1.0, 2.0])
def test_epsilon_superlinear_in_sigma(s):
    for sigma in (1e-4, 1e-2, 0.3):
        e1 = epsilon_threshold(sigma, 0.3, 1.618, s, 2)
        e2 = epsilon_threshold(2 * sigma, 0.3, 1.618, s, 2)
        assert e2 >= 2 * e1
    assert epsilon_threshold(1e-12, 0.3, 1.618, s, 2) < 1e-20


def test_epsilon_domain():
    with pytest.raises(ValueError):
        epsilon_threshold(2.0, 0.3, 1.618, 2, 2)


# --------------------------------------------------------- elimination

def test_constant_field_needs_no_elimination(golden, gp16):
    _, _, sigma, w = golden
    X = FourierField.constant(w, 16)
    r = eliminate(X, w, sigma, RenormParams(gp16))
    assert r.iters == 0 and len(r.u) == 0
    assert np.array_equal(r.Y.coeffs, X.coeffs)


def test_first_newton_iterate_is_linear_solve(golden, gp16):
    _, _, sigma, w = golden
    k, v, amp = (1, 1), np.array([0.5, 0.3]), 1e-3
    X = far_cos(w, k, v, amp)
    r = eliminate(X, w, sigma, RenormParams(gp16, newton_tol=1e-5))
    assert r.iters == 1
    lin = amp * v / (2j * np.dot(k, w))
    assert np.abs(r.u.coeff(k) - lin).max() <= 1e-2 * np.abs(lin).max()


def test_newton_converges_quadratically(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (1, 1), [0.5, 0.3], 2e-3)
    r = eliminate(X, w, sigma, RenormParams(gp16))
    assert r.iters <= 6 and r.far_residual < 1e-12
    h = r.history
    ratios = [h[i + 1] / h[i] ** 2 for i in range(len(h) - 1) if h[i + 1] > 1e-14]
    assert ratios and max(ratios) < 1.0
    far = project(r.Y, "far", sigma, w)
    assert len(far) == 0 or np.abs(far.coeffs).max() <= 1e-12


def test_chord_mode_converges_linearly(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (1, 1), [0.5, 0.3], 2e-3)
    newton = eliminate(X, w, sigma, RenormParams(gp16))
    chord = eliminate(X, w, sigma, RenormParams(gp16, mode="chord"))
    assert chord.far_residual < 1e-12
    assert chord.iters > newton.iters
    assert norm_F(chord.u - newton.u, 1, 0.0) < 1e-12


def test_homotopy_mode_agrees(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (0, 1), [0.2, -0.4], 1e-3)
    a = eliminate(X, w, sigma, RenormParams(gp16))
    b = eliminate(X, w, sigma, RenormParams(gp16, mode="homotopy"))
    assert b.iters <= 2
    assert norm_F(a.u - b.u, 1, 0.0) < 1e-12


def test_homotopy_midpoint(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (1, 0), [0.3, 0.1], 1e-3)
    _, G_half, G0 = homotopy_path(X, w, sigma, RenormParams(gp16))
    assert norm_Fprime(G_half - G0.scale(0.5), 1, 0.0) < 1e-8


def test_large_perturbation_diverges(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (1, 0), [1.0, 1.0], 0.5)
    with pytest.raises((NeumannDivergence, NoConvergence)):
        eliminate(X, w, sigma, RenormParams(gp16))


def test_precondition_above_eps(golden, gp16):
    _, _, sigma, w = golden
    X = far_cos(w, (1, 0), [1.0, 1.0], 1e-6)
    with pytest.raises(PreconditionViolated) as err:
        eliminate(X, w, sigma, RenormParams(gp16), eps=1e-9)
    assert err.value.step == 0
    # non-strict mode runs anyway
    eliminate(X, w, sigma, RenormParams(gp16, strict=False), eps=1e-9)


def test_u_bound_at_ten_percent_of_eps(golden):
    _, steps, sigma, w = golden
    gp = GevreyParams(1.0, 2.0, 0.2, 0.1, 16)
    eps = epsilon_threshold(sigma, gp.nu, float(np.abs(w).sum()), gp.s, 2)
    rng = np.random.default_rng(0)
    ball = l1_ball(16, 2)
    c = (rng.normal(size=(len(ball), 2)) + 1j * rng.normal(size=(len(ball), 2)))
    f = FourierField(2, 16, ball, c * np.exp(-3 * np.abs(ball).sum(1))[:, None])
    f = f.scale(0.1 * eps / norm_Fprime(f, gp.s, gp.rho))
    r = eliminate(f + w, w, sigma, RenormParams(gp), eps=eps)
    assert r.u_norm_bound_ok and r.y_bound_ok


def test_one_iteration_inequality(golden):
    """||(I-E) R(X)||'_{rho'} against the explicit one-step bound with phi = 1.

    s = 2 keeps the weights e^{rho'|k|^{1/2}} moderate on the ball, so the
    FFT roundoff floor in high modes does not swamp the weighted norm.
    """
    exp, steps, sigma, w = golden
    gp = GevreyParams.with_defaults(2.0, 1.0, 16)
    s, rho, nu, delta, b = gp.s, gp.rho, gp.nu, gp.delta_margin, gp.beta
    params = RenormParams(gp, phi_rule="one", strict=False)
    sd = prepare_schedule(GOLD, params, 2, exp)
    A = sd.A[0]
    rng = np.random.default_rng(1)
    ball = l1_ball(16, 2)
    c = (rng.normal(size=(len(ball), 2)) + 1j * rng.normal(size=(len(ball), 2)))
    f = FourierField(2, 16, ball, c * np.exp(-3 * np.abs(ball).sum(1) ** 0.5)[:, None])
    f = f.scale(0.1 * sd.eps[0] / norm_Fprime(f, s, rho))
    el = eliminate(f + w, w, sigma, params)
    st = steps[1]
    X1 = pushforward_linear(el.Y, st.T, st.eta)
    rho_p = (rho - nu * (1 + b + b * b)) / (b * b * A ** (1 / s)) - delta
    assert rho_p > 0
    lhs = norm_Fprime(project(X1, "non_mean"), s, rho_p)
    cm1 = c_nu_minus_one(s, nu, 2)
    quad = 2 ** 9 * np.abs(w).sum() * cm1 * (2 * cm1 + 1) / sigma ** 2 * norm_Fprime(f, s, rho) ** 2
    res = norm_F(project(f, "resonant", sigma, w), s, rho)
    rhs = abs(st.eta) * opnorm1(st.T) * (1 + s ** s / delta ** s) * (res + quad)
    assert lhs <= rhs


def test_mean_commutes_with_rescale():
    rng = np.random.default_rng(2)
    ball = l1_ball(4, 2)
    f = FourierField(2, 4, ball, rng.normal(size=(len(ball), 2)) + 0j)
    T = np.array([[-1, 1], [-2, 1]])
    out = pushforward_linear(f, T, 2.3, K=20)
    assert np.allclose(out.mean(), 2.3 * T @ f.mean(), rtol=1e-15, atol=0)


# ------------------------------------------------------------- pullback

def test_pullback_identity_and_first_order(golden):
    _, _, _, w = golden
    X = FourierField.constant(w, 8)
    assert pullback(X, FourierField.zeros(2, 8)) is X
    u = FourierField.from_dict(2, 8, {(1, 0): [1e-5, 2e-5]})
    Y = pullback(X, u)
    # (I+Du)^{-1} w = w - Du w + O(u^2): mode (1,0) gets -i(k.w) u_k
    expect = -1j * w[0] * u.coeff((1, 0))
    assert np.abs(Y.coeff((1, 0)) - expect).max() < 1e-9


def test_pullback_conjugates_flows(golden):
    _, _, _, w = golden
    X, _ = synthetic_field(w, 1e-2, 12, seed=3)
    u = FourierField.from_dict(2, 12, {(1, 0): [0.01, 0.02], (1, -1): [0.005j, -0.01], (0, 1): [0.0, 0.01]})
    Y = pullback(X, u)
    x = sample_points(64, 2)
    U = lambda p: p + u.evaluate(p)
    lhs = U(flow(Y, x, 0.1))
    rhs = flow(X, U(x), 0.1)
    assert np.abs(lhs - rhs).max() < 1e-8


# -------------------------------------------------------------- driver

def test_constant_field_stays_constant(gp16):
    params = RenormParams(gp16, strict=False)
    X0 = FourierField.constant(GOLD.omega.astype(float), 16)
    states, elims, sd = run(X0, GOLD, params, 4)
    for st in states:
        assert st.residual < 1e-12 * np.abs(st.omega_n).sum()
        assert np.allclose(st.X.mean(), st.omega_n, rtol=1e-12)


def test_strict_run_stops_at_step_zero(gp16):
    w = GOLD.omega.astype(float)
    X0, _ = synthetic_field(w, 1e-4, 16)
    with pytest.raises(PreconditionViolated) as err:
        run(X0, GOLD, RenormParams(gp16), 2)
    assert err.value.step == 0


def test_strict_run_stops_when_rho_turns_negative(gp16):
    X0 = FourierField.constant(GOLD.omega.astype(float), 16)
    with pytest.raises(NotRenormalizable) as err:
        run(X0, GOLD, RenormParams(gp16), 3)
    assert err.value.step == 1


@pytest.mark.parametrize("s", [1.0, 2.0])
def test_schedule_report_monotone(s):
    gp = GevreyParams.with_defaults(s, 1.0, 16)
    rows = schedule_report(GOLD, RenormParams(gp), 5)
    Bs = [r["B_script"] for r in rows]
    assert all(b >= a for a, b in zip(Bs, Bs[1:]))
    assert all(r["A"] <= r["A_formula"] for r in rows[1:])
    assert all(r["sigma"] > 0 and r["eps"] > 0 for r in rows)


def test_forecast_grows_above_b_limit():
    # s = 1: beta = 1; the recursion rho_n = (rho_0 - B_n)/prod a_j grows once rho_0 exceeds B_n
    gp = GevreyParams.with_defaults(1.0, 1.0, 16)
    rows = schedule_report(GOLD, RenormParams(gp), 5)
    B5 = rows[-1]["B_script"]
    gp_big = GevreyParams(1.0, 4 * B5, gp.nu, gp.delta_margin, 16)
    rho = [r["rho"] for r in schedule_report(GOLD, RenormParams(gp_big), 5)]
    assert all(r > 0 for r in rho)
    assert rho[-1] > rho[0]
