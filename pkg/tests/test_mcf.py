import math
import time

import mpmath
import numpy as np
import pytest

from gevrey_renorm import mcf
from gevrey_renorm.errors import ExactResonance, ScheduleInfeasible
from gevrey_renorm.lattice import int_inverse, opnorm1

GOLD = mcf.Frequency.preset("golden")
FIB = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]


def slow_best(alpha, q):
    """Plain-loop exhaustive search in 40-digit arithmetic, d=2 only."""
    mpmath.mp.dps = 40
    a = mpmath.mpf(alpha)
    best = None
    for k1 in (q, -q):
        kd = int(mpmath.nint(-k1 * a))
        for c in (kd - 1, kd, kd + 1):
            div = abs(k1 * a + c)
            if best is None or div < best[0]:
                best = (div, (k1, c))
    return best


@pytest.fixture(scope="module")
def golden_exp():
    return mcf.expansion(GOLD, n_max=16)


def test_frequency_parse_and_preset():
    f = mcf.Frequency.parse("0.5")
    assert f.d == 2 and float(f.omega[-1]) == 1.0
    assert mcf.Frequency.parse("golden") == GOLD
    with pytest.raises(ValueError):
        mcf.Frequency((0.3,), mu=0.0)


def test_best_approx_examples():
    b1 = mcf.best_approx(GOLD, 1)
    assert tuple(b1.p) == (1, -1)
    assert b1.divisor == pytest.approx(0.3819660113, abs=1e-10)
    b2 = mcf.best_approx(GOLD, 2)
    assert tuple(b2.p) == (2, -1)
    assert b2.divisor == pytest.approx(0.2360679775, abs=1e-10)


def test_best_approx_rational():
    with pytest.raises(ExactResonance) as err:
        mcf.best_approx(mcf.Frequency((0.5,)), 2)
    assert err.value.k in ((2, -1), (-2, 1))


@pytest.mark.parametrize("q", [1, 3, 7, 12, 40])
def test_best_approx_matches_slow_search(q):
    div, _ = slow_best(mcf.GOLDEN, q)
    assert mcf.best_approx(GOLD, q).divisor == pytest.approx(float(div), rel=1e-12)


def test_fibonacci_denominators(golden_exp):
    assert golden_exp.q[:10] == FIB


def test_expansion_against_slow_oracle(golden_exp):
    # the best approximation sequence re-derived from the plain search
    qs, last = [], None
    for q in range(1, 90):
        div = slow_best(mcf.GOLDEN, q)[0]
        if last is None or div < last:
            qs.append(q)
            last = div
    assert qs == FIB


def test_expansion_monotone(golden_exp):
    divs = [a.divisor for a in golden_exp.approx]
    taus = golden_exp.taus
    assert all(b > a for a, b in zip(golden_exp.q, golden_exp.q[1:]))
    assert all(b < a for a, b in zip(divs, divs[1:]))
    assert all(b > a for a, b in zip(taus, taus[1:]))
    assert taus[0] == 0.0


def test_tau1_and_w(golden_exp):
    tau1 = 0.5 * math.log(2 / 0.3819660113)
    assert golden_exp.stops[1].tau == pytest.approx(tau1, abs=1e-9)
    assert golden_exp.stops[1].tau == pytest.approx(0.8278, abs=1e-4)
    assert golden_exp.W(tau1) == pytest.approx(0.1347, abs=1e-4)
    for st, a in zip(golden_exp.stops[1:], golden_exp.approx[1:]):
        assert st.w_at_tau == pytest.approx(st.tau - math.log(a.q), abs=1e-12)


def test_divisor_ratio_tends_to_gamma_squared(golden_exp):
    d = [a.divisor for a in golden_exp.approx]
    gamma = (math.sqrt(5) - 1) / 2
    assert d[9] / d[8] == pytest.approx(gamma, abs=1e-3)
    # one step of the sequence is one Fibonacci index; two steps give gamma^2
    assert d[10] / d[8] == pytest.approx(gamma ** 2, abs=1e-3)


def test_tau_recursion_identity(golden_exp):
    st = golden_exp.stops
    for n in range(len(st) - 1):
        lhs = st[n + 1].tau - st[n + 1].w_at_tau
        rhs = st[n].tau - st[n].w_at_tau + 2 * (st[n + 1].tau - st[n].peak_time)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_small_divisor_relation(golden_exp):
    steps = mcf.matrix_sequence(GOLD, mcf.stopping_times(golden_exp, 8), golden_exp)
    d0 = mcf.standins(steps)["delta0"]
    for prev, cur in zip(golden_exp.approx, golden_exp.approx[1:]):
        assert cur.q * prev.divisor <= d0 ** 2 + 1e-12


def test_rational_expansion_terminates():
    exp = mcf.expansion(mcf.Frequency((0.5,)), n_max=6)
    assert exp.terminated is not None
    assert len(exp) < 6


def test_w_basic(golden_exp):
    assert golden_exp.W(0.0) == 0.0
    ts = np.linspace(0, golden_exp.taus[8], 500)
    assert all(golden_exp.W(t) <= t + 1e-15 for t in ts)


def test_w_matches_brute_force(golden_exp):
    rng = np.random.default_rng(3)
    for t in rng.uniform(0, golden_exp.taus[6], 12):
        assert mcf.brute_force_W(GOLD, t) == pytest.approx(golden_exp.W(t), abs=1e-9)


def test_spiral_preset_expands():
    f = mcf.Frequency.preset("spiral")
    exp = mcf.expansion(f, n_max=6)
    assert f.d == 3
    assert all(b > a for a, b in zip(exp.q, exp.q[1:]))
    t = exp.taus[3] * 0.9
    assert mcf.brute_force_W(f, t, radius=30) == pytest.approx(exp.W(t), abs=1e-9)


# -------------------------------------------------------------- Brjuno

@pytest.mark.parametrize("s", [1.0, 2.0])
def test_brjuno_inequalities(s):
    b1h = mcf.brjuno_sum(GOLD, s, "B1hat", 15)
    b2 = mcf.brjuno_sum(GOLD, s, "B2", 15)
    b3 = mcf.brjuno_sum(GOLD, s, "B3", 15)
    assert all(math.isfinite(v) for v in (b1h, b2, b3))
    assert b1h <= b2 <= 2 ** (1 / s) * b1h
    assert b2 <= 2 * b3


def test_brjuno_rational_diverges():
    half = mcf.Frequency((0.5,))
    for variant in ("B1", "B1hat", "B2", "B3"):
        assert mcf.brjuno_sum(half, 1.0, variant, 6) == math.inf


def test_brjuno_terms_follow_inclusion():
    for n in range(1, 10):
        assert mcf.brjuno_term_B1(GOLD, 2.0, n) >= mcf.brjuno_term_B1(GOLD, 1.0, n)


# ------------------------------------------------------ matrix sequence

@pytest.fixture(scope="module")
def golden_steps(golden_exp):
    return mcf.matrix_sequence(GOLD, mcf.stopping_times(golden_exp, 8), golden_exp)


def test_matrix_step_invariants(golden_steps):
    omega = GOLD.omega
    for prev, cur in zip(golden_steps, golden_steps[1:]):
        assert round(np.linalg.det(cur.P.astype(float))) == 1
        assert round(np.linalg.det(cur.T.astype(float))) == 1
        assert np.array_equal(cur.T @ prev.P, cur.P)
        lhs = np.asarray(cur.omega_n, dtype=float)
        rhs = cur.eta * cur.T @ np.asarray(prev.omega_n, dtype=float)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
        assert cur.lam == pytest.approx(prev.lam * cur.eta, rel=1e-12)
        assert np.allclose(np.asarray(cur.M[:, -1], dtype=float), lhs, rtol=1e-12)
        assert np.allclose(np.asarray(cur.omega_n, dtype=float),
                           cur.lam * (cur.P @ np.asarray(omega, dtype=float)), rtol=1e-12)


def test_eta1(golden_steps):
    assert golden_steps[1].eta == pytest.approx(2.2883, abs=1e-4)


def test_hatP_is_best_approximation(golden_steps, golden_exp):
    for st in golden_steps[1:]:
        assert st.hatP_from_best
        assert st.hatP_norm == pytest.approx(math.exp(st.Delta_n), rel=1e-9)


def test_shortest_vector_cross_check(golden_steps):
    for st in golden_steps[1:6]:
        assert mcf.brute_force_W(GOLD, st.t) == pytest.approx(st.W_n, abs=1e-9)


def test_sigma_schedule(golden_steps):
    C1 = mcf.standins(golden_steps)["C1"]
    for n in range(1, 7):
        s = mcf.sigma_schedule(golden_steps, n, C1)
        cur, nxt = golden_steps[n], golden_steps[n + 1]
        assert 0 < s < float(np.abs(cur.omega_n).sum())
        assert s <= math.exp(-2 * (nxt.t - cur.t) + cur.Delta_n - cur.W_n) / C1 + 1e-15
    with pytest.raises(ScheduleInfeasible):
        mcf.sigma_schedule(golden_steps, 1, 1e-9)


def test_modified_times():
    assert mcf.modified_times([0.83, 1.2, 2.0], 1) == pytest.approx([0.83, 8.3, 83.0])
    fast = [1.0, 20.0, 500.0]
    assert mcf.modified_times(fast, 1) == fast
    with pytest.raises(ValueError):
        mcf.modified_times(fast, 0)


def test_cone_rates_identity_transfer(golden_steps):
    st = golden_steps[1]
    same = mcf.MatrixStep(1, st.t, st.P, np.eye(2, dtype=np.int64), st.lam, 1.0,
                          st.omega_n, st.W_n, st.Delta_n, st.M)
    rates = mcf.cone_rates(golden_steps[1], same, 0.1, 0.1)
    assert rates.A_bf == pytest.approx(1.0)


def test_cone_rates_golden(golden_steps):
    C1 = mcf.standins(golden_steps)["C1"]
    sig = [mcf.sigma_schedule(golden_steps, n, C1) for n in range(7)]
    for n in range(1, 6):
        r = mcf.cone_rates(golden_steps[n - 1], golden_steps[n], sig[n - 1], sig[n], K_search=50)
        assert r.A_bf <= r.A
        assert r.B_bf <= r.B == opnorm1(golden_steps[n].P.T)


def test_int_inverse_roundtrip():
    T = np.array([[2, 1], [1, 1]])
    assert np.array_equal(int_inverse(T) @ T, np.eye(2, dtype=np.int64))


def test_expansion_runtime():
    t0 = time.perf_counter()
    mcf.expansion(mcf.Frequency(mcf.PRESETS["golden"]), n_max=10)
    assert time.perf_counter() - t0 < 1.0
