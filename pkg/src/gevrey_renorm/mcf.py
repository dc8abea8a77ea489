"""Multidimensional continued fractions for omega = (alpha, 1).

Best approximations are found by exhaustive search over l1 spheres in the
first d-1 coordinates, stopping times and the W-function follow from them,
and the matrix sequence M_n = P_n M_0 E^{t_n} is produced by LLL reduction of
the lattice rows.  Arithmetic on alpha is carried out in extended precision
(numpy longdouble) so that divisors stay resolved further into the expansion.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .errors import ExactResonance, ScheduleInfeasible
from .lattice import canonical_sphere, int_inverse, l1_ball, lll, opnorm1

LD = np.longdouble
RATIONAL_TOL = 1e-13

GOLDEN = "0.61803398874989484820458683436563811772"
PRESETS = {
    "golden": (GOLDEN,),
    "silver": ("0.41421356237309504880168872420969807857",),
    # spiral mean tau (tau^3 = tau + 1): omega proportional to (tau^-1, tau^-2, 1)
    "spiral": ("0.75487766624669276004950889635852869189",
               "0.56984029099805326591218186327522748956"),
}


@dataclass(frozen=True)
class Frequency:
    alpha: tuple
    mu: float = 1.0

    def __post_init__(self):
        alpha = tuple(LD(str(a)) if not isinstance(a, LD) else a for a in self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not len(alpha):
            raise ValueError("alpha must have at least one component")
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    @classmethod
    def preset(cls, name, mu=1.0):
        return cls(PRESETS[name], mu=mu)

    @classmethod
    def parse(cls, spec, mu=1.0):
        """Accept a preset name or comma separated decimal digits."""
        spec = str(spec).strip()
        if spec in PRESETS:
            return cls.preset(spec, mu)
        return cls(tuple(x.strip() for x in spec.split(",") if x.strip()), mu=mu)

    @property
    def d(self):
        return len(self.alpha) + 1

    @property
    def omega(self):
        return np.array(self.alpha + (LD(1),), dtype=LD)

    def alpha_strings(self):
        return [np.format_float_positional(a, unique=True) for a in self.alpha]


@dataclass(frozen=True)
class BestApprox:
    q: int
    p: tuple
    divisor: float


@dataclass(frozen=True)
class StoppingTime:
    n: int
    tau: float
    peak_time: float
    w_at_tau: float
    delta_n: float


def _divisors(freq, khat):
    """Best last coordinate and divisor |k.omega| for each row of khat."""
    alpha = np.array(freq.alpha, dtype=LD)
    r = khat.astype(LD) @ alpha
    kd = -np.rint(r)
    return kd.astype(np.int64), np.abs(r + kd)


@lru_cache(maxsize=200000)
def _sphere_best(freq, q):
    khat = canonical_sphere(q, freq.d - 1)
    kd, div = _divisors(freq, khat)
    i = int(np.argmin(div))
    return tuple(int(v) for v in khat[i]) + (int(kd[i]),), div[i]


def best_approx(freq, q, rational_tol=RATIONAL_TOL):
    """Integer vector with |k_hat|_1 = q minimising |k.omega| (canonical sign)."""
    p, div = _sphere_best(freq, int(q))
    if div <= rational_tol:
        raise ExactResonance(p, div)
    return BestApprox(int(q), p, float(div))


class MCFExpansion:
    """Sequence of (BestApprox, StoppingTime) pairs plus the W-function."""

    def __init__(self, freq, approx, stops, terminated=None):
        self.freq = freq
        self.approx = list(approx)
        self.stops = list(stops)
        self.terminated = terminated  # ExactResonance when omega is rationally dependent
        self._ld_div = [d for d in _ld_divisors(freq, self.approx)]

    def __len__(self):
        return len(self.approx)

    def __getitem__(self, i):
        return self.approx[i], self.stops[i]

    def __iter__(self):
        return iter(zip(self.approx, self.stops))

    @property
    def q(self):
        return [a.q for a in self.approx]

    @property
    def taus(self):
        return np.array([s.tau for s in self.stops])

    def covers(self, t):
        return len(self.stops) >= 2 and np.all(np.asarray(t) <= self.stops[-1].tau)

    def k_of(self, t):
        """k(t) = max{j : tau_j <= t}."""
        idx = np.searchsorted(self.taus, np.asarray(t, dtype=float), side="right") - 1
        return np.maximum(idx, 0)

    def W(self, t):
        """Piecewise W on [tau_n, tau_{n+1}] from the n-th best approximation."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("W is defined for t >= 0")
        if not self.covers(t):
            raise ValueError("expansion does not cover the requested time")
        n = self.k_of(t)
        d, mu = self.freq.d, self.freq.mu
        q = np.array([a.q for a in self.approx], dtype=float)[n]
        div = np.array([float(x) for x in self._ld_div])[n]
        lengths = np.maximum(mu * q * np.exp(-t), div * np.exp((d - 1) * t))
        # on the first interval the vector e_d competes as well
        first = n == 0
        lengths = np.where(first, np.minimum(lengths, np.exp((d - 1) * t)), lengths)
        out = -np.log(lengths)
        return float(out) if out.ndim == 0 else out

    def Delta(self, t):
        """Delta(t) = tau_{k(t)} - W(tau_{k(t)}), non-decreasing in t."""
        n = self.k_of(t)
        deltas = np.array([s.delta_n for s in self.stops])
        out = deltas[n]
        return float(out) if np.ndim(out) == 0 else out


def _ld_divisors(freq, approx):
    omega = freq.omega
    return [abs(np.array(a.p, dtype=LD) @ omega) for a in approx]


def expansion(freq, n_max=None, t_max=None, rational_tol=RATIONAL_TOL, q_limit=10**7):
    """Best approximations p_0, p_1, ... and their stopping times.

    Stops after ``n_max`` terms or once tau_n exceeds ``t_max``.  When
    omega is rationally dependent the search hits an exact resonance; the
    partial expansion is returned with ``terminated`` set.
    """
    if n_max is None and t_max is None:
        raise ValueError("give n_max or t_max")
    d, mu = freq.d, LD(freq.mu)
    approx, stops = [], []
    terminated = None
    q = 0
    prev_div = None
    omega = freq.omega
    while True:
        if n_max is not None and len(approx) >= n_max:
            break
        if t_max is not None and stops and stops[-1].tau > t_max and len(stops) >= 2:
            break
        q += 1
        if q > q_limit:
            raise ExactResonance((0,) * d, 0.0)
        p, div = _sphere_best(freq, q)
        if div <= rational_tol:
            terminated = ExactResonance(p, div)
            break
        if prev_div is not None and not div < prev_div:
            continue
        n = len(approx)
        div_ld = abs(np.array(p, dtype=LD) @ omega)
        if n == 0:
            tau, w_tau, delta = 0.0, 0.0, 0.0
        else:
            tau_ld = np.log(mu * q / prev_div) / d
            tau = float(tau_ld)
            delta = float(np.log(mu * q))
            w_tau = float(tau_ld - np.log(mu * q))
        peak = float(np.log(mu * q / div_ld) / d)
        approx.append(BestApprox(q, p, float(div_ld)))
        stops.append(StoppingTime(n, tau, peak, w_tau, delta))
        prev_div = div_ld
    return MCFExpansion(freq, approx, stops, terminated)


def W(freq, t, exp=None):
    """W(t) = -log(shortest vector of M_0 E^t) via the piecewise formula."""
    tmax = float(np.max(t))
    if exp is None or not exp.covers(tmax):
        exp = expansion(freq, t_max=tmax)
    return exp.W(t)


def lattice_rows(freq, t):
    """Rows of M_0 E^t, i.e. (k_hat e^{-t}, (k.omega) e^{(d-1)t}) for k = e_i."""
    d = freq.d
    M0 = np.eye(d, dtype=LD)
    M0[:-1, -1] = np.array(freq.alpha, dtype=LD)
    E = np.diag([np.exp(-LD(t))] * (d - 1) + [np.exp(LD(d - 1) * LD(t))])
    return M0 @ E


def star_lengths(freq, k, t):
    """||k M_0 E^t||_* for integer rows k (vectorised over k and t)."""
    k = np.atleast_2d(k)
    d, mu = freq.d, freq.mu
    khat = np.abs(k[:, :-1]).sum(axis=1).astype(float)
    div = np.abs(k.astype(LD) @ freq.omega).astype(float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = mu * khat[:, None] * np.exp(-t)[None, :]
    b = div[:, None] * np.exp((d - 1) * t)[None, :]
    return np.maximum(a, b)


def brute_force_W(freq, t, radius=50):
    """-log of the shortest nonzero vector by exhaustive search.

    Independent of the expansion: every k_hat with |k_hat|_1 <= radius is
    tried with both neighbouring integers for k_d, together with e_d.
    """
    d = freq.d
    cands = [np.eye(d, dtype=np.int64)[-1:]]
    for q in range(1, int(radius) + 1):
        khat = canonical_sphere(q, d - 1)
        r = khat.astype(LD) @ np.array(freq.alpha, dtype=LD)
        lo = np.floor(-r).astype(np.int64)
        for kd in (lo, lo + 1):
            cands.append(np.concatenate([khat, kd[:, None]], axis=1))
    K = np.concatenate(cands)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(len(t_arr))
    for i0 in range(0, len(t_arr), 256):
        chunk = t_arr[i0:i0 + 256]
        out[i0:i0 + 256] = -np.log(star_lengths(freq, K, chunk).min(axis=0))
    return float(out[0]) if np.ndim(t) == 0 else out


# ---------------------------------------------------------------- Brjuno sums

def _min_divisor_upto(freq, Q, kd_bound=None):
    """Running minimum of |k.omega| over 0 < |k_hat|_1 <= Q (optionally |k_d| bounded)."""
    best = math.inf
    alpha = np.array(freq.alpha, dtype=LD)
    for q in range(1, int(Q) + 1):
        if kd_bound is None:
            _, div = _sphere_best(freq, q)
            best = min(best, float(div))
        else:
            khat = canonical_sphere(q, freq.d - 1)
            r = khat.astype(LD) @ alpha
            kd = np.clip(-np.rint(r), -kd_bound, kd_bound)
            best = min(best, float(np.min(np.abs(r + kd))))
    return best


def _log_inv(x):
    return math.inf if x <= RATIONAL_TOL else -math.log(x)


def brjuno_sum(freq, s, variant, N):
    """Partial sum (N terms) of one of the four equivalent s-Brjuno series.

    Returns ``math.inf`` when a zero divisor is met (divergence signal).
    """
    if s < 1:
        raise ValueError("s >= 1 required")
    mu = freq.mu
    if variant in ("B1", "B1hat"):
        total = 0.0
        for n in range(N):
            R = 2.0 ** n
            Q = int(math.floor(R / mu + 1e-12))
            if Q < 1:
                term = 0.0
            else:
                bound = int(R) if variant == "B1" else None
                term = max(0.0, _log_inv(_min_divisor_upto(freq, Q, bound)))
            total += 2.0 ** (-n / s) * term
        return total
    exp = expansion(freq, n_max=N + 1)
    if exp.terminated is not None and len(exp) < N + (1 if variant == "B3" else 0):
        return math.inf
    if variant == "B2":
        return sum((mu * a.q) ** (-1.0 / s) * _log_inv(a.divisor) for a in exp.approx[:N])
    if variant == "B3":
        st = exp.stops
        return sum(math.exp(-(st[n].tau - st[n].w_at_tau) / s) * st[n + 1].tau for n in range(N))
    raise ValueError(f"unknown variant {variant!r}")


def brjuno_term_B1(freq, s, n):
    """n-th term of the B1 series (used for term-wise comparisons in s)."""
    Q = int(math.floor(2.0 ** n / freq.mu + 1e-12))
    if Q < 1:
        return 0.0
    return 2.0 ** (-n / s) * max(0.0, _log_inv(_min_divisor_upto(freq, Q, int(2 ** n))))


# ------------------------------------------------------------ matrix sequence

@dataclass(frozen=True)
class MatrixStep:
    n: int
    t: float
    P: np.ndarray
    T: np.ndarray
    lam: float
    eta: float
    omega_n: np.ndarray
    W_n: float
    Delta_n: float
    M: np.ndarray = field(repr=False)
    M_norm: float = 0.0
    Minv_norm: float = 0.0
    hatP_norm: float = 0.0
    hatP_from_best: bool = True

    @property
    def hatP(self):
        H = np.array(self.P, copy=True)
        H[:, -1] = 0
        return H


def matrix_sequence(freq, times, exp=None, delta=0.99):
    """MatrixStep for t_0 = 0 followed by each time in ``times``."""
    times = [float(t) for t in times]
    if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be positive and strictly increasing")
    if exp is None or not exp.covers(times[-1]):
        exp = expansion(freq, t_max=times[-1])
    d, mu = freq.d, freq.mu
    omega = freq.omega
    scale = np.array([mu] * (d - 1) + [1.0])
    I = np.eye(d, dtype=np.int64)
    M0 = lattice_rows(freq, 0.0)
    steps = [MatrixStep(0, 0.0, I, I, 1.0, 1.0, omega.copy(), 0.0, 0.0, M0,
                        opnorm1(M0.astype(float)), opnorm1(np.linalg.inv(M0.astype(float))),
                        1.0, True)]
    P_prev = I
    for n, t in enumerate(times, start=1):
        base = lattice_rows(freq, t)
        start = (P_prev.astype(LD) @ base).astype(float) * scale
        U, _ = lll(start, delta=delta)
        P = U @ P_prev
        if round(np.linalg.det(P.astype(float))) < 0:
            P[-1] *= -1
        M = P.astype(LD) @ base
        T = P @ int_inverse(P_prev)
        lam = math.exp((d - 1) * t)
        eta = math.exp((d - 1) * (t - steps[-1].t))
        omega_n = LD(lam) * (P.astype(LD) @ omega)
        W_n = exp.W(t)
        Delta_n = exp.Delta(t)
        hatP_norm = float(np.abs(P[:, :-1]).sum(axis=1).max())
        q_k = exp.approx[int(exp.k_of(t))].q
        from_best = hatP_norm == q_k
        if not from_best:
            hatP_norm = math.exp(Delta_n) / mu
        Mf = M.astype(float)
        steps.append(MatrixStep(n, t, P, T, lam, eta, omega_n, W_n, Delta_n, M,
                                opnorm1(Mf), opnorm1(np.linalg.inv(Mf)), hatP_norm, from_best))
        P_prev = P
    return steps


def standins(steps):
    """Empirical C_1, C_2 and delta_0 over the computed prefix."""
    C1 = max(s.M_norm * math.exp(-(len(s.P) - 1) * s.W_n) for s in steps)
    C2 = max(s.Minv_norm * math.exp(-s.W_n) for s in steps)
    delta0 = max(math.exp(-s.W_n) for s in steps)
    return {"C1": C1, "C2": C2, "delta0": delta0}


def stopping_times(exp, count):
    """(tau_1, ..., tau_count) from an expansion."""
    if len(exp) < count + 1:
        raise ValueError("expansion too short")
    return [exp.stops[n].tau for n in range(1, count + 1)]


def modified_times(times, ell):
    """t~_1 = t_1, t~_{n+1} = max(5(ell+1) t~_n, t_{n+1})."""
    if ell < 1:
        raise ValueError("ell >= 1 required")
    if isinstance(times, MCFExpansion):
        times = [s.tau for s in times.stops[1:]]
    out = [float(times[0])]
    for t in times[1:]:
        out.append(max(5 * (ell + 1) * out[-1], float(t)))
    return out


def sigma_schedule(steps, n, C1, mu=1.0):
    """sigma_n with the measured C_1; n = 0 uses the factor 1 in place of 1/n."""
    if n + 1 >= len(steps):
        raise ValueError("matrix sequence must cover t_{n+1}")
    d = len(steps[0].P)
    s, s1 = steps[n], steps[n + 1]
    expo = -(d - 1) * (s1.t - s.t) - (d - 1) * s.W_n - s1.t + s.Delta_n
    sigma = math.exp(expo) / (max(n, 1) * C1 * mu)
    wn = float(np.abs(s.omega_n).sum())
    if not 0 < sigma < wn:
        raise ScheduleInfeasible(f"sigma_{n} = {sigma:.3e} not in (0, |omega_n| = {wn:.3e})")
    return sigma


@dataclass(frozen=True)
class ConeRates:
    A: float
    B: float
    A_bf: float
    B_bf: float
    empty_cone: bool = False
    mcf2_bound: float = math.nan


def _resonant(ball, w, sigma):
    w = np.asarray(w, dtype=float)
    return np.abs(ball @ w) <= sigma * np.abs(ball).sum(axis=1)


def cone_rates(step_prev, step, sigma_prev, sigma, K_search=50, C2=None, mu=1.0, xi=None):
    """Formula bounds and brute-force values of A_n and B_n."""
    if not (sigma_prev > 0 and sigma > 0):
        raise ValueError("sigmas must be positive")
    if K_search < 8:
        raise ValueError("K_search >= 8 required")
    d = len(step.P)
    ball = l1_ball(K_search, d)
    ball = ball[np.abs(ball).sum(axis=1) > 0]
    Tinv_t = int_inverse(step.T).T
    w_prev = np.asarray(step_prev.omega_n, dtype=float)
    Minv_t = np.linalg.inv(step.M.astype(float)).T
    A = (sigma_prev * np.abs(w_prev).sum() / (w_prev @ w_prev) * opnorm1(Tinv_t)
         + math.exp(-step.t) * opnorm1(Minv_t) * step_prev.hatP_norm)
    res = _resonant(ball, w_prev, sigma_prev)
    empty = not res.any()
    norms = np.abs(ball).sum(axis=1)
    A_bf = float((np.abs(ball[res] @ Tinv_t.T).sum(axis=1) / norms[res]).max()) if not empty else 0.0
    far = ~_resonant(ball, step.omega_n, sigma)
    B = opnorm1(step.P.T)
    B_bf = float((np.abs(ball[far] @ step.P).sum(axis=1) / norms[far]).max()) if far.any() else 0.0
    bound = math.nan
    if C2 is not None:
        xi = 1.0 / max(step.n, 1) if xi is None else xi
        bound = (1 + xi) * C2 / mu * math.exp(-step.Delta_n + step_prev.Delta_n)
    return ConeRates(float(A), float(B), A_bf, B_bf, empty, bound)
