"""Linearizing conjugacy: assembly from elimination outputs, checks and an oracle."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.stats import qmc

from .errors import (InsufficientModes, NoConvergence, NotUnimodular, SingularJacobian,
                     SmallDivisorFloor)
from .fourier import (FourierField, c_nu_minus_one, decay_fit, derivative, grid_points,
                      grid_size, linear_remap, norm_F, project)
from .lattice import int_inverse, l1_ball, opnorm1


@dataclass(frozen=True)
class Diffeo:
    """Torus map x -> x + p(x) with p a real periodic field."""

    periodic_part: FourierField
    info: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self):
        return self.periodic_part.dim

    @classmethod
    def identity(cls, d, K=1):
        return cls(FourierField.zeros(d, K))

    @classmethod
    def shift(cls, c, K=1):
        return cls(FourierField.constant(c, K))

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts + self.periodic_part.evaluate(pts)

    def jacobian_sup(self, N=None):
        """max over a grid of the l1 operator norm of D(h - id)."""
        p = self.periodic_part
        if len(p) == 0:
            return 0.0
        N = grid_size(p.trunc) if N is None else N
        cols = [derivative(p, np.eye(p.dim, dtype=int)[j]).to_grid(N) for j in range(p.dim)]
        D = np.stack(cols, axis=0)  # (d_col, d_row, grid...)
        return float(np.abs(D).sum(axis=1).max())

    @property
    def invertible(self):
        return self.jacobian_sup() < 1.0


@dataclass(frozen=True)
class ConjugacyReport:
    defect: float
    t_used: float
    ell_checked: int
    gevrey_rho_hat: float
    translation_offset: np.ndarray


def build_g(u, P_prev):
    """g = P^{-1} o (id + u) o P as a Diffeo (exact mode remap k -> P^T k)."""
    P = np.asarray(P_prev)
    Pinv = int_inverse(P)
    if round(np.linalg.det(P.astype(float))) != 1:
        raise NotUnimodular("det P must be +1")
    if len(u) == 0:
        return Diffeo(FourierField.zeros(u.dim, u.trunc))
    return Diffeo(linear_remap(u, P.T, Pinv.astype(float)))


def _chain_eval(gs, pts):
    y = pts
    for g in reversed(gs):
        y = g(y)
    return y


def compose_chain(gs, K_out=32, N=None, n_probe=256):
    """h = g_1 o ... o g_n sampled on a grid and truncated to |k|_1 <= K_out.

    ``info`` records, on probe points, the sup differences ||h_j - h_{j-1}||
    and the telescoping check sup|h - id| <= sum sup|g_i - id|.
    """
    if not gs:
        raise ValueError("empty chain")
    d = gs[0].dim
    N = grid_size(K_out) if N is None else N
    for g in gs:
        if len(g.periodic_part) and g.jacobian_sup() >= 1.0:
            raise SingularJacobian("chain element fails the invertibility certificate")
    probe = sample_points(n_probe, d)
    diffs, prev = [], probe
    for j in range(1, len(gs) + 1):
        cur = _chain_eval(gs[:j], probe)
        diffs.append(float(np.abs(cur - prev).max()))
        prev = cur
    sup_h = float(np.abs(prev - probe).max())
    sup_g = [float(np.abs(g.periodic_part.evaluate(probe)).max()) for g in gs]
    pts = grid_points(N, d)
    vals = _chain_eval(gs, pts) - pts
    p = FourierField.from_grid(vals.T.reshape((d,) + (N,) * d), K_out)
    info = {"step_sup_diffs": diffs, "sup_h": sup_h, "telescoping_bound": sum(sup_g),
            "telescoping_ok": sup_h <= sum(sup_g) * (1 + 1e-9) + 1e-15,
            "dropped": p.dropped}
    return Diffeo(p, info)


def invert(h, K_out=None, N=None, tol=1e-14, max_iter=200):
    """h^{-1} via the fixed point y = x - p(y) on a grid."""
    p = h.periodic_part
    d = p.dim
    if len(p) == 0:
        return Diffeo(p)
    if h.jacobian_sup() >= 1.0:
        raise SingularJacobian("invertibility certificate fails")
    K_out = p.trunc if K_out is None else K_out
    N = grid_size(K_out) if N is None else N
    x = grid_points(N, d)
    y = x.copy()
    for it in range(max_iter):
        y_new = x - p.evaluate(y)
        step = float(np.abs(y_new - y).max())
        y = y_new
        if step <= tol:
            break
    else:
        raise NoConvergence(max_iter, step, "inversion")
    q = FourierField.from_grid((y - x).T.reshape((d,) + (N,) * d), K_out)
    inv = Diffeo(q)
    rng = np.random.default_rng(0)
    sample = rng.uniform(0, 2 * np.pi, size=(32, d))
    err = float(np.abs(h(inv(sample)) - sample).max())
    inv.info["roundtrip"] = err
    if err >= 1e-10:
        raise NoConvergence(it + 1, err, "inversion round trip")
    return inv


def flow(X, x0, t, dt=None):
    """Classical RK4 integration of x' = X(x) for time t (vectorized over rows of x0)."""
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    if t == 0:
        return x
    if dt is None:
        dt = abs(t) / max(10, math.ceil(abs(t) / 0.01))
    if dt > abs(t) / 10 + 1e-15:
        raise ValueError("dt must be at most t/10")
    n = math.ceil(abs(t) / dt - 1e-9)
    h = t / n
    for _ in range(n):
        k1 = X.evaluate(x)
        k2 = X.evaluate(x + 0.5 * h * k1)
        k3 = X.evaluate(x + 0.5 * h * k2)
        k4 = X.evaluate(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def sample_points(n, d, seed=0):
    """Scrambled Sobol points on [0, 2pi)^d (first n of the next power of two)."""
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    m = max(int(math.ceil(math.log2(max(n, 1)))), 0)
    return 2 * np.pi * sob.random_base2(m)[:n]


def verify_conjugacy(X, h, omega, t=1.0, n_samples=100, seed=0, dt=None):
    """max over sample points of |phi_X^t(h(x)) - h(x + omega t)|."""
    omega = np.asarray(omega, dtype=float)
    x = sample_points(n_samples, X.dim, seed)
    lhs = flow(X, h(x), t, dt)
    rhs = h(x + omega * t)
    defect = float(np.abs(lhs - rhs).max())
    try:
        rho_hat = decay_fit(h.periodic_part, 1.0)
    except InsufficientModes:
        rho_hat = 0.0
    return ConjugacyReport(defect, float(t), 0, rho_hat, h.periodic_part.mean().copy())


def normalize_translation(h):
    """h o (x - c) with c chosen so that h - id has zero mean."""
    p = h.periodic_part
    c = p.mean()
    if not np.any(c):
        return h
    phase = np.exp(-1j * (p.modes @ c))[:, None]
    coeffs = p.coeffs * phase
    zero = (p.modes == 0).all(axis=1)
    coeffs[zero] -= c
    return Diffeo(FourierField(p.dim, p.trunc, p.modes, coeffs, dropped=p.dropped, symmetrize=False),
                  dict(h.info))


def direct_linearize(X, omega, tol=1e-12, K=None, max_iter=30, divisor_floor=1e-10):
    """Newton solve of Dh omega = X o h for h = id + v, independent of renormalization.

    Each step uses the reducibility substitution dv = Dh xi with
    D xi . omega = -(Dh)^{-1} E, E = omega + Dv omega - X o h.
    """
    omega = np.asarray(omega, dtype=float)
    d = X.dim
    K = X.trunc if K is None else K
    ball = l1_ball(K, d)
    nz = (ball != 0).any(axis=1)
    divs = ball[nz] @ omega
    if np.abs(divs).min() <= divisor_floor:
        raise SmallDivisorFloor(f"min |k.omega| = {np.abs(divs).min():.3e} at truncation {K}")
    N = grid_size(K)
    pts = grid_points(N, d)
    idx = tuple((ball % N).T)
    ik = 1j * ball.astype(float)
    kdotw = 1j * (ball @ omega)

    def to_grid(c):
        spec = np.zeros((c.shape[1],) + (N,) * d, dtype=complex)
        spec[(slice(None),) + idx] = c.T
        return (np.fft.ifftn(spec, axes=tuple(range(1, d + 1))).real * N ** d).reshape(c.shape[1], -1).T

    def from_grid(vals):
        arr = vals.T.reshape((vals.shape[1],) + (N,) * d)
        spec = np.fft.fftn(arr, axes=tuple(range(1, d + 1))) / N ** d
        return spec[(slice(None),) + idx].T

    v = np.zeros((len(ball), d), dtype=complex)
    history = []
    for it in range(max_iter + 1):
        vg = to_grid(v)
        Dv = np.stack([to_grid(ik[:, [j]] * v) for j in range(d)], axis=2)
        E = omega + Dv @ omega - X.evaluate(pts + vg)
        Ec = from_grid(E)
        res = float(np.abs(Ec).sum())
        history.append(res)
        if res < tol:
            break
        if it == max_iter:
            raise NoConvergence(max_iter, res, "direct linearization")
        Dh = np.eye(d)[None] + Dv
        rhs = from_grid(-np.linalg.solve(Dh, E[:, :, None])[:, :, 0])
        xi = np.zeros_like(rhs)
        xi[nz] = rhs[nz] / kdotw[nz, None]
        xg = to_grid(xi)
        v = v + from_grid(np.einsum("nij,nj->ni", Dh, xg))
    h = normalize_translation(Diffeo(FourierField(d, K, ball, v)))
    h.info["history"] = history
    return h


def regularity_estimate(h, s, ell_max=6, N=None):
    """Empirical Gevrey radius of h - id and alpha!^s-normalized derivative sups."""
    p = h.periodic_part
    d = p.dim
    if len(p) == 0 or not np.any((p.modes != 0).any(axis=1)):
        return {"gevrey_rho_hat": 0.0, "derivative_norms": [0.0] * (ell_max + 1),
                "ell_checked": ell_max, "truncation_dominated": ell_max > 6}
    try:
        rho_hat = decay_fit(p, s)
    except InsufficientModes:
        rho_hat = 0.0
    N = grid_size(p.trunc) if N is None else N
    norms = []
    for ell in range(ell_max + 1):
        best = 0.0
        for alpha in _multi_indices(d, ell):
            val = np.abs(derivative(p, alpha).to_grid(N)).max()
            fact = math.prod(math.factorial(a) for a in alpha) ** s
            best = max(best, val / fact)
        norms.append(float(best))
    return {"gevrey_rho_hat": rho_hat, "derivative_norms": norms, "ell_checked": ell_max,
            "truncation_dominated": ell_max > 6}


def _multi_indices(d, ell):
    if d == 1:
        yield (ell,)
        return
    for a in range(ell, -1, -1):
        for rest in _multi_indices(d - 1, ell - a):
            yield (a,) + rest


def estimate_rotation(X, T_horizon=100.0, n_orbits=8, dt=0.01, seed=0):
    """Average displacement rate (phi^T(x) - x)/T over Sobol starting points.

    Returns (mean rate, spread) where spread is the max deviation across orbits.
    """
    if T_horizon < 100:
        raise ValueError("T_horizon must be at least 100")
    x0 = sample_points(n_orbits, X.dim, seed)
    xt = flow(X, x0, T_horizon, dt)
    rates = (xt - x0) / T_horizon
    mean = rates.mean(axis=0)
    return mean, float(np.abs(rates - mean).max())


def renorm_chain(eliminations, steps):
    """The Diffeos g_n = P_{n-1}^{-1} o U_n o P_{n-1} for a renormalization run."""
    return [build_g(el.u, steps[n].P) for n, el in enumerate(eliminations)]


def chain_diagnostics(gs, states, sd, s, nu):
    """Measured ||g_n - id||_F0 against 8(C_nu-1)|P_{n-1}^{-1}|/sigma_{n-1} ||I^- X_{n-1}||_F0."""
    rows = []
    cm1 = c_nu_minus_one(s, nu, gs[0].dim) if gs else 0.0
    for n, g in enumerate(gs, start=1):
        st = states[n - 1]
        far = project(st.X - st.omega_n, "far", st.sigma_n, st.omega_n)
        Pinv_norm = opnorm1(int_inverse(sd.steps[n - 1].P))
        meas = norm_F(g.periodic_part, 1, 0.0)
        bound = 8 * cm1 * Pinv_norm / st.sigma_n * norm_F(far, 1, 0.0)
        rows.append({"n": n, "g_norm": meas, "bound": bound,
                     "ok": meas <= bound * (1 + 1e-9) + 1e-300})
    return rows
