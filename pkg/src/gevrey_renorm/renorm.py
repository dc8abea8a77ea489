"""Renormalization operator R = T o U on truncated Fourier fields.

U removes the far-from-resonance modes of X by a torus change of
coordinates id + u (u supported on far modes), T rescales by a unimodular
matrix and a time factor.  Elimination is solved by Newton's method on the
far-mode equation I^- (id+u)^* X = 0; every Newton system is solved by the
fixed point h = D_w^{-1}(G + N h), N the remainder of the derivative,
i.e. a Neumann series for the inverse of D_w - N.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import mcf
from .errors import (NeumannDivergence, NoConvergence, NotRenormalizable,
                     PreconditionViolated, SingularJacobian)
from .fourier import (FourierField, GevreyParams, beta, c_nu, c_nu_minus_one,
                      far_mask, grid_points, grid_size, norm_F, norm_Fprime,
                      project, pushforward_linear)
from .lattice import l1_ball, opnorm1

__all__ = ["c_nu", "c_nu_minus_one", "epsilon_threshold", "RenormParams", "RenormState",
           "EliminationResult", "eliminate", "homotopy_path", "pullback", "renorm_step",
           "run", "schedule_report", "StepData", "prepare_schedule", "synthetic_field"]

DET_FLOOR = 1e-8


def epsilon_threshold(sigma, nu, w_norm, s, d):
    """Admissible perturbation size for elimination at divisor floor sigma."""
    if not 0 < sigma < w_norm:
        raise ValueError("need 0 < sigma < |w|")
    b = beta(d, s)
    cm1 = c_nu_minus_one(s, nu, d)
    C = 1.0 + cm1
    first = nu ** s / (2 * b) ** s
    second = sigma / (8 * w_norm * C) / (2 ** s / nu ** s + 7)
    return sigma / (8 * cm1) * min(first, second)


@dataclass(frozen=True)
class RenormParams:
    gevrey: GevreyParams
    theta: float = 1.0
    phi_rule: str = "formula"
    newton_tol: float = 1e-12
    newton_max_iter: int = 20
    neumann_tol: float = 1e-15
    neumann_max_terms: int = 100
    ell: int = 1
    mode: str = "newton"
    strict: bool = True
    times: str = "stopping"
    compose_tol: float = 1e-9

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.mode not in ("newton", "chord", "homotopy"):
            raise ValueError(f"unknown elimination mode {self.mode!r}")
        if self.phi_rule not in ("formula", "one"):
            raise ValueError(f"unknown phi rule {self.phi_rule!r}")
        if self.times not in ("stopping", "modified"):
            raise ValueError(f"unknown time rule {self.times!r}")


@dataclass(frozen=True)
class EliminationResult:
    u: FourierField
    Y: FourierField
    iters: int
    far_residual: float
    u_norm_bound_ok: bool
    history: tuple = ()
    contraction: float = 0.0
    y_bound_ok: bool = True
    dropped: float = 0.0


@dataclass(frozen=True)
class RenormState:
    n: int
    X: FourierField
    omega_n: np.ndarray
    rho_n: float
    sigma_n: float
    eps_n: float
    residual: float
    renormalizable: bool = True
    diagnostics: dict = field(default_factory=dict)


# ------------------------------------------------------------ grid kernels

class _Grid:
    """Uniform grid and the spectral index maps for a truncation ball."""

    def __init__(self, d, K, N=None):
        self.d, self.K = d, K
        self.N = grid_size(K) if N is None else N
        self.pts = grid_points(self.N, d)
        self.ball = l1_ball(K, d)
        self.idx = tuple((self.ball % self.N).T)

    def to_grid(self, coeffs, modes=None):
        """Real grid values (npts, ncomp) of coefficients on ``modes`` (default: ball)."""
        modes = self.ball if modes is None else modes
        ncomp = coeffs.shape[1]
        spec = np.zeros((ncomp,) + (self.N,) * self.d, dtype=complex)
        spec[(slice(None),) + tuple((modes % self.N).T)] = coeffs.T
        vals = np.fft.ifftn(spec, axes=tuple(range(1, self.d + 1))).real * self.N ** self.d
        return vals.reshape(ncomp, -1).T

    def from_grid(self, vals):
        """Ball coefficients and dropped l1 mass of grid values (npts, ncomp)."""
        ncomp = vals.shape[1]
        arr = vals.T.reshape((ncomp,) + (self.N,) * self.d)
        spec = np.fft.fftn(arr, axes=tuple(range(1, self.d + 1))) / self.N ** self.d
        coeffs = spec[(slice(None),) + self.idx].T
        dropped = max(float(np.abs(spec).sum() - np.abs(coeffs).sum()), 0.0)
        return coeffs, dropped


def _eval_with_jacobian(f, pts, chunk=4096):
    """Values f(pts) (n, c) and Jacobians Df(pts) (n, c, d) by mode sums."""
    n, d = pts.shape
    vals = np.zeros((n, f.ncomp))
    jac = np.zeros((n, f.ncomp, d))
    if len(f) == 0:
        return vals, jac
    kf = f.modes.astype(float)
    stacked = np.concatenate([f.coeffs] + [1j * kf[:, [j]] * f.coeffs for j in range(d)], axis=1)
    for i in range(0, n, chunk):
        ph = np.exp(1j * (pts[i:i + chunk] @ kf.T))
        out = (ph @ stacked).real
        vals[i:i + chunk] = out[:, :f.ncomp]
        jac[i:i + chunk] = out[:, f.ncomp:].reshape(-1, d, f.ncomp).transpose(0, 2, 1)
    return vals, jac


def _fprime0(coeffs, modes):
    if len(coeffs) == 0:
        return 0.0
    return float(np.sum((1 + np.abs(modes).sum(axis=1)) * np.abs(coeffs).sum(axis=1)))


def _solve_pointwise(A, B):
    det = np.linalg.det(A)
    if np.min(np.abs(det)) < DET_FLOOR:
        raise SingularJacobian(f"min |det(I+Du)| = {np.min(np.abs(det)):.3e} on the grid")
    return np.linalg.solve(A, B)


class _Eliminator:
    """Far-mode equation G(u) = I^- (id+u)^* X for X = w + f."""

    def __init__(self, f, w, sigma, N=None):
        self.f, self.w, self.sigma = f, np.asarray(w, dtype=float), sigma
        self.d, self.K = f.dim, f.trunc
        self.grid = _Grid(self.d, self.K, N)
        ball = self.grid.ball
        self.far = far_mask(ball, sigma, self.w)
        self.far_modes = ball[self.far]
        self.div = 1j * (self.far_modes @ self.w)
        kf = self.far_modes.astype(float)
        self.ik = [1j * kf[:, j][:, None] for j in range(self.d)]
        f0 = np.zeros((len(ball), f.ncomp), dtype=complex)
        if len(f):
            pos = {tuple(k): i for i, k in enumerate(ball.tolist())}
            for k, c in zip(f.modes.tolist(), f.coeffs):
                f0[pos[tuple(k)]] = c
        self.G0 = f0[self.far]

    def field_from_far(self, c):
        return FourierField(self.d, self.K, self.far_modes, c, symmetrize=False)

    def _grid_u(self, c):
        d = self.d
        if len(c) == 0:
            n = len(self.grid.pts)
            return np.zeros((n, d)), np.zeros((n, d, d))
        u = self.grid.to_grid(c, self.far_modes)
        parts = [self.grid.to_grid(self.ik[j] * c, self.far_modes) for j in range(d)]
        Du = np.stack(parts, axis=2)  # Du[:, i, j] = d_j u_i
        return u, Du

    def state(self, c):
        """Grid data at u: g = Y - w, (I+Du)^{-1}, Df(x+u), Du and the far residual G."""
        u, Du = self._grid_u(c)
        fv, Jf = _eval_with_jacobian(self.f, self.grid.pts + u)
        A = np.eye(self.d)[None] + Du
        Ainv = _solve_pointwise(A, np.broadcast_to(np.eye(self.d), A.shape))
        g = np.einsum("nij,nj->ni", Ainv, fv - Du @ self.w)
        coeffs, dropped = self.grid.from_grid(g)
        return {"g": g, "Ainv": Ainv, "Jf": Jf, "Du": Du, "coeffs": coeffs,
                "G": coeffs[self.far], "dropped": dropped}

    def apply_N(self, h, st):
        """I^-[(I+Du)^{-1}(Df(x+u) h - Dh g + Du Dh w)] for far coefficients h.

        Together with -D_w h this is the derivative of G at u in direction h.
        """
        hv, Dh = self._grid_u(h)
        inner = (np.einsum("nij,nj->ni", st["Jf"], hv) - np.einsum("nij,nj->ni", Dh, st["g"])
                 + np.einsum("nij,nj->ni", st["Du"], Dh @ self.w))
        coeffs, _ = self.grid.from_grid(np.einsum("nij,nj->ni", st["Ainv"], inner))
        return coeffs[self.far]

    def neumann_solve(self, rhs, st, tol, max_terms):
        """Solve D_w h = rhs + N h by fixed-point iteration."""
        if len(rhs) == 0:
            return rhs, 0.0
        a_priori = 2 * _fprime0(st["coeffs"], self.grid.ball) / self.sigma
        if a_priori >= 0.9:
            raise NeumannDivergence(f"contraction estimate {a_priori:.3f} >= 0.9")
        base = rhs / self.div[:, None]
        h = base
        prev_step, ratio = None, 0.0
        for _ in range(max_terms):
            new = base + self.apply_N(h, st) / self.div[:, None]
            step = _fprime0(new - h, self.far_modes)
            if prev_step:
                ratio = step / prev_step
                if ratio >= 0.9:
                    raise NeumannDivergence(f"measured contraction {ratio:.3f} >= 0.9")
            h = new
            if step <= tol * max(_fprime0(h, self.far_modes), 1e-300):
                break
            prev_step = step
        return h, max(ratio, a_priori)


def eliminate(X, w, sigma, params, eps=None):
    """Find u on far modes with I^-_sigma (id+u)^* X = 0 (to newton_tol).

    ``params`` is a RenormParams.  With ``eps`` given and ``params.strict``,
    the perturbation must satisfy ||X - w||'_rho < eps.
    """
    gp = params.gevrey
    w = np.asarray(w, dtype=float)
    f = X - w
    rho, s, nu = gp.rho, gp.s, gp.nu
    size = norm_Fprime(f, s, rho)
    if eps is not None and params.strict and not size < eps:
        raise PreconditionViolated(f"||X-w||' = {size:.3e} >= eps = {eps:.3e}", step=0)
    E = _Eliminator(f, w, sigma)
    c = np.zeros_like(E.G0)
    history, iters, contraction = [], 0, 0.0
    if params.mode == "homotopy" and len(c):
        c = _homotopy(E, c, 1.0, 64, params)
    st = E.state(c)
    frozen = st if params.mode == "chord" else None
    while True:
        res = _fprime0(st["G"], E.far_modes)
        history.append(res)
        if res <= params.newton_tol:
            break
        if iters >= params.newton_max_iter:
            raise NoConvergence(iters, res, "elimination")
        lin = frozen if frozen is not None else st
        h, ratio = E.neumann_solve(-st["G"], lin, params.neumann_tol, params.neumann_max_terms)
        contraction = max(contraction, ratio)
        c = c - h
        iters += 1
        st = E.state(c)
    u = E.field_from_far(c)
    Y = FourierField(E.d, E.K, E.grid.ball, st["coeffs"], dropped=st["dropped"]) + w
    # bookkeeping against the stated a priori bounds
    b = gp.beta
    rho1 = (rho - nu) / b
    rho2 = (rho1 - nu) / b - nu
    cm1 = c_nu_minus_one(s, nu, E.d)
    far_X = project(f, "far", sigma, w)
    u_ok = norm_Fprime(u, s, rho1) <= 8 * cm1 / sigma * norm_F(far_X, s, rho) * (1 + 1e-12) + 1e-300
    y_ok = rho2 <= 0 or norm_F(Y - w, s, rho2) <= 7 * size * (1 + 1e-12) + 1e-300
    return EliminationResult(u, Y, iters, history[-1], bool(u_ok), tuple(history),
                             contraction, bool(y_ok), st["dropped"])


def _homotopy_rhs(E, c, params):
    st = E.state(c)
    h, _ = E.neumann_solve(E.G0, st, params.neumann_tol, params.neumann_max_terms)
    # DG(u) du/dt = -G(0) is D_w du/dt = G(0) + N du/dt
    return h


def _homotopy(E, c, t_end, n_steps, params):
    """Classical RK4 on du/dt = -DG(u)^{-1} G(0) from t = 0 to t_end."""
    dt = t_end / n_steps
    for _ in range(n_steps):
        k1 = _homotopy_rhs(E, c, params)
        k2 = _homotopy_rhs(E, c + 0.5 * dt * k1, params)
        k3 = _homotopy_rhs(E, c + 0.5 * dt * k2, params)
        k4 = _homotopy_rhs(E, c + dt * k3, params)
        c = c + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return c


def homotopy_path(X, w, sigma, params, t_end=0.5, n_steps=32):
    """u_t and I^- U_t(X) at t = t_end along the elimination homotopy."""
    E = _Eliminator(X - np.asarray(w, dtype=float), w, sigma)
    c = np.zeros_like(E.G0)
    if len(c):
        c = _homotopy(E, c, t_end, n_steps, params)
    st = E.state(c)
    return E.field_from_far(c), E.field_from_far(st["G"]), E.field_from_far(E.G0)


def pullback(X, u, N=None):
    """(id+u)^* X = (I+Du)^{-1} X o (id+u), evaluated on a grid."""
    if len(u) == 0:
        return X
    K = X.trunc
    g = _Grid(X.dim, K, N if N is not None else grid_size(max(K, u.trunc)))
    uv, Du = _eval_with_jacobian(u, g.pts)
    xv, _ = _eval_with_jacobian(X, g.pts + uv)
    A = np.eye(X.dim)[None] + Du
    vals = _solve_pointwise(A, xv[:, :, None])[:, :, 0]
    coeffs, dropped = g.from_grid(vals)
    return FourierField(X.dim, K, g.ball, coeffs, dropped=dropped)


# ------------------------------------------------------------- schedules

@dataclass(frozen=True)
class StepData:
    """Arithmetic data the driver consumes for one step."""
    steps: list
    sigmas: list
    eps: list
    A: list
    A_formula: list
    phi: list
    rho: list
    B_script: list
    C1: float
    standins: dict


def _phi(params, step, eps_prev, eps_cur):
    if params.phi_rule == "one":
        return 1.0
    gp = params.gevrey
    d = len(step.P)
    val = (7 * (d + 1) * abs(step.eta) * opnorm1(step.T) * (1 + gp.s ** gp.s / gp.delta_margin ** gp.s)
           * eps_prev / (eps_cur * params.theta))
    return max(val, 1.0)


def prepare_schedule(freq, params, N, exp=None):
    """Matrix sequence, sigma_n, eps_n, A_n, phi_n and the rho_n recursion for N steps."""
    gp = params.gevrey
    if exp is None:
        exp = mcf.expansion(freq, n_max=N + 4)
    if len(exp) < N + 3:
        raise NotRenormalizable("expansion too short for the requested number of steps", step=len(exp))
    times = mcf.stopping_times(exp, N + 2)
    if params.times == "modified":
        times = mcf.modified_times(times, params.ell)
        exp = mcf.expansion(freq, t_max=times[-1])
    steps = mcf.matrix_sequence(freq, times, exp)
    si = mcf.standins(steps)
    C1 = si["C1"]
    sigmas = [mcf.sigma_schedule(steps, n, C1, freq.mu) for n in range(N + 2)]
    eps = [epsilon_threshold(sigmas[n], gp.nu, float(np.abs(steps[n].omega_n).sum()), gp.s, freq.d)
           for n in range(N + 2)]
    A, A_formula, phi, rho, Bs = [], [], [], [gp.rho], []
    b = gp.beta
    c = gp.nu * (1 + b + b * b)
    total, prod = 0.0, 1.0
    for n in range(1, N + 1):
        rates = mcf.cone_rates(steps[n - 1], steps[n], sigmas[n - 1], sigmas[n], K_search=max(50, gp.K))
        A.append(rates.A_bf)
        A_formula.append(rates.A)
        ph = _phi(params, steps[n], eps[n - 1], eps[n])
        phi.append(ph)
        a = b * b * rates.A_bf ** (1 / gp.s)
        rho.append((rho[-1] - c) / a - gp.delta_margin - math.log(ph))
        prod *= a
        total += prod * (gp.delta_margin + c / a + math.log(ph))
        Bs.append(total)
    return StepData(steps, sigmas, eps, A, A_formula, phi, rho, Bs, C1, si)


def schedule_report(freq, params, N, exp=None):
    """Rows n, t_n, sigma_n, eps_n, A_n, phi_n, B_n, forecast rho_n and the Brjuno-side sum."""
    sd = prepare_schedule(freq, params, N, exp)
    s = params.gevrey.s
    rows, brj = [], 0.0
    for n in range(N + 1):
        st, nxt = sd.steps[n], sd.steps[n + 1]
        brj += math.exp(-st.Delta_n / s) * nxt.t
        rows.append({
            "n": n, "t": st.t, "sigma": sd.sigmas[n], "eps": sd.eps[n],
            "A": sd.A[n - 1] if n else math.nan,
            "A_formula": sd.A_formula[n - 1] if n else math.nan,
            "phi": sd.phi[n - 1] if n else math.nan,
            "B_script": sd.B_script[n - 1] if n else 0.0,
            "rho": sd.rho[n], "brjuno_partial": brj,
        })
    return rows


# ----------------------------------------------------------------- driver

def _state(n, X, sd, params, diagnostics=None):
    gp = params.gevrey
    w = np.asarray(sd.steps[n].omega_n, dtype=float)
    rho_n = sd.rho[n]
    f = X - w
    residual = norm_Fprime(f, gp.s, max(rho_n, 0.0))
    diag = {"residual_eval": norm_Fprime(f, gp.s, 0.0), "mean_drift": float(np.abs(X.mean() - w).sum()),
            "B_script": sd.B_script[n - 1] if n else 0.0, "dropped_mass": X.dropped}
    diag.update(diagnostics or {})
    ok = rho_n > 0 and residual < sd.eps[n] * params.theta
    return RenormState(n, X, w, rho_n, sd.sigmas[n], sd.eps[n], residual, ok, diag)


def renorm_step(state, sd, params):
    """One application of R_{n+1} = T_{n+1} o U_n to state n.

    Returns (next_state, elimination_result).
    """
    n = state.n
    if params.strict and not state.renormalizable:
        raise NotRenormalizable(
            f"step {n}: residual {state.residual:.3e} vs eps*theta {state.eps_n * params.theta:.3e},"
            f" rho_n = {state.rho_n:.3e}", step=n)
    gp_n = replace(params.gevrey, rho=max(state.rho_n, 1e-12),
                   nu=min(params.gevrey.nu, 0.999 * max(state.rho_n, 1e-12) / (1 + params.gevrey.beta + params.gevrey.beta ** 2)))
    el = eliminate(state.X, state.omega_n, state.sigma_n, replace(params, gevrey=gp_n))
    nxt = sd.steps[n + 1]
    X1 = pushforward_linear(el.Y, nxt.T, nxt.eta)
    diag = {"far_residual": el.far_residual, "iters": el.iters,
            "u_bound_ok": el.u_norm_bound_ok, "y_bound_ok": el.y_bound_ok,
            "elim_dropped": el.dropped, "pushforward_dropped": X1.dropped}
    return _state(n + 1, X1, sd, params, diag), el


def run(X0, freq, params, N, exp=None, sd=None, callback=None):
    """Iterate N renormalization steps from X0.

    Returns (states, eliminations, schedule).  In strict mode a state that
    fails the renormalizability test stops the run with NotRenormalizable.
    ``callback(state, elim)`` sees every state as it is produced (elim is
    None for the initial state).
    """
    sd = prepare_schedule(freq, params, N, exp) if sd is None else sd
    state = _state(0, X0, sd, params)
    if params.strict and not state.renormalizable:
        raise PreconditionViolated(
            f"||X0 - omega||' = {state.residual:.3e} not below eps_0*theta = {state.eps_n * params.theta:.3e}",
            step=0)
    states, elims = [state], []
    if callback:
        callback(state, None)
    for _ in range(N):
        state, el = renorm_step(state, sd, params)
        states.append(state)
        elims.append(el)
        if callback:
            callback(state, el)
    return states, elims, sd


# ------------------------------------------------------------ test fields

SYNTHETIC_MODES = ((1, 0), (0, 1), (1, -1), (2, 1), (2, -1), (3, -2), (5, -3))


def synthetic_field(omega, amplitude, K, seed=0, modes=None):
    """X0 = (id+v)^* omega for a seeded low-mode v, scaled so ||X0 - omega||'_0 ~ amplitude.

    The rotation vector of X0 is omega and (id+v)^{-1} linearizes it,
    which makes the pair (X0, v) a test case with a known answer.
    Returns (X0, v).
    """
    omega = np.asarray(omega, dtype=float)
    d = len(omega)
    if modes is None:
        modes = [k + (0,) * (d - 2) for k in SYNTHETIC_MODES]
        if d >= 3:
            modes += [(1, 0, -1) + (0,) * (d - 3), (0, 1, 1) + (0,) * (d - 3)]
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=(len(modes), d)) + 1j * rng.normal(size=(len(modes), d))
    v = FourierField(d, K, np.array(modes), coeffs)
    base = FourierField.constant(omega, K)
    if amplitude == 0:
        return base, FourierField.zeros(d, K)
    v = v.scale(amplitude / norm_Fprime(pullback(base, v.scale(1e-8)) - omega, 1.0, 0.0) * 1e-8)
    return pullback(base, v), v
