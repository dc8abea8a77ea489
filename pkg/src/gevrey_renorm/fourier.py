"""Truncated Fourier representation of real vector fields on T^d.

A field is stored sparsely: an integer array of modes (lexicographic order,
|k|_1 <= K) and a complex coefficient array with one row per mode.  Fields
are treated as immutable values; every operation returns a new field and
records the l1 mass it had to discard in ``dropped``.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import signal, special

from .errors import AliasingBudgetExceeded, InsufficientModes, NotUnimodular
from .lattice import int_inverse, l1_ball

PRUNE = 1e-300
OVERSAMPLE = 4


def beta(d, s):
    return d ** ((s - 1) / s) * s


@dataclass(frozen=True)
class GevreyParams:
    s: float
    rho: float
    nu: float
    delta_margin: float
    K: int
    d: int = 2

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("Gevrey exponent s must be >= 1")
        if not (self.rho > 0 and self.nu > 0 and self.delta_margin > 0):
            raise ValueError("rho, nu and delta must be positive")
        if not self.nu < self.rho / (1 + self.beta + self.beta ** 2):
            raise ValueError("nu must satisfy nu < rho/(1+beta+beta^2)")
        if self.K < 1:
            raise ValueError("truncation K must be >= 1")

    @property
    def beta(self):
        return beta(self.d, self.s)

    @classmethod
    def with_defaults(cls, s, rho, K, d=2, nu=None, delta_margin=None):
        b = beta(d, s)
        nu = rho / (2 * (1 + b + b * b)) if nu is None else nu
        delta_margin = 0.05 * rho if delta_margin is None else delta_margin
        return cls(s, rho, nu, delta_margin, K, d)


@dataclass(frozen=True)
class NormReport:
    f_norm: float
    f_prime_norm: float
    c_nu: float
    decay_fit: float


def _keys(modes, K):
    base = 2 * K + 1
    w = base ** np.arange(modes.shape[1] - 1, -1, -1, dtype=np.int64)
    return (modes + K) @ w


class FourierField:
    """Real vector (or scalar) field f(x) = sum_k f_k e^{ik.x} on T^d."""

    __slots__ = ("dim", "trunc", "modes", "coeffs", "dropped")

    def __init__(self, dim, trunc, modes, coeffs, dropped=0.0, symmetrize=True):
        modes = np.asarray(modes, dtype=np.int64).reshape(-1, dim)
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.ndim == 1:
            coeffs = coeffs.reshape(len(modes), -1)
        if len(modes) and np.abs(modes).sum(axis=1).max() > trunc:
            raise ValueError("mode outside the truncation ball")
        # merge duplicates and sort lexicographically
        if len(modes):
            keys = _keys(modes, trunc)
            uk, inv = np.unique(keys, return_inverse=True)
            merged = np.zeros((len(uk), coeffs.shape[1]), dtype=np.complex128)
            np.add.at(merged, inv.ravel(), coeffs)
            first = np.zeros(len(uk), dtype=np.int64)
            first[inv.ravel()] = np.arange(len(modes))
            modes, coeffs = modes[first], merged
            if symmetrize:
                modes, coeffs = _symmetrize(modes, coeffs, trunc)
            keep = np.abs(coeffs).max(axis=1) > PRUNE
            modes, coeffs = modes[keep], coeffs[keep]
        modes.setflags(write=False)
        coeffs.setflags(write=False)
        self.dim = int(dim)
        self.trunc = int(trunc)
        self.modes = modes
        self.coeffs = coeffs
        self.dropped = float(dropped)

    # -- constructors
    @classmethod
    def zeros(cls, dim, trunc, ncomp=None):
        ncomp = dim if ncomp is None else ncomp
        return cls(dim, trunc, np.zeros((0, dim)), np.zeros((0, ncomp)))

    @classmethod
    def constant(cls, c, trunc):
        c = np.asarray(c, dtype=float)
        return cls(len(c), trunc, np.zeros((1, len(c))), c[None, :].astype(complex))

    @classmethod
    def from_dict(cls, dim, trunc, table, symmetrize=True):
        modes = list(table.keys())
        vals = [np.atleast_1d(np.asarray(v, dtype=complex)) for v in table.values()]
        return cls(dim, trunc, np.array(modes).reshape(-1, dim), np.array(vals), symmetrize=symmetrize)

    @classmethod
    def from_grid(cls, values, K):
        """Coefficients |k|_1 <= K of real samples on a uniform grid.

        ``values`` has shape (ncomp, N, ..., N).  The l1 mass of resolved
        modes beyond the ball is returned in ``dropped``.
        """
        values = np.asarray(values, dtype=float)
        d = values.ndim - 1
        N = values.shape[1]
        if 2 * K >= N:
            raise ValueError("grid too coarse for the requested truncation")
        spec = np.fft.fftn(values, axes=tuple(range(1, d + 1))) / N ** d
        ball = l1_ball(K, d)
        idx = tuple((ball % N).T)
        coeffs = spec[(slice(None),) + idx].T
        total = np.abs(spec).sum()
        dropped = max(float(total - np.abs(coeffs).sum()), 0.0)
        return cls(d, K, ball, coeffs, dropped=dropped)

    # -- basic views
    @property
    def ncomp(self):
        return self.coeffs.shape[1]

    def __len__(self):
        return len(self.modes)

    def as_dict(self):
        return {tuple(int(v) for v in k): c.copy() for k, c in zip(self.modes, self.coeffs)}

    def coeff(self, k):
        k = np.asarray(k, dtype=np.int64)
        if np.abs(k).sum() > self.trunc:
            return np.zeros(self.ncomp, dtype=complex)
        hit = np.nonzero((self.modes == k).all(axis=1))[0]
        return self.coeffs[hit[0]].copy() if len(hit) else np.zeros(self.ncomp, dtype=complex)

    def mean(self):
        return self.coeff(np.zeros(self.dim, dtype=np.int64)).real

    def with_trunc(self, K):
        keep = np.abs(self.modes).sum(axis=1) <= K
        lost = float(np.abs(self.coeffs[~keep]).sum())
        return FourierField(self.dim, K, self.modes[keep], self.coeffs[keep],
                            dropped=self.dropped + lost, symmetrize=False)

    def _binary(self, other, sign):
        K = max(self.trunc, other.trunc)
        modes = np.concatenate([self.modes, other.modes])
        coeffs = np.concatenate([self.coeffs, sign * other.coeffs])
        return FourierField(self.dim, K, modes, coeffs, symmetrize=False)

    def __add__(self, other):
        if not isinstance(other, FourierField):
            other = FourierField.constant(np.broadcast_to(other, (self.ncomp,)), self.trunc)
        return self._binary(other, 1)

    def __sub__(self, other):
        if not isinstance(other, FourierField):
            other = FourierField.constant(np.broadcast_to(other, (self.ncomp,)), self.trunc)
        return self._binary(other, -1)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c):
        return FourierField(self.dim, self.trunc, self.modes, self.coeffs * c, symmetrize=False)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def map_values(self, A):
        """Apply a constant real matrix to every coefficient: v -> A v."""
        A = np.asarray(A, dtype=float)
        return FourierField(self.dim, self.trunc, self.modes, self.coeffs @ A.T, symmetrize=False)

    def component(self, i):
        return FourierField(self.dim, self.trunc, self.modes, self.coeffs[:, i:i + 1], symmetrize=False)

    @classmethod
    def stack(cls, comps):
        K = max(c.trunc for c in comps)
        d = comps[0].dim
        table = {}
        n = len(comps)
        for i, c in enumerate(comps):
            for k, v in zip(map(tuple, c.modes), c.coeffs[:, 0]):
                table.setdefault(k, np.zeros(n, dtype=complex))[i] += v
        if not table:
            return cls.zeros(d, K, n)
        return cls(d, K, np.array(list(table.keys())), np.array(list(table.values())), symmetrize=False)

    def is_real(self, tol=0.0):
        """Check coefficient table closes under k -> -k with conjugate values."""
        lookup = {tuple(k): c for k, c in zip(self.modes.tolist(), self.coeffs)}
        zero = np.zeros(self.ncomp, dtype=complex)
        for k, c in lookup.items():
            partner = lookup.get(tuple(-v for v in k), zero)
            if np.abs(partner - np.conj(c)).max() > tol:
                return False
        return True

    # -- evaluation
    def to_dense(self, K=None):
        K = self.trunc if K is None else K
        box = np.zeros((self.ncomp,) + (2 * K + 1,) * self.dim, dtype=complex)
        idx = tuple((self.modes + K).T)
        box[(slice(None),) + idx] = self.coeffs.T
        return box

    def to_grid(self, N):
        if 2 * self.trunc >= N:
            raise ValueError("grid too coarse for the truncation")
        spec = np.zeros((self.ncomp,) + (N,) * self.dim, dtype=complex)
        idx = tuple((self.modes % N).T)
        spec[(slice(None),) + idx] = self.coeffs.T
        vals = np.fft.ifftn(spec, axes=tuple(range(1, self.dim + 1))) * N ** self.dim
        return vals.real

    def evaluate(self, points, chunk=2048):
        """Direct mode sum at arbitrary points of shape (n, d); returns (n, ncomp)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((len(pts), self.ncomp))
        if len(self.modes) == 0:
            out[:] = 0.0
            return out
        kf = self.modes.astype(float)
        for i in range(0, len(pts), chunk):
            ph = np.exp(1j * (pts[i:i + chunk] @ kf.T))
            out[i:i + chunk] = (ph @ self.coeffs).real
        return out

    def __call__(self, points):
        return self.evaluate(points)


def _symmetrize(modes, coeffs, K):
    """Replace c_k by (c_k + conj(c_{-k}))/2, adding missing partners."""
    keys = _keys(modes, K)
    nkeys = _keys(-modes, K)
    missing = ~np.isin(nkeys, keys)
    if missing.any():
        modes = np.concatenate([modes, -modes[missing]])
        coeffs = np.concatenate([coeffs, np.zeros((missing.sum(), coeffs.shape[1]), dtype=complex)])
        keys = _keys(modes, K)
        order = np.argsort(keys)
        modes, coeffs, keys = modes[order], coeffs[order], keys[order]
    pos = np.searchsorted(keys, _keys(-modes, K))
    coeffs = 0.5 * (coeffs + np.conj(coeffs[pos]))
    return modes, coeffs


# ------------------------------------------------------------------ norms

def _abs_k(f):
    return np.abs(f.modes).sum(axis=1).astype(float)


def mode_weights(f, s, rho):
    return np.exp(rho * _abs_k(f) ** (1.0 / s))


def norm_F(f, s, rho):
    """sum_k |f_k|_1 e^{rho |k|^{1/s}}."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if len(f) == 0:
        return 0.0
    return float(np.sum(np.abs(f.coeffs).sum(axis=1) * mode_weights(f, s, rho)))


def norm_Fprime(f, s, rho):
    """sum_k (1+|k|)|f_k|_1 e^{rho |k|^{1/s}}."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if len(f) == 0:
        return 0.0
    return float(np.sum((1 + _abs_k(f)) * np.abs(f.coeffs).sum(axis=1) * mode_weights(f, s, rho)))


def derivative(f, alpha):
    alpha = np.asarray(alpha, dtype=np.int64)
    if np.any(alpha < 0):
        raise ValueError("multi-index must be non-negative")
    factor = np.prod((1j * f.modes) ** alpha, axis=1)
    return FourierField(f.dim, f.trunc, f.modes, f.coeffs * factor[:, None], symmetrize=False)


def gradient(f):
    """Jacobian Df as a list of d fields, entry j being the partial derivative d_j f."""
    return [derivative(f, np.eye(f.dim, dtype=np.int64)[j]) for j in range(f.dim)]


def far_mask(modes, sigma, w):
    w = np.asarray(w, dtype=float)
    k1 = np.abs(modes).sum(axis=1)
    return np.abs(modes @ w) > sigma * k1


def project(f, which, sigma=None, w=None):
    """Keep the mean, the non-mean, the resonant (|w.k| <= sigma|k|) or the far modes."""
    zero = (f.modes == 0).all(axis=1)
    if which == "mean":
        keep = zero
    elif which == "non_mean":
        keep = ~zero
    elif which in ("resonant", "far"):
        if sigma is None or sigma <= 0 or w is None:
            raise ValueError("sigma > 0 and w are required for resonant/far projections")
        far = far_mask(f.modes, sigma, w)
        keep = far if which == "far" else ~far
    else:
        raise ValueError(f"unknown projection {which!r}")
    return FourierField(f.dim, f.trunc, f.modes[keep], f.coeffs[keep], symmetrize=False)


# ------------------------------------------------------- products and calculus

def multiply_convolve(f, g, K=None):
    """Truncated product (fg)_k = sum_{p+q=k} f_p g_q.

    Scalar fields multiply any field componentwise; two fields with the same
    number of components multiply componentwise.
    """
    if f.dim != g.dim:
        raise ValueError("dimension mismatch")
    K = max(f.trunc, g.trunc) if K is None else K
    if f.ncomp != g.ncomp and 1 not in (f.ncomp, g.ncomp):
        raise ValueError("component mismatch")
    n = max(f.ncomp, g.ncomp)
    if len(f) == 0 or len(g) == 0:
        return FourierField.zeros(f.dim, K, n)
    Kf, Kg = f.trunc, g.trunc
    A, B = f.to_dense(), g.to_dense()
    out = []
    for i in range(n):
        a = A[min(i, f.ncomp - 1)]
        b = B[min(i, g.ncomp - 1)]
        out.append(signal.convolve(a, b, method="direct" if a.size * b.size < 4e6 else "fft"))
    full = np.array(out)
    Kfull = Kf + Kg
    ball_full = l1_ball(Kfull, f.dim)
    vals = full[(slice(None),) + tuple((ball_full + Kfull).T)].T
    inside = np.abs(ball_full).sum(axis=1) <= K
    lost = float(np.abs(vals[~inside]).sum())
    return FourierField(f.dim, K, ball_full[inside], vals[inside], dropped=lost, symmetrize=False)


def apply_jacobian(f, h):
    """(Df) h, i.e. ((Df)h)_k = sum_{p+q=k} (i p.h_q) f_p."""
    if f.dim != h.dim or h.ncomp != f.dim:
        raise ValueError("h must be a vector field on the same torus")
    K = max(f.trunc, h.trunc)
    total = FourierField.zeros(f.dim, K, f.ncomp)
    lost = 0.0
    for j, dfj in enumerate(gradient(f)):
        term = multiply_convolve(dfj, h.component(j), K)
        lost += term.dropped
        total = total + term
    return FourierField(f.dim, K, total.modes, total.coeffs, dropped=lost, symmetrize=False)


def grid_size(K, oversample=OVERSAMPLE):
    return oversample * (K + 1)


def grid_points(N, d):
    x = 2 * np.pi * np.arange(N) / N
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def compose(f, u, N=None, tol=1e-9, n_check=32, seed=0):
    """Coefficients of x -> f(x + u(x)) by grid sampling and a DFT.

    The result is checked against a direct evaluation at ``n_check`` random
    points; a mismatch above ``tol * max(1, ||f||_F0)`` raises.
    """
    if u.ncomp != f.dim:
        raise ValueError("u must be a vector field on the torus of f")
    K = f.trunc
    N = grid_size(max(K, u.trunc)) if N is None else N
    if N < grid_size(K):
        raise ValueError("grid smaller than oversample*(K+1)")
    if len(u) == 0:
        return f
    pts = grid_points(N, f.dim)
    upts = u.to_grid(N).reshape(f.dim, -1).T
    vals = f.evaluate(pts + upts)
    grid = vals.T.reshape((f.ncomp,) + (N,) * f.dim)
    out = FourierField.from_grid(grid, K)
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 2 * np.pi, size=(n_check, f.dim))
    err = np.abs(out.evaluate(y) - f.evaluate(y + u.evaluate(y))).max()
    if err > tol * max(1.0, norm_F(f, 1, 0.0)):
        raise AliasingBudgetExceeded(f"composition residual {err:.3e} above tolerance")
    return out


def linear_remap(f, mode_map, value_map, K=None):
    """Send mode k to mode_map k and value v to value_map v.

    With ``K`` given, modes landing outside the ball are dropped and their
    mass reported; otherwise the truncation grows to fit.
    """
    new_modes = f.modes @ np.asarray(mode_map, dtype=np.int64).T
    new_coeffs = f.coeffs @ np.asarray(value_map, dtype=float).T
    norms = np.abs(new_modes).sum(axis=1)
    if K is None:
        K = int(norms.max()) if len(norms) else f.trunc
        K = max(K, 1)
    keep = norms <= K
    lost = float(np.abs(new_coeffs[~keep]).sum())
    return FourierField(f.dim, K, new_modes[keep], new_coeffs[keep],
                        dropped=f.dropped + lost, symmetrize=False)


def pushforward_linear(f, T, eta, K=None):
    """eta (T^{-1})^* f: mode k -> T^{-T} k, value v -> eta T v."""
    T = np.asarray(T)
    Tinv = int_inverse(T)
    K = f.trunc if K is None else K
    return linear_remap(f, Tinv.T, eta * T.astype(float), K=K)


def unimodular_check(T):
    try:
        int_inverse(T)
    except NotUnimodular:
        return False
    return True


# --------------------------------------------------------------- decay fit

def shell_maxima(f):
    """Largest coefficient size on each l1 shell |k| = m >= 1 present in f."""
    if len(f) == 0:
        return np.array([]), np.array([])
    k1 = np.abs(f.modes).sum(axis=1)
    size = np.abs(f.coeffs).sum(axis=1)
    sel = (k1 > 0) & (size > 0)
    shells = np.unique(k1[sel])
    mx = np.array([size[sel & (k1 == m)].max() for m in shells])
    return shells, mx


def decay_fit(f, s):
    """Empirical Gevrey radius: slope of log|f_k| against -|k|^{1/s} on shell maxima."""
    k1 = np.abs(f.modes).sum(axis=1)
    nz = (k1 > 0) & (np.abs(f.coeffs).sum(axis=1) > 0)
    shells, mx = shell_maxima(f)
    if nz.sum() < 3 or len(shells) < 2:
        raise InsufficientModes("need at least 3 non-mean modes on 2 or more shells")
    x = -shells.astype(float) ** (1.0 / s)
    slope = np.polyfit(x, np.log(mx), 1)[0]
    return max(float(slope), 0.0)


# ------------------------------------------------------------ lattice sums

def shell_count(d, m):
    """Number of k in Z^d with |k|_1 = m."""
    if m == 0:
        return 1
    return sum(2 ** j * math.comb(d, j) * math.comb(m - 1, j - 1) for j in range(1, min(d, m) + 1))


def _shell_poly(d):
    """Polynomial in m equal to shell_count(d, m) for m >= 1 (ascending coefficients)."""
    poly = np.polynomial.Polynomial([0.0])
    for j in range(1, d + 1):
        term = np.polynomial.Polynomial([2.0 ** j * math.comb(d, j) / math.factorial(j - 1)])
        for i in range(1, j):
            term = term * np.polynomial.Polynomial([-i, 1.0])
        poly = poly + term
    return poly


def _tail_integral(poly, s, nu, a):
    """integral_a^inf poly(x) e^{-nu x^{1/s}} dx via incomplete gamma functions."""
    z = nu * a ** (1.0 / s)
    total = 0.0
    for j, c in enumerate(poly.coef):
        if c == 0:
            continue
        sh = s * (j + 1)
        total += c * s * nu ** (-sh) * special.gammaincc(sh, z) * special.gamma(sh)
    return total


@lru_cache(maxsize=256)
def lattice_exp_sum(s, nu, d, tol=1e-13, m_cap=2 * 10 ** 8):
    """sum_{k != 0} e^{-nu |k|^{1/s}} with the tail bracketed by integrals.

    Returns (value, error_bound).
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    poly = _shell_poly(d)
    peak = (s * (d - 1) / nu) ** s if d > 1 else 0.0
    total, m0, chunk = 0.0, 1, 100000
    while True:
        m = np.arange(m0, m0 + chunk, dtype=float)
        terms = poly(m) * np.exp(-nu * m ** (1.0 / s))
        total += float(terms.sum())
        m_last = m0 + chunk - 1
        g_last = terms[-1]
        if m_last > peak and g_last <= tol * max(total, 1e-300):
            break
        if total == 0.0 and m_last > peak:
            break
        m0 += chunk
        if m0 > m_cap:
            break
        chunk = min(chunk * 2, 10 ** 7)
    hi = _tail_integral(poly, s, nu, m_last)
    lo = _tail_integral(poly, s, nu, m_last + 1)
    return total + 0.5 * (hi + lo), 0.5 * abs(hi - lo)


def c_nu(s, nu, d):
    """C_nu = sum_{k in Z^d} e^{-nu |k|^{1/s}}."""
    return 1.0 + lattice_exp_sum(float(s), float(nu), int(d))[0]


def c_nu_minus_one(s, nu, d):
    """C_nu - 1 computed without cancellation."""
    return lattice_exp_sum(float(s), float(nu), int(d))[0]


def norm_report(f, params):
    try:
        fit = decay_fit(f, params.s)
    except InsufficientModes:
        fit = float("nan")
    return NormReport(norm_F(f, params.s, params.rho), norm_Fprime(f, params.s, params.rho),
                      c_nu(params.s, params.nu, params.d), fit)


# ------------------------------------------------------- single-mode C norms

def _log_series(x, s):
    """log sum_{n>=0} x^n / (n!)^s for x >= 0."""
    if x <= 0:
        return 0.0
    n_peak = x ** (1.0 / s)
    n = np.arange(0, int(3 * n_peak + 60))
    logs = n * math.log(x) - s * special.gammaln(n + 1)
    return float(special.logsumexp(logs))


def mode_c_norm(k, s, rho):
    """||e^{ik.x}||_{C_{s,rho}} = prod_j sum_n (rho^s |k_j|)^n / (n!)^s."""
    return math.exp(sum(_log_series(rho ** s * abs(int(kj)), s) for kj in k))


def c_norm_majorant(f, s, rho, prime=False):
    """Upper bound sum_k (1 + |k| if prime) |f_k| ||e^{ik.x}||_C of the C-norm."""
    if len(f) == 0:
        return 0.0
    c = np.array([mode_c_norm(k, s, rho) for k in f.modes])
    size = np.abs(f.coeffs).sum(axis=1)
    weight = 1.0 + (np.abs(f.modes).sum(axis=1) if prime else 0.0)
    return float(np.sum(weight * size * c))


def c_norm_minorant(f, s, rho, prime=False):
    """Lower bound on the C-norm from |(d^alpha g)_k| <= sup|d^alpha g|.

    Per component i: max_k |f_{k,i}| c(k), plus max_k |k_j||f_{k,i}| c(k) for
    each direction j when prime.
    """
    if len(f) == 0:
        return 0.0
    c = np.array([mode_c_norm(k, s, rho) for k in f.modes])
    weighted = np.abs(f.coeffs) * c[:, None]
    low = float(weighted.max(axis=0).sum())
    if prime:
        for j in range(f.dim):
            low += float((np.abs(f.modes[:, j])[:, None] * weighted).max(axis=0).sum())
    return low
