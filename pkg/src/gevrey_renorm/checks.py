"""Randomized checks of the norm lemmas on truncated fields.

Each suite returns a SuiteResult.  A check counts as a violation only when
the inequality is shown to fail; for the C-norm inclusion where the C-norm
is only bracketed, an undecided case is counted separately.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .fourier import (FourierField, beta, c_nu, c_norm_majorant, c_norm_minorant,
                      derivative, mode_c_norm, norm_F, norm_Fprime, project,
                      pushforward_linear)
from .lattice import int_inverse, l1_ball, opnorm1

REL = 1e-12


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    violations: int = 0
    undecided: int = 0
    worst_ratio: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.violations == 0

    def record(self, lhs, rhs, note=None):
        self.checks += 1
        ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        self.worst_ratio = max(self.worst_ratio, ratio)
        if lhs > rhs * (1 + REL) + 1e-300:
            self.violations += 1
            if note and len(self.notes) < 5:
                self.notes.append(note)


def random_field(rng, d=2, K=8, s=1.0, rho=1.0, n_modes=12, ncomp=None):
    """Real field with n_modes random modes and coefficients ~ e^{-rho|k|^{1/s}}."""
    ncomp = d if ncomp is None else ncomp
    ball = l1_ball(K, d)
    pick = ball[rng.choice(len(ball), size=min(n_modes, len(ball)), replace=False)]
    size = np.exp(-rho * np.abs(pick).sum(axis=1) ** (1 / s))
    coeffs = (rng.normal(size=(len(pick), ncomp)) + 1j * rng.normal(size=(len(pick), ncomp)))
    return FourierField(d, K, pick, coeffs * size[:, None])


def _params(rng):
    s = float(rng.choice([1.0, 1.5, 2.0]))
    d = int(rng.choice([2, 3]))
    K = int(rng.integers(3, 9 if d == 2 else 6))
    rho = float(rng.uniform(0.2, 1.5))
    return s, d, K, rho


def check_decay(n=100, seed=0):
    res = SuiteResult("decay")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s, d, K, rho = _params(rng)
        f = random_field(rng, d, K, s, rho * rng.uniform(0.5, 1.5))
        total = norm_F(f, s, rho)
        for k, c in zip(f.modes, f.coeffs):
            res.record(float(np.abs(c).sum()), math.exp(-rho * np.abs(k).sum() ** (1 / s)) * total)
    return res


def check_cauchy(n=100, seed=1):
    res = SuiteResult("cauchy")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s, d, K, rho = _params(rng)
        f = random_field(rng, d, K, s, rho * rng.uniform(0.5, 1.5))
        rho1 = rho * rng.uniform(0.05, 0.95)
        b = beta(d, s)
        base = norm_F(f, s, rho)
        for order in (1, 2):
            for alpha in _alphas(d, order):
                lhs = norm_F(derivative(f, alpha), s, rho1)
                fact = math.prod(math.factorial(a) for a in alpha) ** s
                rhs = (b / (rho - rho1)) ** (s * order) * fact * base
                res.record(lhs, rhs, (s, d, rho, rho1, alpha))
    return res


def _alphas(d, order):
    out = []
    for idx in np.ndindex(*([order + 1] * d)):
        if sum(idx) == order:
            out.append(np.array(idx))
    return out


def check_mode_lemma(n=100, seed=2):
    """||e^{ik.x}||_C <= e^{beta rho |k|^{1/s}} on random single modes."""
    res = SuiteResult("single_mode")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s, d, K, rho = _params(rng)
        k = rng.integers(-K, K + 1, size=d)
        res.record(mode_c_norm(k, s, rho), math.exp(beta(d, s) * rho * np.abs(k).sum() ** (1 / s)))
    return res


def check_inclusions(n=100, seed=3):
    """Both parts of the C/F inclusion lemma, plain and primed norms."""
    res = SuiteResult("inclusions")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s, d, K, rho1 = _params(rng)
        f = random_field(rng, d, K, s, rng.uniform(0.5, 3.0), n_modes=8)
        nu = float(rng.uniform(0.05, 1.0))
        b = beta(d, s)
        rho = b * rho1 + nu
        # part 1: the C-norm is at most the majorant, which must not exceed F
        res.record(c_norm_majorant(f, s, rho1), norm_F(f, s, rho))
        res.record(c_norm_majorant(f, s, rho1, prime=True), norm_Fprime(f, s, rho))
        # part 2: F_{rho1} <= C_nu ||f||_{C_{rho1 + nu}}
        Cn = c_nu(s, nu, d)
        for prime in (False, True):
            lhs = (norm_Fprime if prime else norm_F)(f, s, rho1)
            low = c_norm_minorant(f, s, rho1 + nu, prime)
            high = c_norm_majorant(f, s, rho1 + nu, prime)
            res.checks += 1
            if lhs > Cn * high * (1 + REL):
                res.violations += 1
            elif lhs > Cn * low * (1 + REL):
                res.undecided += 1
            res.worst_ratio = max(res.worst_ratio, lhs / (Cn * high))
    return res


def check_rescale(n=100, seed=4, T=None, eta=None, w=None, sigma=None, K_search=50):
    """||T(I^+ - E)f||'_{rho'} <= |eta||T|(1 + s^s/delta^s)||f||_rho, rho' = rho/A^{1/s} - delta."""
    res = SuiteResult("rescale")
    rng = np.random.default_rng(seed)
    if T is None:
        gamma = (math.sqrt(5) - 1) / 2
        T = np.array([[-1, 1], [-2, 1]])
        eta = math.exp(0.5 * math.log(2 / (1 - gamma)))
        w = np.array([gamma, 1.0])
        sigma = gamma - 0.5
    T = np.asarray(T)
    d = len(T)
    Tinv_t = int_inverse(T).T
    ball = l1_ball(K_search, d)
    ball = ball[np.abs(ball).sum(axis=1) > 0]
    res_mask = np.abs(ball @ w) <= sigma * np.abs(ball).sum(axis=1)
    A = float((np.abs(ball[res_mask] @ Tinv_t.T).sum(axis=1) / np.abs(ball[res_mask]).sum(axis=1)).max())
    for _ in range(n):
        s = float(rng.choice([1.0, 1.5, 2.0]))
        rho = float(rng.uniform(0.2, 2.0))
        K = int(rng.integers(4, min(K_search, 16)))
        f = random_field(rng, d, K, s, rho * rng.uniform(0.5, 1.5), n_modes=20)
        g = project(f, "resonant", sigma, w) - project(f, "mean")
        delta = float(rng.uniform(0.01, 0.99)) * rho / A ** (1 / s)
        rho1 = rho / A ** (1 / s) - delta
        lhs = norm_Fprime(pushforward_linear(g, T, eta, K=10 ** 6), s, rho1)
        rhs = abs(eta) * opnorm1(T) * (1 + s ** s / delta ** s) * norm_F(f, s, rho)
        res.record(lhs, rhs, (s, rho, delta))
    res.notes.append({"A_bruteforce": A})
    return res


def check_cutoff(n=100, seed=5):
    res = SuiteResult("cutoff")
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s, d, K, rho = _params(rng)
        f = random_field(rng, d, K, s, rho)
        phi = float(math.exp(rng.uniform(0, rho)))
        nonmean = project(f, "non_mean")
        res.record(norm_Fprime(nonmean, s, rho - math.log(phi)), norm_Fprime(f, s, rho) / phi)
    return res


SUITES = {
    "decay": check_decay,
    "cauchy": check_cauchy,
    "single_mode": check_mode_lemma,
    "inclusions": check_inclusions,
    "rescale": check_rescale,
    "cutoff": check_cutoff,
}


def run_battery(n=100, names=None):
    names = list(SUITES) if names is None else names
    return {name: SUITES[name](n) for name in names}
