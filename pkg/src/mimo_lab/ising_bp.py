"""Random-field Ising chains: Cholesky factorization, gauge factors, cavity
recursions, transfer-matrix kernels and population dynamics.

A chain measure is written as

    P(tau) ∝ exp( sum_k f_k tau_k + sum_k J_k tau_k tau_{k+1} ),

with ``tau_k = ±1``.  BP on a chain is exact; messages are carried as cavity
fields ``u`` and combined with ``msg(x, J) = atanh(tanh(J) tanh(x))``, which is
evaluated as ``(lncosh(x+J) - lncosh(x-J))/2`` so it never overflows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numba
import numpy as np

from .quadrature import log_cosh

LN2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# factorization


@dataclass(frozen=True)
class ChainFactorization:
    """Bulk bidiagonal Cholesky factor of I + rho*R: diagonal l0, subdiagonal l1."""

    l0: float
    l1: float
    rho: float

    def bidiagonal(self, K: int) -> np.ndarray:
        lam = self.l0 * np.eye(K)
        i = np.arange(K - 1)
        lam[i + 1, i] = self.l1
        return lam


def cholesky_chain(rho: float) -> ChainFactorization:
    """l0^2 = (1 + sqrt(1 - 4 rho^2))/2, l1 = rho/l0; negative rho gives l1 < 0."""
    if abs(rho) > 0.5:
        raise ValueError(f"no real bidiagonal factorization for |rho| > 1/2 (rho={rho})")
    l0 = np.sqrt(0.5 * (1.0 + np.sqrt(max(0.0, 1.0 - 4.0 * rho * rho))))
    return ChainFactorization(float(l0), float(rho / l0), float(rho))


def open_chain_cholesky(rho: float, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact lower-bidiagonal Cholesky factor of the K x K matrix I + rho*R.

    Returns ``(l0, l1)`` of length K: l0 the diagonal, l1[k] the entry below
    l0[k] (l1[K-1] = 0).
    """
    if abs(rho) > 0.5:
        raise ValueError(f"|rho| must not exceed 1/2 (rho={rho})")
    l0 = np.empty(K)
    l1 = np.zeros(K)
    l0[0] = 1.0
    for k in range(K - 1):
        l1[k] = rho / l0[k]
        l0[k + 1] = np.sqrt(1.0 - l1[k] ** 2)
    return l0, l1


# ---------------------------------------------------------------------------
# gauge factors


def factor_weight(tau_k, tau_k1, tau_bar, eta, chi: float, fact: ChainFactorization):
    """Factor between neighbouring gauge spins given bond sign tau_bar and noise eta."""
    l0, l1 = fact.l0, fact.l1
    quad = (l0 * (tau_k - 1) + l1 * tau_bar * (tau_k1 - 1)) ** 2
    lin = np.sqrt(chi) * eta * (l0 * tau_k + l1 * tau_bar * tau_k1)
    return 0.5 * np.exp(-0.5 * chi * quad + lin)


def factor_coefficients(chi, l0, l1, tau_bar, eta):
    """Exponent of a factor as a*tau_k + c*tau_k1 + J*tau_k*tau_k1 + const (without -ln 2)."""
    sc = np.sqrt(chi)
    rho_k = l0 * l1
    a = chi * l0**2 + chi * rho_k * tau_bar + sc * l0 * eta
    c = chi * l1**2 + chi * rho_k * tau_bar + sc * l1 * tau_bar * eta
    J = -chi * rho_k * tau_bar
    const = -chi * (l0**2 + l1**2) - chi * rho_k * tau_bar
    return a, c, J, const


def message(x, J):
    """atanh(tanh(J) tanh(x)) in overflow-free form."""
    return 0.5 * (log_cosh(x + J) - log_cosh(x - J))


def forward_cavity(h_in, tau_bar, eta, chi: float, fact: ChainFactorization):
    """Cavity field on tau_{k+1} from the left, given the field h_in on tau_k."""
    a, c, J, _ = factor_coefficients(chi, fact.l0, fact.l1, tau_bar, eta)
    return c + message(h_in + a, J)


def backward_cavity(h_in, tau_bar, eta, chi: float, fact: ChainFactorization):
    """Cavity field on tau_k from the right, given the field h_in on tau_{k+1}."""
    a, c, J, _ = factor_coefficients(chi, fact.l0, fact.l1, tau_bar, eta)
    return a + message(h_in + c, J)


def gauge_chain(chi: float, l0, l1, tau_bar, eta):
    """Site fields, couplings and constants of an open gauge chain.

    Factor k couples tau_k and tau_{k+1}; the last factor must have l1 = 0 and
    acts on tau_K alone.  Arrays may carry a leading batch axis.
    """
    a, c, J, const = factor_coefficients(chi, l0, l1, tau_bar, eta)
    f = np.array(a, dtype=float, copy=True)
    f[..., 1:] += c[..., :-1]
    return f, J[..., :-1], const


def cavity_marginals(chi: float, fact: ChainFactorization, tau_bar, eta, K: int | None = None):
    """Magnetizations of the open gauge chain from forward and backward cavity passes.

    Factors 0..K-2 use the bulk constants; the terminal factor has l1 = 0.
    """
    tau_bar = np.asarray(tau_bar, dtype=float)
    eta = np.asarray(eta, dtype=float)
    K = len(eta) if K is None else K
    last = ChainFactorization(fact.l0, 0.0, 0.0)
    fwd = np.zeros(K)
    for k in range(K - 1):
        fwd[k + 1] = forward_cavity(fwd[k], tau_bar[k], eta[k], chi, fact)
    bwd = np.zeros(K)
    bwd[K - 1] = backward_cavity(0.0, 1.0, eta[K - 1], chi, last)
    for k in range(K - 2, -1, -1):
        bwd[k] = backward_cavity(bwd[k + 1], tau_bar[k], eta[k], chi, fact)
    return np.tanh(fwd + bwd)


def exact_chain_marginals(chi: float, fact: ChainFactorization, tau_bar, eta) -> np.ndarray:
    """Magnetizations of the same open gauge chain by exhaustive enumeration (K <= 16)."""
    eta = np.asarray(eta, dtype=float)
    K = len(eta)
    if K > 16:
        raise ValueError("exhaustive enumeration limited to K <= 16")
    last = ChainFactorization(fact.l0, 0.0, 0.0)
    spins = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
    logw = np.zeros(len(spins))
    for k in range(K - 1):
        logw += np.log(factor_weight(spins[:, k], spins[:, k + 1], tau_bar[k], eta[k], chi, fact))
    logw += np.log(factor_weight(spins[:, K - 1], 1.0, 1.0, eta[K - 1], chi, last))
    w = np.exp(logw - logw.max())
    return (w @ spins) / w.sum()


# ---------------------------------------------------------------------------
# transfer-matrix kernels


@numba.njit(cache=True)
def _lc(x):
    ax = abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LN2


@numba.njit(cache=True)
def _logz_open_row(f, J, shift):
    u = 0.0
    acc = 0.0
    K = f.shape[0]
    for k in range(K - 1):
        x = u + f[k]
        p = _lc(x + J[k])
        m = _lc(x - J[k])
        acc += LN2 + 0.5 * (p + m)
        u = 0.5 * (p - m)
    x = u + f[K - 1] + shift
    return acc + LN2 + _lc(x)


@numba.njit(cache=True)
def logz_open(f, J):
    """ln sum_tau exp(f.tau + sum J_k tau_k tau_{k+1}) for each row of f (B, K), J (B, K-1)."""
    B = f.shape[0]
    out = np.empty(B)
    for b in range(B):
        out[b] = _logz_open_row(f[b], J[b], 0.0)
    return out


@numba.njit(cache=True)
def logz_ring(f, J):
    """Periodic chain: J[:, K-1] couples tau_K and tau_1.

    Conditions on tau_1 = s: the rest is an open chain with extra fields s*J
    on its two ends.
    """
    B, K = f.shape
    out = np.empty(B)
    g = np.empty(K - 1)
    for b in range(B):
        vals = np.empty(2)
        for i in range(2):
            s = 1.0 if i == 0 else -1.0
            for k in range(K - 1):
                g[k] = f[b, k + 1]
            g[0] += s * J[b, 0]
            vals[i] = s * f[b, 0] + _logz_open_row(g, J[b, 1:K - 1], s * J[b, K - 1])
        hi = max(vals[0], vals[1])
        out[b] = hi + np.log(np.exp(vals[0] - hi) + np.exp(vals[1] - hi))
    return out


@numba.njit(cache=True)
def chain_moments(f, J):
    """Magnetizations <tau_k> and neighbour correlations <tau_k tau_{k+1}> of an open chain."""
    K = f.shape[0]
    u = np.zeros(K)
    v = np.zeros(K)
    for k in range(K - 1):
        x = u[k] + f[k]
        u[k + 1] = 0.5 * (_lc(x + J[k]) - _lc(x - J[k]))
    for k in range(K - 2, -1, -1):
        y = v[k + 1] + f[k + 1]
        v[k] = 0.5 * (_lc(y + J[k]) - _lc(y - J[k]))
    m = np.empty(K)
    for k in range(K):
        m[k] = np.tanh(u[k] + f[k] + v[k])
    pair = np.empty(K - 1)
    for k in range(K - 1):
        X = u[k] + f[k]
        Y = v[k + 1] + f[k + 1]
        P = J[k] + _lc(X + Y)
        M = -J[k] + _lc(X - Y)
        pair[k] = np.tanh(0.5 * (P - M))
    return m, pair


def brute_force_moments(f, J, ring: bool = False):
    """Exhaustive magnetizations, neighbour correlations and ln Z (oracle for small K)."""
    f = np.asarray(f, dtype=float)
    J = np.asarray(J, dtype=float)
    K = len(f)
    if K > 20:
        raise ValueError("exhaustive enumeration limited to K <= 20")
    s = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
    nbr = np.roll(s, -1, axis=1) if ring else s[:, 1:]
    e = s @ f + (s[:, : len(J)] * nbr[:, : len(J)]) @ J
    hi = e.max()
    w = np.exp(e - hi)
    z = w.sum()
    return (w @ s) / z, (w @ (s[:, : len(J)] * nbr[:, : len(J)])) / z, hi + np.log(z)


# ---------------------------------------------------------------------------
# population dynamics


@dataclass
class CavityPopulation:
    samples: np.ndarray
    direction: str
    chi: float
    rho: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("population contains non-finite values")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


def _ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def population_dynamics(chi: float, rho: float, pop_size: int = 100_000, n_sweeps: int = 200,
                        rng: np.random.Generator | None = None, tol: float | None = None,
                        min_sweeps: int = 20) -> tuple[CavityPopulation, CavityPopulation]:
    """Stationary forward/backward cavity-field populations of the bulk chain.

    Each sweep replaces every member by the cavity update of a randomly chosen
    member with fresh (tau_bar, eta).  Stops once the Kolmogorov distance
    between successive sweeps falls below ``tol`` (default max(0.01, 3/sqrt(N))).
    """
    if pop_size < 1000:
        raise ValueError("population size must be at least 1000")
    rng = np.random.default_rng(0) if rng is None else rng
    tol = max(0.01, 3.0 / np.sqrt(pop_size)) if tol is None else tol
    fact = cholesky_chain(rho)
    fwd = np.zeros(pop_size)
    bwd = np.zeros(pop_size)
    trace = []
    for sweep in range(n_sweeps):
        tb = rng.choice((-1.0, 1.0), size=(2, pop_size))
        eta = rng.standard_normal((2, pop_size))
        idx = rng.integers(0, pop_size, size=(2, pop_size))
        new_f = forward_cavity(fwd[idx[0]], tb[0], eta[0], chi, fact)
        new_b = backward_cavity(bwd[idx[1]], tb[1], eta[1], chi, fact)
        dist = max(_ks_distance(new_f, fwd), _ks_distance(new_b, bwd))
        trace.append(dist)
        fwd, bwd = new_f, new_b
        if sweep + 1 >= min_sweeps and dist < tol:
            return (CavityPopulation(fwd, "forward", chi, rho),
                    CavityPopulation(bwd, "backward", chi, rho))
    raise ConvergenceError(f"population dynamics did not converge in {n_sweeps} sweeps", trace)


def ber_from_populations(pi_plus, pi_minus) -> float:
    """P(h_fwd + h_bwd < 0) over independent pairs, ties counted as one half.

    Averages over all N*M pairs exactly by sorting instead of subsampling.
    """
    a = np.asarray(getattr(pi_plus, "samples", pi_plus), dtype=float)
    b = np.sort(np.asarray(getattr(pi_minus, "samples", pi_minus), dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("populations must be nonempty")
    below = np.searchsorted(b, -a, side="left")
    at = np.searchsorted(b, -a, side="right") - below
    return float((below.sum() + 0.5 * at.sum()) / (a.size * b.size))


def mmse_from_populations(pi_plus, pi_minus, chi: float, rho: float,
                          rng: np.random.Generator | None = None) -> float:
    """Per-symbol error (1/K) E[(b - <b>)^T (I + rho R) (b - <b>)] in the bulk.

    Uses triples (left field, factor, right field) to build pair marginals.
    """
    rng = np.random.default_rng(1) if rng is None else rng
    a_pop = np.asarray(getattr(pi_plus, "samples", pi_plus))
    b_pop = np.asarray(getattr(pi_minus, "samples", pi_minus))
    n = max(a_pop.size, b_pop.size)
    left = a_pop[rng.integers(0, a_pop.size, n)]
    right = b_pop[rng.integers(0, b_pop.size, n)]
    fact = cholesky_chain(rho)
    tb = rng.choice((-1.0, 1.0), size=n)
    eta = rng.standard_normal(n)
    a, c, J, _ = factor_coefficients(chi, fact.l0, fact.l1, tb, eta)
    X = left + a
    Y = right + c
    m0 = np.tanh(X + message(Y, J))
    m1 = np.tanh(Y + message(X, J))
    pair = np.tanh(0.5 * (2 * J + log_cosh(X + Y) - log_cosh(X - Y)))
    var = 0.5 * ((1 - m0**2) + (1 - m1**2))
    cov = tb * (pair - m0 * m1)
    return float(np.mean(var) + 2.0 * rho * np.mean(cov))
