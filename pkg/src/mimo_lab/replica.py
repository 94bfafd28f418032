"""Mutual information of Kronecker channels.

Three evaluations are provided:

* the scalar BPSK channel ``I1(chi)`` and its identity-correlation extensions,
* the matrix-integration approximation (nested extremizations over spectra),
* exact Monte-Carlo evaluation of the tridiagonal transmit sub-channel
  through the gauge-transformed Ising chain.

All values are in nats per transmitted symbol.  The complex QPSK system is
exactly two copies of the real BPSK system at the same noise power, so QPSK
results are twice the BPSK ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .channel import Constellation
from .ising_bp import (
    ConvergenceError,
    ber_from_populations,
    cholesky_chain,
    factor_coefficients,
    logz_open,
    logz_ring,
    mmse_from_populations,
    open_chain_cholesky,
    population_dynamics,
)
from .quadrature import bpsk_expect, log_cosh, sech2
from .spectral import RangeError, Spectrum, receive_g_real, receive_g_real_derivative, transmit_point

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class MIResult:
    value: float
    extremizer_lambda: float = float("nan")
    extremizer_chi: float = float("nan")
    method: str = "scalar"
    mc_stderr: float | None = None
    n: int | None = None


class ExtremumError(RuntimeError):
    """Stationarity condition could not be bracketed; carries the scanned grid."""

    def __init__(self, message: str, grid=None, values=None):
        super().__init__(message)
        self.grid = grid
        self.values = values


# ---------------------------------------------------------------------------
# scalar channel


def _check_chi(chi: float) -> float:
    chi = float(chi)
    if not chi >= 0:
        raise ValueError(f"chi must be nonnegative, got {chi}")
    return chi


def mi_scalar_bpsk(chi: float, prefactor: float = 1.0) -> float:
    """I1(chi) = chi - prefactor * E_z ln cosh(chi + sqrt(chi) z).

    ``prefactor=1`` is the mutual information of r = sqrt(chi) b + z; the
    value 1/2 is kept only for comparison with that alternative reading.
    """
    chi = _check_chi(chi)
    if chi == 0:
        return 0.0
    return chi - prefactor * bpsk_expect(log_cosh, chi)


def mi_scalar_derivative(chi: float) -> float:
    """I1'(chi) = E[1 - tanh^2(x)] / 2, half the scalar MMSE."""
    chi = _check_chi(chi)
    if chi == 0:
        return 0.5
    return 0.5 * bpsk_expect(sech2, chi)


def mi_scalar_second_derivative(chi: float) -> float:
    """I1''(chi) = -E[(1 - tanh^2(x))^2] / 2."""
    chi = _check_chi(chi)
    if chi == 0:
        return -0.5
    return -0.5 * bpsk_expect(lambda x: sech2(x) ** 2, chi)


def mmse_bpsk(chi: float) -> float:
    return 2.0 * mi_scalar_derivative(chi)


def _scale(constellation) -> float:
    c = Constellation(constellation)
    return 1.0 if c is Constellation.BPSK else 2.0


def mi_identity(chi: float, constellation=Constellation.BPSK) -> float:
    """MI of the identity-correlated channel with effective SNR chi."""
    return _scale(constellation) * mi_scalar_bpsk(chi)


def mi_identity_derivatives(chi: float, constellation=Constellation.BPSK) -> tuple[float, float, float]:
    """(I, I', I'') of :func:`mi_identity`."""
    s = _scale(constellation)
    return (s * mi_scalar_bpsk(chi), s * mi_scalar_derivative(chi),
            s * mi_scalar_second_derivative(chi))


def conditional_entropy(mi: MIResult | float, constellation=Constellation.BPSK) -> float:
    value = mi.value if isinstance(mi, MIResult) else float(mi)
    return Constellation(constellation).log_size - value


# ---------------------------------------------------------------------------
# matrix-integration approximation


def transmit_mi(spec_rt: Spectrum, chi: float) -> tuple[float, float]:
    """Real BPSK value of Extr_lam {G_hat(lam) + I1(lam*chi)} for a transmit spectrum.

    Returns ``(value, lam)``.  The stationarity condition is solved in the
    Stieltjes variable w = g(z) < 0, where x* = w/2 and lam = R(w):
    w/2 + chi * I1'(R(w) chi) = 0.
    """
    chi = _check_chi(chi)
    if spec_rt.kind == "delta" or chi == 0:
        lam = spec_rt.moment(1)
        return mi_scalar_bpsk(lam * chi), lam

    def cond(w):
        lam, _ = transmit_point(spec_rt, w)
        return 0.5 * w + chi * mi_scalar_derivative(max(lam, 0.0) * chi)

    hi = 0.0
    lo = -1.0
    grid, vals = [hi], [cond(-1e-12)]
    while cond(lo) > 0:
        grid.append(lo)
        vals.append(cond(lo))
        hi, lo = lo, 2.0 * lo
        if lo < -1e12:
            raise ExtremumError("transmit extremum not bracketed", grid, vals)
    w = brentq(cond, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    lam, g_hat = transmit_point(spec_rt, w)
    return g_hat + mi_scalar_bpsk(lam * chi), lam


def transmit_mi_derivative(spec_rt: Spectrum, chi: float) -> tuple[float, float, float]:
    """(value, lam_in, d value / d chi) by the envelope theorem."""
    val, lam = transmit_mi(spec_rt, chi)
    return val, lam, lam * mi_scalar_derivative(lam * chi)


def mi_matrix_integration(spec_rr: Spectrum, spec_rt: Spectrum, sigma2: float, beta: float,
                          constellation=Constellation.BPSK) -> MIResult:
    """Matrix-integration MI of the Kronecker channel.

    Outer extremum over the receive-side gain lam in (0, E[mu]]:
    lam = E[mu / (1 - 2 beta mu x)] with x = -I'(lam/sigma2)/sigma2, value
    lam*x - G_r(x) + I(lam/sigma2) with I the transmit-side extremum.
    """
    if not sigma2 > 0:
        raise ValueError("noise power must be positive")
    scale = _scale(constellation)
    mean_mu = spec_rr.moment(1)

    def x_of(lam):
        return -transmit_mi_derivative(spec_rt, lam / sigma2)[2] / sigma2

    def cond(lam):
        return lam - receive_g_real_derivative(spec_rr, beta, x_of(lam))

    grid = np.linspace(0.0, mean_mu, 9)
    if cond(mean_mu) < 0 or cond(0.0) > 0:
        raise ExtremumError("receive extremum not bracketed", grid, [cond(g) for g in grid])
    lam = brentq(cond, 0.0, mean_mu, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    x = x_of(lam)
    inner, lam_in = transmit_mi(spec_rt, lam / sigma2)
    value = lam * x - receive_g_real(spec_rr, beta, x) + inner
    return MIResult(scale * value, float(lam), float(lam / sigma2), "matrix_integration")


def effective_chi_matrix_integration(spec_rr: Spectrum, spec_rt: Spectrum, sigma2: float,
                                     beta: float) -> tuple[float, float]:
    """(chi_eff, lam_in): effective SNR of the transmit sub-channel and its inner gain."""
    res = mi_matrix_integration(spec_rr, spec_rt, sigma2, beta)
    _, lam_in = transmit_mi(spec_rt, res.extremizer_chi)
    return res.extremizer_chi, lam_in


def ber_prediction_mixed(spec_rr: Spectrum, spec_rt: Spectrum, sigma2: float, beta: float) -> float:
    """BER of the orthogonally mixed model: Q(sqrt(lam_in * chi_eff))."""
    chi, lam_in = effective_chi_matrix_integration(spec_rr, spec_rt, sigma2, beta)
    return float(ndtr(-np.sqrt(lam_in * chi)))


# ---------------------------------------------------------------------------
# exact chain mutual information


def _chain_factors(rho: float, K: int, boundary: str):
    if boundary == "ring":
        fact = cholesky_chain(rho)
        return np.full(K, fact.l0), np.full(K, fact.l1)
    if boundary == "open":
        return open_chain_cholesky(rho, K)
    raise ValueError(f"unknown boundary {boundary!r}")


def gauge_mi_samples(rho: float, chi: float, bbar: np.ndarray, eta: np.ndarray,
                     boundary: str = "ring") -> np.ndarray:
    """Per-sample mutual information of y = sqrt(chi) L^T b + eta for I + rho*R = L L^T.

    ``bbar`` (n, K) are transmitted symbols and ``eta`` (n, K) gauge-frame noise.
    Each row gives -(1/K) ln[p(y)/p(y|bbar)], whose mean is the MI.
    """
    n, K = eta.shape
    l0, l1 = _chain_factors(rho, K, boundary)
    tb = bbar * np.roll(bbar, -1, axis=1)
    a, c, J, const = factor_coefficients(chi, l0, l1, tb, eta)
    const = const - np.sqrt(chi) * eta * (l0 + l1 * tb)
    if boundary == "ring":
        f = a + np.roll(c, 1, axis=1)
        lz = logz_ring(np.ascontiguousarray(f), np.ascontiguousarray(J))
    else:
        f = a.copy()
        f[:, 1:] += c[:, :-1]
        lz = logz_open(np.ascontiguousarray(f), np.ascontiguousarray(J[:, :-1]))
    return -(lz - K * LN2 + const.sum(axis=1)) / K


def chain_matrix_stats_ring(K: int) -> float:
    """Tr(R^2)/K of the ring adjacency."""
    return 2.0 if K >= 3 else 1.0


def mi_exact_chain_mc(rho: float, chi: float, K: int, n_samples: int,
                      rng: np.random.Generator, boundary: str = "ring", control: str = "zero",
                      delta: float = 0.01, batch: int = 4096) -> MIResult:
    """Exact MI of the tridiagonal transmit sub-channel by Monte Carlo over (bbar, eta).

    ``boundary`` selects a periodic ring (K even keeps the chain bipartite) or
    the open chain with its exact finite Cholesky factor.  ``control``:

    * ``"none"``: plain average of the per-sample MI;
    * ``"zero"``: subtract the same-noise rho = 0 sample, whose mean I1(chi)
      is known;
    * ``"taylor"``: additionally remove the rho^2 term, estimated per sample
      from symmetrized rho = ±delta, ±2*delta evaluations, and add back its
      exact mean -chi^2 (Tr R^2/K) I1'(chi)^2.  Valid for bipartite chains,
      whose MI is even in rho.
    """
    if n_samples < 100:
        raise ValueError("at least 100 samples are needed for a meaningful standard error")
    if K < 2:
        raise ValueError("K must be at least 2")
    if abs(rho) > 0.5:
        raise ValueError("|rho| must not exceed 1/2")
    if boundary == "ring" and K < 3:
        raise ValueError("a ring needs K >= 3")
    if control not in ("none", "zero", "taylor"):
        raise ValueError(f"unknown control {control!r}")
    if control == "taylor" and (boundary != "ring" or K % 2):
        raise ValueError("the taylor control needs an even ring")
    chi = _check_chi(chi)
    vals = []
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        bbar = rng.choice((-1.0, 1.0), size=(m, K))
        eta = rng.standard_normal((m, K))
        s = gauge_mi_samples(rho, chi, bbar, eta, boundary)
        if control != "none":
            s0 = gauge_mi_samples(0.0, chi, bbar, eta, boundary)
        if control == "zero":
            s = s - s0
        elif control == "taylor":
            sm = gauge_mi_samples(-rho, chi, bbar, eta, boundary)
            fd = [0.5 * (gauge_mi_samples(d, chi, bbar, eta, boundary)
                         + gauge_mi_samples(-d, chi, bbar, eta, boundary)) - s0
                  for d in (delta, 2 * delta)]
            a_hat = (16.0 * fd[0] - fd[1]) / (12.0 * delta**2)
            s = 0.5 * (s + sm) - s0 - rho**2 * a_hat
        vals.append(s)
        done += m
    vals = np.concatenate(vals)
    mean = float(np.mean(vals))
    if control == "zero":
        mean += mi_scalar_bpsk(chi)
    elif control == "taylor":
        a2 = -chi**2 * chain_matrix_stats_ring(K) * mi_scalar_derivative(chi) ** 2
        mean += mi_scalar_bpsk(chi) + rho**2 * a2
    stderr = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    return MIResult(mean, float("nan"), chi, "exact_chain_mc", stderr, len(vals))


def _crn(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5EED])))


# ---------------------------------------------------------------------------
# BER predictions for the chain model


def chain_state_evolution(rho: float, sigma2: float, beta: float, pop_size: int = 100_000,
                          seed: int = 0, n_sweeps: int = 400) -> tuple[float, float, float]:
    """Fixed point chi = 1/(sigma2 + beta * mmse_chain(chi)) with Rr = I.

    ``mmse_chain(chi)`` is evaluated from converged populations with common
    random numbers.  Returns ``(chi_eff, mmse, ber)``.
    """
    cache: dict[float, tuple[float, float]] = {}

    def evaluate(chi):
        if chi not in cache:
            rng = _crn(seed)
            if rho == 0:
                cache[chi] = (mmse_bpsk(chi), float(ndtr(-np.sqrt(chi))))
            else:
                fwd, bwd = population_dynamics(chi, rho, pop_size, n_sweeps, rng)
                cache[chi] = (mmse_from_populations(fwd, bwd, chi, rho, rng),
                              ber_from_populations(fwd, bwd))
        return cache[chi]

    def residual(chi):
        return chi - 1.0 / (sigma2 + beta * evaluate(chi)[0])

    lo = 1.0 / (sigma2 + beta * (1.0 + 2.0 * abs(rho)))
    hi = 1.0 / sigma2
    if residual(lo) > 0 or residual(hi) < 0:
        raise ConvergenceError("state evolution fixed point not bracketed", [lo, hi])
    chi = brentq(residual, lo, hi, xtol=1e-9, rtol=1e-10, maxiter=200)
    mmse, ber = evaluate(chi)
    return chi, mmse, ber


def ber_prediction_chain(rho: float, sigma2: float, beta: float, pop_size: int = 100_000,
                         seed: int = 0) -> float:
    """Replica BER of BPSK over a Kronecker channel with Rr = I and tridiagonal Rt."""
    return chain_state_evolution(rho, sigma2, beta, pop_size, seed)[2]


__all__ = [
    "MIResult", "ExtremumError", "RangeError", "mi_scalar_bpsk", "mi_scalar_derivative",
    "mi_scalar_second_derivative", "mmse_bpsk", "mi_identity", "mi_identity_derivatives",
    "conditional_entropy", "transmit_mi", "transmit_mi_derivative", "mi_matrix_integration",
    "effective_chi_matrix_integration", "ber_prediction_mixed", "gauge_mi_samples",
    "mi_exact_chain_mc", "chain_state_evolution",
    "ber_prediction_chain",
]
