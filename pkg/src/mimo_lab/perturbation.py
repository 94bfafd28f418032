"""Small-rho expansions of the transmit sub-channel MI for Rt = I + rho*R.

Both expansions are written for the complex-equivalent identity-channel MI
J(chi) = 2*I1(chi) with an overall factor nu: nu = 1/2 for real BPSK and
nu = 1 for QPSK (a complex QPSK channel is two real BPSK channels).
Coefficients include their powers of rho, so the truncated series is
``order0 + order1 + ... + order4``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import Constellation
from .quadrature import bpsk_expect, gaussian_rule, sech2
from .replica import mi_scalar_bpsk, mi_scalar_derivative, mi_scalar_second_derivative


@dataclass(frozen=True)
class MatrixStats:
    """Normalized trace statistics of a zero-diagonal Hermitian R."""

    tr_R2_per_K: float
    tr_R3_per_K: float
    tr_R4_per_K: float
    sum_diag_R2_sq_per_K: float
    sum_Rij4_per_K: float


def chain_matrix_stats(K: int | None = None) -> MatrixStats:
    """Statistics of the open nearest-neighbour chain; ``K=None`` is the bulk limit."""
    if K is None:
        return MatrixStats(2.0, 0.0, 6.0, 4.0, 2.0)
    if K < 2:
        return MatrixStats(0.0, 0.0, 0.0, 0.0, 0.0)
    if K == 2:
        return MatrixStats(1.0, 0.0, 1.0, 1.0, 1.0)
    return MatrixStats(2.0 * (K - 1) / K, 0.0, (6.0 * K - 10.0) / K, (4.0 * K - 6.0) / K,
                       2.0 * (K - 1) / K)


def matrix_stats_dense(R) -> MatrixStats:
    R = np.asarray(R)
    K = R.shape[0]
    if not np.allclose(np.diag(R), 0.0):
        raise ValueError("R must have zero diagonal")
    R2 = R @ R
    R4 = R2 @ R2
    return MatrixStats(
        float(np.real(np.trace(R2))) / K,
        float(np.real(np.trace(R2 @ R))) / K,
        float(np.real(np.trace(R4))) / K,
        float(np.sum(np.real(np.diag(R2)) ** 2)) / K,
        float(np.sum(np.real(R) ** 4 + np.imag(R) ** 4)) / K,
    )


@dataclass(frozen=True)
class ExpansionCoefficients:
    order0: float
    order1: float
    order2: float
    order3: float
    order4: float
    method: str
    matrix_stats: MatrixStats = field(repr=False)

    def total(self, up_to: int = 4) -> float:
        terms = (self.order0, self.order1, self.order2, self.order3, self.order4)
        return float(sum(terms[: up_to + 1]))


def _nu(constellation) -> float:
    return 0.5 if Constellation(constellation) is Constellation.BPSK else 1.0


def _complex_equivalent(chi: float) -> tuple[float, float, float]:
    return 2.0 * mi_scalar_bpsk(chi), 2.0 * mi_scalar_derivative(chi), 2.0 * mi_scalar_second_derivative(chi)


def c_hat(chi: float) -> float:
    """Posterior fourth cumulant of a BPSK symbol averaged over the scalar channel.

    Equals -2 E[(1 - tanh^2 x)(1 - 3 tanh^2 x)], x = chi + sqrt(chi) z.
    """
    if chi < 0:
        raise ValueError("chi must be nonnegative")
    if chi == 0:
        return -2.0
    return -2.0 * bpsk_expect(lambda x: sech2(x) * (1.0 - 3.0 * np.tanh(x) ** 2), chi)


def expand_matrix_integration(chi: float, rho: float, stats: MatrixStats,
                              constellation=Constellation.BPSK) -> ExpansionCoefficients:
    nu = _nu(constellation)
    J, J1, J2 = _complex_equivalent(chi)
    e = rho * chi
    m2, m3, m4 = stats.tr_R2_per_K, stats.tr_R3_per_K, stats.tr_R4_per_K
    o2 = -nu * e**2 / 2 * m2 * J1**2
    o3 = nu * e**3 / 3 * m3 * J1**3
    o4 = nu * (-(e**4) / 4 * (m4 - 2 * m2**2) * J1**4 + e**4 / 2 * m2**2 * J2 * J1**2)
    return ExpansionCoefficients(nu * J, 0.0, o2, o3, o4, "matrix_integration", stats)


def expand_exact(chi: float, rho: float, stats: MatrixStats,
                 constellation=Constellation.BPSK) -> ExpansionCoefficients:
    nu = _nu(constellation)
    J, J1, J2 = _complex_equivalent(chi)
    C = c_hat(chi)
    e = rho * chi
    m2, m3, m4 = stats.tr_R2_per_K, stats.tr_R3_per_K, stats.tr_R4_per_K
    var = -J2 - J1**2
    o2 = -nu * e**2 / 2 * m2 * J1**2
    o3 = nu * e**3 / 3 * m3 * J1**3
    o4 = nu * (-(e**4) / 4 * m4 * J1**4
               - e**4 / 4 * (2 * stats.sum_diag_R2_sq_per_K * var * J1**2
                             + stats.sum_Rij4_per_K * (var**2 + C**2 / 6)))
    return ExpansionCoefficients(nu * J, 0.0, o2, o3, o4, "exact", stats)


def discrepancy(chi: float, rho: float, stats: MatrixStats,
                constellation=Constellation.BPSK) -> float:
    """Fourth-order difference between the exact MI and the matrix-integration MI."""
    nu = _nu(constellation)
    _, J1, J2 = _complex_equivalent(chi)
    C = c_hat(chi)
    var = -J2 - J1**2
    e4 = (rho * chi) ** 4
    return -nu * e4 / 4 * (2 * (stats.sum_diag_R2_sq_per_K - stats.tr_R2_per_K**2) * var * J1**2
                           + stats.sum_Rij4_per_K * (var**2 + C**2 / 6))


def variance_gap(chi: float, constellation=Constellation.BPSK) -> float:
    """-I'' - I'^2 of the identity channel MI (nonnegative)."""
    s = 1.0 if Constellation(constellation) is Constellation.BPSK else 2.0
    return -s * mi_scalar_second_derivative(chi) - (s * mi_scalar_derivative(chi)) ** 2


def c_complex(chi: float, constellation=Constellation.QPSK) -> float:
    """Posterior fourth cumulant of the normalized real and imaginary parts of a
    complex symbol, averaged over the complex scalar channel r = sqrt(chi) b + n.

    The posterior over the constellation is enumerated directly and the
    expectation over (b, n) taken by a product quadrature rule.
    """
    c = Constellation(constellation)
    sym = c.symbols
    if not np.iscomplexobj(sym) or abs(np.mean(sym**2)) > 1e-12 or abs(np.mean(sym)) > 1e-12:
        raise ValueError("constellation must be a zero-mean proper complex constellation")
    comps = np.sqrt(2.0) * np.stack([sym.real, sym.imag])
    z, w = gaussian_rule(chi)
    n = (z[:, None] + 1j * z[None, :]) / np.sqrt(2.0)
    wts = w[:, None] * w[None, :]
    total = 0.0
    for b in sym:
        r = np.sqrt(chi) * b + n
        logp = -np.abs(r[..., None] - np.sqrt(chi) * sym) ** 2
        logp -= logp.max(axis=-1, keepdims=True)
        p = np.exp(logp)
        p /= p.sum(axis=-1, keepdims=True)
        k4 = 0.0
        for comp in comps:
            m = [p @ comp**j for j in range(1, 5)]
            k4 = k4 + (m[3] - 4 * m[2] * m[0] - 3 * m[1] ** 2 + 12 * m[1] * m[0] ** 2 - 6 * m[0] ** 4)
        total += np.sum(wts * k4) / 2.0
    return float(total / len(sym))
