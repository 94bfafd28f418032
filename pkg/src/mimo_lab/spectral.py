"""Eigenvalue spectra and the random-matrix functionals built on them.

Two families of G-functions appear:

* the receive-side log-determinant functional
  ``G(x) = (1/beta) * E_rho[ln(1 - beta*lambda*x)]`` (:func:`g_function`), and
* the transmit-side orthogonal-integral functional, whose derivative is the
  R-transform of the spectrum (:func:`transmit_g`).  For real matrices it is
  ``G_r(x) = (1/2) * int_0^{2x} R(w) dw``.

The Legendre transform of the transmit-side functional has a closed
expression in terms of the Stieltjes parameter ``z`` (:func:`transmit_g_hat_at`),
which reduces to ``-(1/2) ln(1 - u^2)``, ``u = (lambda - c) / w``, for an
arcsine spectrum of centre ``c`` and half-width ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import brentq

RHO_MAX = 0.5


class DomainError(ValueError):
    """Argument outside the domain of a spectral functional."""

    def __init__(self, message: str, offending: float | None = None):
        super().__init__(message)
        self.offending = offending


class RangeError(ValueError):
    """No extremizer exists for the requested Legendre argument."""


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue distribution: a point mass, an arcsine law or an empirical sample."""

    kind: str
    center: float = 1.0
    halfwidth: float = 0.0
    eigenvalues: np.ndarray | None = field(default=None, compare=False)

    @staticmethod
    def delta(at: float = 1.0) -> "Spectrum":
        return Spectrum("delta", center=float(at))

    @staticmethod
    def arcsine(center: float, halfwidth: float) -> "Spectrum":
        if halfwidth <= 0:
            return Spectrum.delta(center)
        return Spectrum("arcsine", center=float(center), halfwidth=float(halfwidth))

    @staticmethod
    def empirical(eigenvalues) -> "Spectrum":
        ev = np.sort(np.asarray(eigenvalues, dtype=float).ravel())
        if ev.size == 0:
            raise ValueError("empirical spectrum needs at least one eigenvalue")
        ev.setflags(write=False)
        return Spectrum("empirical", eigenvalues=ev)

    def __post_init__(self):
        if self.kind not in ("delta", "arcsine", "empirical"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "delta":
            return self.center, self.center
        if self.kind == "arcsine":
            return self.center - self.halfwidth, self.center + self.halfwidth
        return float(self.eigenvalues[0]), float(self.eigenvalues[-1])

    def expect(self, func: Callable[[np.ndarray], np.ndarray], tol: float = 1e-13,
               max_nodes: int = 1 << 20) -> float:
        """E_rho[func(lambda)].

        The arcsine law is integrated after the substitution
        lambda = c + w cos(theta), which removes the endpoint singularities and
        turns the integral into a periodic one.  The midpoint rule on the
        circle (Gauss-Chebyshev) then converges geometrically; nodes are doubled
        until successive estimates agree to ``tol``.
        """
        if self.kind == "delta":
            return float(func(np.array([self.center]))[0])
        if self.kind == "empirical":
            return float(np.mean(func(self.eigenvalues)))
        n = 16
        prev = None
        while n <= max_nodes:
            theta = (np.arange(n) + 0.5) * np.pi / n
            val = float(np.mean(func(self.center + self.halfwidth * np.cos(theta))))
            if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
                return val
            prev, n = val, 2 * n
        return prev

    def moment(self, n: int) -> float:
        """E[lambda^n]."""
        return self.expect(lambda lam: lam**n)

    def central_moment(self, n: int) -> float:
        mu = self.moment(1)
        return self.expect(lambda lam: (lam - mu) ** n)

    def stieltjes(self, z: float) -> float:
        """g(z) = E[1 / (z - lambda)] for real z outside the support."""
        lo, hi = self.support
        if lo <= z <= hi:
            raise DomainError(f"z={z} lies inside the support [{lo}, {hi}]", z)
        if self.kind == "delta":
            return 1.0 / (z - self.center)
        if self.kind == "arcsine":
            d = z - self.center
            return np.sign(d) / np.sqrt(d * d - self.halfwidth**2)
        return float(np.mean(1.0 / (z - self.eigenvalues)))

    def stieltjes_derivative(self, z: float) -> float:
        """g'(z) = -E[1 / (z - lambda)^2]."""
        lo, hi = self.support
        if lo <= z <= hi:
            raise DomainError(f"z={z} lies inside the support [{lo}, {hi}]", z)
        if self.kind == "delta":
            return -1.0 / (z - self.center) ** 2
        if self.kind == "arcsine":
            d = z - self.center
            return -abs(d) / (d * d - self.halfwidth**2) ** 1.5
        return float(-np.mean(1.0 / (z - self.eigenvalues) ** 2))

    def log_potential(self, z: float) -> float:
        """E[ln|z - lambda|] for real z outside the support."""
        lo, hi = self.support
        if lo <= z <= hi:
            raise DomainError(f"z={z} lies inside the support [{lo}, {hi}]", z)
        if self.kind == "delta":
            return float(np.log(abs(z - self.center)))
        if self.kind == "arcsine":
            d = abs(z - self.center)
            return float(np.log(0.5 * (d + np.sqrt(d * d - self.halfwidth**2))))
        return float(np.mean(np.log(np.abs(z - self.eigenvalues))))

    @cached_property
    def free_cumulants(self) -> tuple[float, float, float, float]:
        """First four free cumulants (coefficients of the R-transform series)."""
        m1, m2, m3, m4 = (self.moment(k) for k in range(1, 5))
        k1 = m1
        k2 = m2 - m1**2
        k3 = m3 - 3 * m1 * m2 + 2 * m1**3
        k4 = m4 - 4 * m1 * m3 - 2 * m2**2 + 10 * m1**2 * m2 - 5 * m1**4
        return k1, k2, k3, k4


def tridiagonal_spectrum(rho: float, K: int | None = None) -> Spectrum:
    """Spectrum of I + rho*R, R the nearest-neighbour chain adjacency.

    ``K=None`` gives the large-K arcsine law on [1 - 2|rho|, 1 + 2|rho|].
    """
    if abs(rho) > RHO_MAX:
        raise ValueError(f"|rho| must not exceed {RHO_MAX}, got {rho}")
    if rho == 0:
        return Spectrum.delta(1.0)
    if K is None:
        return Spectrum.arcsine(1.0, 2.0 * abs(rho))
    if K < 1:
        raise ValueError("K must be positive")
    k = np.arange(1, K + 1)
    return Spectrum.empirical(1.0 + 2.0 * rho * np.cos(k * np.pi / (K + 1)))


# ---------------------------------------------------------------------------
# receive-side log-determinant functional


def _check_log_domain(spec: Spectrum, beta: float, x: float) -> None:
    lo, hi = spec.support
    for lam in (lo, hi):
        if 1.0 - beta * lam * x <= 0.0:
            raise DomainError(f"1 - beta*lambda*x <= 0 at lambda={lam}, x={x}", lam)


def g_function(spec: Spectrum, beta: float, x: float) -> float:
    """(1/beta) E[ln(1 - beta*lambda*x)]."""
    _check_log_domain(spec, beta, x)
    return spec.expect(lambda lam: np.log1p(-beta * lam * x)) / beta


def g_derivative(spec: Spectrum, beta: float, x: float) -> float:
    """d/dx of :func:`g_function`, i.e. -E[lambda / (1 - beta*lambda*x)]."""
    _check_log_domain(spec, beta, x)
    return -spec.expect(lambda lam: lam / (1.0 - beta * lam * x))


def g_second_derivative(spec: Spectrum, beta: float, x: float) -> float:
    _check_log_domain(spec, beta, x)
    return -beta * spec.expect(lambda lam: lam**2 / (1.0 - beta * lam * x) ** 2)


def receive_g_real(spec: Spectrum, beta: float, x: float) -> float:
    """Receive-side functional in the real-channel sign convention: -(1/2) G(2x)."""
    return -0.5 * g_function(spec, beta, 2.0 * x)


def receive_g_real_derivative(spec: Spectrum, beta: float, x: float) -> float:
    """E[lambda / (1 - 2*beta*lambda*x)]."""
    return -g_derivative(spec, beta, 2.0 * x)


def legendre_g_hat(spec: Spectrum, beta: float, lam: float) -> tuple[float, float]:
    """Legendre transform of :func:`g_function`: returns (G_hat(lam), extremizer x*).

    G is concave with G' ranging over (-inf, 0) for a positive spectrum, so a
    unique extremizer exists for lam < 0.
    """
    lo, hi = spec.support
    if lo < 0:
        raise RangeError("spectrum must be nonnegative")
    if not lam < 0:
        raise RangeError(f"lambda={lam} outside the range (-inf, 0) of G'")
    x_max = np.inf if hi == 0 else 1.0 / (beta * hi)
    f = lambda x: g_derivative(spec, beta, x) - lam  # noqa: E731
    a = -1.0
    while f(a) < 0:
        a *= 2.0
        if a < -1e300:
            raise RangeError(f"could not bracket lambda={lam}")
    eps = 0.5
    b = x_max * (1 - eps) if np.isfinite(x_max) else 1.0
    while f(b) > 0:
        eps *= 0.5
        b = x_max * (1 - eps)
        if eps < 1e-300:
            raise RangeError(f"could not bracket lambda={lam}")
    x = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return lam * x - g_function(spec, beta, x), x


# ---------------------------------------------------------------------------
# transmit-side orthogonal-integral functional


def _z_for_w(spec: Spectrum, w: float) -> float:
    """Solve g(z) = w for z outside the support (right of it when w > 0)."""
    lo, hi = spec.support
    if w > 0:
        f = lambda t: spec.stieltjes(hi + t) - w  # noqa: E731
    else:
        f = lambda t: spec.stieltjes(lo - t) - w  # noqa: E731
    s = np.sign(w)
    t_hi = 1.0
    while f(t_hi) * s > 0:
        t_hi *= 2.0
    t_lo = t_hi
    while f(t_lo) * s <= 0:
        t_lo *= 0.5
        if t_lo < 1e-300:
            raise RangeError(f"w={w} outside the range of the Stieltjes transform")
    t = brentq(f, t_lo, t_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    return hi + t if w > 0 else lo - t


SERIES_CUTOFF = 1e-4


def r_transform(spec: Spectrum, w: float) -> float:
    """R(w) = z - 1/w where g(z) = w; the series in free cumulants near w = 0."""
    if spec.kind == "delta":
        return spec.center
    if abs(w) < SERIES_CUTOFF:
        k1, k2, k3, k4 = spec.free_cumulants
        return k1 + k2 * w + k3 * w**2 + k4 * w**3
    return _z_for_w(spec, w) - 1.0 / w


def transmit_point(spec: Spectrum, w: float) -> tuple[float, float]:
    """Point (lam, G_hat(lam)) of the transmit-side Legendre transform with g(z) = w.

    The extremizer of the transform is x* = w/2.  Near w = 0 the closed
    expression cancels badly, so the free-cumulant series is used there.
    """
    if spec.kind == "delta":
        if w != 0:
            raise RangeError("point-mass spectrum: transform finite only at the atom")
        return spec.center, 0.0
    if abs(w) < SERIES_CUTOFF:
        k1, k2, k3, k4 = spec.free_cumulants
        lam = k1 + k2 * w + k3 * w**2 + k4 * w**3
        return lam, 0.5 * (0.5 * k2 * w**2 + 2.0 * k3 * w**3 / 3.0 + 0.75 * k4 * w**4)
    z = _z_for_w(spec, w)
    return z - 1.0 / w, 0.5 * (spec.log_potential(z) + np.log(abs(w)))


def transmit_g(spec: Spectrum, x: float, n_nodes: int = 64) -> float:
    """Real-channel transmit-side functional G_r(x) = (1/2) int_0^{2x} R(w) dw."""
    if x == 0:
        return 0.0
    t, wts = np.polynomial.legendre.leggauss(n_nodes)
    upper = 2.0 * x
    w = 0.5 * upper * (t + 1.0)
    vals = np.array([r_transform(spec, wi) for wi in w])
    return 0.25 * upper * float(np.dot(wts, vals))


def transmit_g_derivative(spec: Spectrum, x: float) -> float:
    return r_transform(spec, 2.0 * x)


def legendre_transform(func: Callable[[float], float], deriv: Callable[[float], float],
                       lam: float, x0: float = 0.0) -> tuple[float, float]:
    """Extr_x {lam*x - func(x)} for convex func with increasing deriv.

    Returns (value, extremizer).  The bracket grows geometrically from ``x0``.
    """
    f = lambda x: deriv(x) - lam  # noqa: E731
    if f(x0) == 0:
        x = x0
    else:
        step = 1.0
        if f(x0) < 0:
            a, b = x0, x0 + step
            while f(b) < 0:
                a, step = b, 2 * step
                b = x0 + step
                if step > 1e12:
                    raise RangeError(f"lambda={lam} not in the range of the derivative")
        else:
            a, b = x0 - step, x0
            while f(a) > 0:
                b, step = a, 2 * step
                a = x0 - step
                if step > 1e12:
                    raise RangeError(f"lambda={lam} not in the range of the derivative")
        x = brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return lam * x - func(x), x


def transmit_g_hat_numeric(spec: Spectrum, lam: float) -> float:
    """Legendre transform of :func:`transmit_g` by direct root finding (reference route)."""
    lo, hi = spec.support
    if not lo < lam < hi:
        raise RangeError(f"lambda={lam} outside the open range ({lo}, {hi}) of R")
    value, _ = legendre_transform(lambda x: transmit_g(spec, x),
                                  lambda x: transmit_g_derivative(spec, x), lam)
    return value


def transmit_g_hat_at(spec: Spectrum, z: float) -> tuple[float, float, float]:
    """Parametric Legendre transform at Stieltjes point z outside the support.

    Returns ``(lam, x_star, g_hat)`` with lam = z - 1/g(z), x_star = g(z)/2 and
    g_hat = (1/2)[E ln|z - lambda| + ln|g(z)|].
    """
    g = spec.stieltjes(z)
    lam = z - 1.0 / g
    g_hat = 0.5 * (spec.log_potential(z) + np.log(abs(g)))
    return lam, 0.5 * g, g_hat


def arcsine_g_hat(rho: float, lam):
    """Closed form -(1/2) ln(1 - (lam - 1)^2 / (4 rho^2)) for the chain spectrum."""
    u = (np.asarray(lam, dtype=float) - 1.0) / (2.0 * rho)
    return -0.5 * np.log1p(-u * u)


def _z_for_lambda(spec: Spectrum, lam: float) -> float:
    lo, hi = spec.support
    k1 = spec.moment(1)
    if lam == k1:
        return np.inf
    if lam > k1:
        f = lambda t: (hi + t) - 1.0 / spec.stieltjes(hi + t) - lam  # noqa: E731
    else:
        f = lambda t: (lo - t) - 1.0 / spec.stieltjes(lo - t) - lam  # noqa: E731
    t_hi = 1.0
    while np.sign(f(t_hi)) != np.sign(k1 - lam):
        t_hi *= 2.0
        if t_hi > 1e15:
            raise RangeError(f"lambda={lam} too close to the mean")
    t_lo = t_hi
    while np.sign(f(t_lo)) == np.sign(k1 - lam):
        t_lo *= 0.5
        if t_lo < 1e-300:
            raise RangeError(f"lambda={lam} outside the range ({lo}, {hi})")
    t = brentq(f, t_lo, t_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
    return hi + t if lam > k1 else lo - t


def transmit_g_hat(spec: Spectrum, lam: float) -> float:
    """Legendre transform of the transmit-side functional via the Stieltjes parameter."""
    lo, hi = spec.support
    if spec.kind == "delta":
        if lam == spec.center:
            return 0.0
        raise RangeError("point-mass spectrum: transform finite only at the atom")
    if not lo < lam < hi:
        raise RangeError(f"lambda={lam} outside the open range ({lo}, {hi}) of R")
    z = _z_for_lambda(spec, lam)
    if not np.isfinite(z):
        return 0.0
    return transmit_g_hat_at(spec, z)[2]


def g_series_coefficients(spec: Spectrum, order: int = 4) -> list[float]:
    """Taylor coefficients of the transmit-side functional of a zero-mean matrix.

    For R with normalized moments m_n = Tr(R^n)/K the series is
    (1/2) m2 z^2 + (1/3) m3 z^3 + (1/4)(m4 - 2 m2^2) z^4, returned as the
    coefficients of z^2, z^3, z^4 (truncated to ``order``).
    """
    if order > 4:
        raise ValueError("orders above 4 are not supported")
    m2, m3, m4 = (spec.moment(k) for k in (2, 3, 4))
    coeffs = [0.5 * m2, m3 / 3.0, 0.25 * (m4 - 2.0 * m2**2)]
    return coeffs[: max(order - 1, 0)]
