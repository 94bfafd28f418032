"""Iterative Gibbs-free-energy demodulator for real BPSK over Kronecker channels
with a tridiagonal transmit correlation.

Each iteration:

1. chi_hat = -(1/sigma2) G'(-chi/sigma2) from the receive-side spectrum, and
   h <- h + sigma2*chi_hat*(H^T(r - H m)/sigma2 - h);
2. moments of the tilted chain
   Q(b) ∝ exp[-(chi_hat/2)(b - m)^T Rt (b - m) + h^T b]
   give the new m and chi = (<b^T Rt b> - m^T Rt m)/K.

Step 2 is an Ising chain with fields h + chi_hat Rt m and couplings
-chi_hat*rho, solved exactly in O(K) by forward-backward messages.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelInstance, CorrelationMatrix
from .ising_bp import chain_moments
from .spectral import Spectrum, g_derivative


class NumericalDomainError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DemodState:
    m: np.ndarray
    h: np.ndarray
    chi: float
    chi_hat: float
    t: int


@dataclass
class DemodOptions:
    tol: float = 1e-6
    max_iter: int = 200
    damping: float = 0.0


@dataclass
class DemodResult:
    b_hat: np.ndarray
    m: np.ndarray
    converged: bool
    iterations: int
    state: DemodState
    trace: list = field(default_factory=list)


def demod_init(K: int) -> DemodState:
    return DemodState(np.zeros(K), np.zeros(K), 1.0, 0.0, 0)


def demod_step1(state: DemodState, ch: ChannelInstance, r: np.ndarray,
                spec_rr: Spectrum | None = None) -> DemodState:
    """Update chi_hat from the receive-side G' and the field h (cost O(KL))."""
    spec_rr = Spectrum.delta(1.0) if spec_rr is None else spec_rr
    s2 = ch.sigma2
    chi_hat = -g_derivative(spec_rr, ch.beta, -state.chi / s2) / s2
    if not chi_hat > 0:
        raise NumericalDomainError(f"chi_hat={chi_hat} is not positive")
    residual = ch.H.T @ (r - ch.H @ state.m) / s2
    h = state.h + s2 * chi_hat * (residual - state.h)
    return replace(state, h=h, chi_hat=float(chi_hat), t=state.t + 1)


def _check_tridiagonal(rt: CorrelationMatrix) -> float:
    if rt.form == "identity":
        return 0.0
    if rt.form == "tridiagonal":
        return rt.rho
    raise NotImplementedError("Step 2 is implemented for identity or tridiagonal Rt only")


def tilted_chain(state: DemodState, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Fields and couplings of the tilted measure in +-1 spin form."""
    m = state.m
    rt_m = m.copy()
    rt_m[:-1] += rho * m[1:]
    rt_m[1:] += rho * m[:-1]
    fields = state.h + state.chi_hat * rt_m
    couplings = np.full(len(m) - 1, -state.chi_hat * rho)
    return fields, couplings


def demod_step2_chain(state: DemodState, rt: CorrelationMatrix) -> DemodState:
    """New posterior means and the Rt-weighted posterior variance."""
    rho = _check_tridiagonal(rt)
    f, J = tilted_chain(state, rho)
    if len(f) == 1:
        m = np.tanh(f)
        pair = np.zeros(0)
    else:
        m, pair = chain_moments(f, J)
    var = np.sum(1.0 - m**2) + 2.0 * rho * np.sum(pair - m[:-1] * m[1:])
    return replace(state, m=m, chi=float(max(var, 0.0) / len(m)))


def demod_run(ch: ChannelInstance, r: np.ndarray, rt: CorrelationMatrix | None = None,
              opts: DemodOptions | None = None, spec_rr: Spectrum | None = None) -> DemodResult:
    """Iterate Steps 1-2 until max|m_t - m_{t-1}| < tol or max_iter; hard decisions sgn(m)."""
    opts = DemodOptions() if opts is None else opts
    rt = ch.rt if rt is None else rt
    if r.shape != (ch.L,):
        raise ValueError("received vector has the wrong length")
    state = demod_init(ch.K)
    trace = []
    converged = False
    for _ in range(opts.max_iter):
        old = state.m
        state = demod_step1(state, ch, r, spec_rr)
        state = demod_step2_chain(state, rt)
        if opts.damping:
            state = replace(state, m=(1 - opts.damping) * state.m + opts.damping * old)
        delta = float(np.max(np.abs(state.m - old)))
        trace.append({"t": state.t, "chi": state.chi, "chi_hat": state.chi_hat,
                      "h_norm": float(np.linalg.norm(state.h)), "delta_m": delta})
        if delta < opts.tol:
            converged = True
            break
    b_hat = np.where(state.m >= 0, 1.0, -1.0)
    return DemodResult(b_hat, state.m, converged, state.t, state, trace)


def stationarity_residuals(state: DemodState, ch: ChannelInstance, r: np.ndarray,
                           rt: CorrelationMatrix, spec_rr: Spectrum | None = None
                           ) -> tuple[float, float, float]:
    """Residuals of the three fixed-point conditions (h, m and chi_hat)."""
    spec_rr = Spectrum.delta(1.0) if spec_rr is None else spec_rr
    h_res = np.max(np.abs(state.h - ch.H.T @ (r - ch.H @ state.m) / ch.sigma2))
    m_new = demod_step2_chain(state, rt)
    m_res = np.max(np.abs(m_new.m - state.m))
    chi_hat = -g_derivative(spec_rr, ch.beta, -m_new.chi / ch.sigma2) / ch.sigma2
    return float(h_res), float(m_res), float(abs(chi_hat - state.chi_hat))


def map_oracle(ch: ChannelInstance, r: np.ndarray) -> np.ndarray:
    """Symbol-wise maximizer of the exact posterior marginals (exhaustive, K <= 16)."""
    K = ch.K
    if K > 16:
        raise ValueError("exhaustive enumeration limited to K <= 16")
    B = np.array(list(itertools.product((1.0, -1.0), repeat=K)))
    e = -np.sum((r[None, :] - B @ ch.H.T) ** 2, axis=1) / (2.0 * ch.sigma2)
    w = np.exp(e - e.max())
    m = (w @ B) / w.sum()
    return np.where(m >= 0, 1.0, -1.0)
