"""Kronecker MIMO channels r = sqrt(Rr) Xi sqrt(Rt) b + sigma * noise."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

PSD_TOL = 1e-12


class FieldKind(str, Enum):
    REAL = "real"
    COMPLEX = "complex"


class Constellation(str, Enum):
    BPSK = "bpsk"
    QPSK = "qpsk"

    @property
    def symbols(self) -> np.ndarray:
        if self is Constellation.BPSK:
            return np.array([1.0, -1.0])
        s = 1.0 / np.sqrt(2.0)
        return np.array([s + 1j * s, s - 1j * s, -s + 1j * s, -s - 1j * s])

    @property
    def field_kind(self) -> FieldKind:
        return FieldKind.REAL if self is Constellation.BPSK else FieldKind.COMPLEX

    @property
    def log_size(self) -> float:
        """Prior entropy ln|B| in nats."""
        return float(np.log(len(self.symbols)))


def trial_rng(seed: int, *index: int) -> np.random.Generator:
    """Counter-based stream for the trial labelled ``index`` under master ``seed``."""
    keys = [int(seed), *(int(i) for i in index)] if index else [int(seed), 0]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(keys)))


class CorrelationMatrix:
    """Hermitian PSD correlation matrix: identity, tridiagonal(rho) or dense."""

    def __init__(self, dim: int, form: str = "identity", rho: float = 0.0, entries=None):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        self.form = form
        self.rho = float(rho)
        if form == "identity":
            self._dense = None
        elif form == "tridiagonal":
            if abs(rho) > 0.5:
                raise ValueError(f"|rho| must not exceed 1/2, got {rho}")
            self._dense = None
        elif form == "dense":
            a = np.asarray(entries)
            if a.shape != (dim, dim):
                raise ValueError(f"expected a {dim}x{dim} matrix, got {a.shape}")
            if not np.allclose(a, a.conj().T, atol=1e-12):
                raise ValueError("correlation matrix must be Hermitian")
            self._dense = 0.5 * (a + a.conj().T)
        else:
            raise ValueError(f"unknown correlation form {form!r}")
        self._eig = None
        lo = float(self.eigenvalues()[0])
        if lo < -PSD_TOL * max(1.0, float(self.eigenvalues()[-1])):
            raise ValueError(f"correlation matrix not PSD: smallest eigenvalue {lo}")

    @classmethod
    def identity(cls, dim: int) -> "CorrelationMatrix":
        return cls(dim, "identity")

    @classmethod
    def tridiagonal(cls, dim: int, rho: float) -> "CorrelationMatrix":
        return cls(dim, "tridiagonal", rho=rho)

    @classmethod
    def dense(cls, entries) -> "CorrelationMatrix":
        a = np.asarray(entries)
        return cls(a.shape[0], "dense", entries=a)

    def matrix(self) -> np.ndarray:
        if self.form == "identity":
            return np.eye(self.dim)
        if self.form == "tridiagonal":
            m = np.eye(self.dim)
            i = np.arange(self.dim - 1)
            m[i, i + 1] = m[i + 1, i] = self.rho
            return m
        return self._dense.copy()

    def _eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if self._eig is None:
            self._eig = np.linalg.eigh(self.matrix())
        return self._eig

    def eigenvalues(self) -> np.ndarray:
        if self.form == "identity":
            return np.ones(self.dim)
        if self.form == "tridiagonal":
            k = np.arange(1, self.dim + 1)
            return np.sort(1.0 + 2.0 * self.rho * np.cos(k * np.pi / (self.dim + 1)))
        return self._eigh()[0]

    def sqrt(self) -> np.ndarray:
        """Hermitian PSD square root via the eigendecomposition."""
        return matrix_sqrt(self)

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.matrix())

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix())))


def matrix_sqrt(c: CorrelationMatrix) -> np.ndarray:
    if c.form == "identity":
        return np.eye(c.dim)
    w, v = c._eigh()
    w = np.clip(w, 0.0, None)
    s = (v * np.sqrt(w)) @ v.conj().T
    return 0.5 * (s + s.conj().T)


def sample_xi(L: int, K: int, field_kind: FieldKind | str, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Gaussian L x K matrix with E|Xi_lk|^2 = 1/L."""
    if L < 1 or K < 1:
        raise ValueError("matrix dimensions must be positive")
    if FieldKind(field_kind) is FieldKind.REAL:
        return rng.standard_normal((L, K)) / np.sqrt(L)
    scale = 1.0 / np.sqrt(2.0 * L)
    return scale * (rng.standard_normal((L, K)) + 1j * rng.standard_normal((L, K)))


@dataclass(frozen=True)
class ChannelInstance:
    H: np.ndarray
    Xi: np.ndarray
    sigma2: float
    rr: CorrelationMatrix
    rt: CorrelationMatrix
    field_kind: FieldKind = FieldKind.REAL

    @property
    def L(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def beta(self) -> float:
        return self.K / self.L


def snr_to_sigma2(snr_db: float, rr: CorrelationMatrix, rt: CorrelationMatrix) -> float:
    """Noise power for a given SNR in dB.

    SNR is the expected received signal power per receive dimension over the
    noise power.  With unit-power i.i.d. symbols and E|Xi_lk|^2 = 1/L,
    E|Hb|^2 / L = Tr(Rr) Tr(Rt) / L^2.
    """
    if not np.isfinite(snr_db):
        raise ValueError("SNR must be finite")
    power = rr.trace() * rt.trace() / rr.dim**2
    return power / 10.0 ** (snr_db / 10.0)


SIGMA2_CONVENTION = "sigma2=Tr(Rr)Tr(Rt)/L^2/10^(snr_db/10)"


def make_channel(L: int, K: int, rr: CorrelationMatrix, rt: CorrelationMatrix, sigma2: float,
                 rng: np.random.Generator, field_kind: FieldKind | str = FieldKind.REAL
                 ) -> ChannelInstance:
    if rr.dim != L or rt.dim != K:
        raise ValueError("correlation dimensions do not match (L, K)")
    if sigma2 < 0:
        raise ValueError("noise power must be nonnegative")
    xi = sample_xi(L, K, field_kind, rng)
    h = xi
    if rr.form != "identity":
        h = matrix_sqrt(rr) @ h
    if rt.form != "identity":
        h = h @ matrix_sqrt(rt)
    return ChannelInstance(h, xi, float(sigma2), rr, rt, FieldKind(field_kind))


def random_symbols(K: int, constellation: Constellation, rng: np.random.Generator) -> np.ndarray:
    sym = Constellation(constellation).symbols
    return sym[rng.integers(0, len(sym), size=K)]


def transmit(ch: ChannelInstance, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """r = H b + sigma * noise, noise standard normal (complex: unit power, circular)."""
    b = np.asarray(b)
    if b.shape != (ch.K,):
        raise ValueError(f"expected {ch.K} symbols, got shape {b.shape}")
    sigma = np.sqrt(ch.sigma2)
    if ch.field_kind is FieldKind.REAL:
        noise = rng.standard_normal(ch.L)
    else:
        noise = (rng.standard_normal(ch.L) + 1j * rng.standard_normal(ch.L)) / np.sqrt(2.0)
    return ch.H @ b + sigma * noise
