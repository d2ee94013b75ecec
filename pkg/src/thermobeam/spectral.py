"""Sine-basis representation of fields on (0, 1) with hinged ends.

A field is stored by its coefficients ``a_n`` against the orthonormal
eigenfunctions ``e_n(x) = sqrt(2) sin(n pi x)`` of the fourth-derivative
operator ``A``.  ``A`` acts diagonally with eigenvalues ``lambda_n = (n pi)^4``;
its square root ``A^{1/2} = -d^2/dx^2`` has eigenvalues ``mu_n = (n pi)^2``.
The scale of norms is ``||u||_r^2 = sum_n mu_n^r a_n^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "BasisSpec",
    "SpectralField",
    "make_basis",
    "norm_r",
    "inner_r",
    "apply_A_power",
    "norm_gamma",
    "sample_physical",
]

# above this many modes the weighted sums go through math.fsum
COMPENSATED_THRESHOLD = 1000


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Hinged sine basis truncated to ``N`` modes."""

    N: int
    mu: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)

    @property
    def lambda1(self) -> float:
        return float(self.lam[0])

    def __eq__(self, other):
        return isinstance(other, BasisSpec) and other.N == self.N

    def __hash__(self):
        return hash(("BasisSpec", self.N))

    def zeros(self) -> "SpectralField":
        return SpectralField(np.zeros(self.N), self)

    def mode(self, n: int, amplitude: float = 1.0) -> "SpectralField":
        """Single-mode field ``amplitude * e_n`` (1-based ``n``)."""
        if not 1 <= n <= self.N:
            raise ValueError(f"mode {n} outside 1..{self.N}")
        c = np.zeros(self.N)
        c[n - 1] = amplitude
        return SpectralField(c, self)

    def field(self, coeffs) -> "SpectralField":
        return SpectralField(np.asarray(coeffs, dtype=float), self)


@lru_cache(maxsize=None)
def make_basis(N: int = 32) -> BasisSpec:
    if int(N) != N or N < 1:
        raise ValueError(f"mode count must be a positive integer, got {N!r}")
    n = np.arange(1, int(N) + 1, dtype=float)
    mu = (n * np.pi) ** 2
    lam = mu * mu
    mu.setflags(write=False)
    lam.setflags(write=False)
    return BasisSpec(int(N), mu, lam)


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    basis: BasisSpec

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.N,):
            raise ValueError(
                f"coefficient vector has shape {c.shape}, basis expects ({self.basis.N},)"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral field has non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.basis != self.basis:
            raise ValueError("spectral fields live on different bases")
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return SpectralField(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return SpectralField(self.coeffs - other.coeffs, self.basis)

    def __neg__(self):
        return SpectralField(-self.coeffs, self.basis)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.coeffs * float(scalar), self.basis)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return SpectralField(self.coeffs / float(scalar), self.basis)

    def allclose(self, other, atol=1e-12, rtol=0.0) -> bool:
        return self.basis == other.basis and np.allclose(
            self.coeffs, other.coeffs, atol=atol, rtol=rtol
        )


def _weighted_sum(weights: np.ndarray, values: np.ndarray) -> float:
    terms = weights * values
    if terms.size > COMPENSATED_THRESHOLD:
        return math.fsum(terms.tolist())
    return float(np.sum(terms))


def _weights(basis: BasisSpec, r: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return basis.mu ** r


def norm_r(f: SpectralField, r: float) -> float:
    """``||f||_r = (sum mu_n^r a_n^2)^{1/2}``.

    Raises OverflowError when the weighted sum leaves double range.
    """
    total = _weighted_sum(_weights(f.basis, r), f.coeffs * f.coeffs)
    if not math.isfinite(total):
        raise OverflowError(f"H^{r} norm overflows for N={f.basis.N}")
    return math.sqrt(total)


def inner_r(f1: SpectralField, f2: SpectralField, r: float) -> float:
    if f1.basis != f2.basis:
        raise ValueError("inner product of fields on different bases")
    total = _weighted_sum(_weights(f1.basis, r), f1.coeffs * f2.coeffs)
    if not math.isfinite(total):
        raise OverflowError(f"H^{r} inner product overflows for N={f1.basis.N}")
    return total


def apply_A_power(f: SpectralField, s: float) -> SpectralField:
    """Coefficient-wise ``a_n -> lambda_n^s a_n``; ``s=-1/2`` gives ``A^{-1/2}``."""
    with np.errstate(over="ignore"):
        c = f.basis.lam ** s * f.coeffs
    if not np.all(np.isfinite(c)):
        raise OverflowError(f"A^{s} overflows for N={f.basis.N}")
    return SpectralField(c, f.basis)


def norm_gamma(f: SpectralField, r: float, gamma: float) -> float:
    """Rotational norm ``(||f||_{r-1}^2 + gamma ||f||_r^2)^{1/2}``."""
    if gamma < 0:
        raise ValueError(f"rotational parameter must be >= 0, got {gamma}")
    lo = norm_r(f, r - 1.0)
    if gamma == 0:
        return lo
    hi = norm_r(f, r)
    return math.sqrt(lo * lo + gamma * hi * hi)


def sample_physical(f: SpectralField, xs) -> np.ndarray:
    """Evaluate ``u(x) = sum a_n sqrt(2) sin(n pi x)`` at points of [0, 1]."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(xs < 0.0) or np.any(xs > 1.0):
        raise ValueError("sample points must lie in [0, 1]")
    n = np.arange(1, f.basis.N + 1)
    vals = math.sqrt(2.0) * np.sin(np.pi * np.outer(xs, n)) @ f.coeffs
    # exact zeros at the hinges; sin(n*pi) is only ~1e-16 in floating point
    vals[(xs == 0.0) | (xs == 1.0)] = 0.0
    return vals
