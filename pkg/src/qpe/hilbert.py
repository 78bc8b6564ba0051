"""Truncated-Fock-space operator algebra and density-matrix states.

Everything downstream (integrators, models, estimators) works with the dense
complex matrices defined here.  Dimensions are small (typically <= 64), so
dense numpy arrays are both the simplest and the fastest representation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, NonPhysicalState, TruncationWarning

# Tolerances for "physical" density matrices.  The eigenvalue floor is loose
# enough to absorb Euler-Maruyama transients without masking real blowups.
TRACE_TOL = 1e-9
HERM_TOL = 1e-9
EIGEN_FLOOR = -1e-7


@dataclass(frozen=True)
class HilbertSpace:
    """A truncated Fock space of dimension ``dim`` (levels 0..dim-1)."""

    dim: int

    def __post_init__(self) -> None:
        if not isinstance(self.dim, int) or self.dim < 2:
            raise ValueError(f"Hilbert space dimension must be an integer >= 2, got {self.dim!r}")

    def identity(self) -> "Operator":
        return Operator(self, np.eye(self.dim, dtype=complex))


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Operator:
    """A dense operator on a truncated Fock space."""

    space: HilbertSpace
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = _freeze(self.entries)
        if entries.shape != (self.space.dim, self.space.dim):
            raise ValueError(
                f"operator entries must be {self.space.dim}x{self.space.dim}, got {entries.shape}"
            )
        object.__setattr__(self, "entries", entries)

    def dag(self) -> "Operator":
        return Operator(self.space, self.entries.conj().T)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol)

    def __matmul__(self, other: "Operator") -> "Operator":
        _check_spaces(self.space, other.space)
        return Operator(self.space, self.entries @ other.entries)

    def __add__(self, other: "Operator") -> "Operator":
        _check_spaces(self.space, other.space)
        return Operator(self.space, self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_spaces(self.space, other.space)
        return Operator(self.space, self.entries - other.entries)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.space, self.entries * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class QuantumState:
    """A density matrix on a truncated Fock space.

    Constructors in this package always deliver states with trace 1 (within
    1e-9), Hermitian entries, and eigenvalues above the -1e-7 floor.
    """

    space: HilbertSpace
    rho: np.ndarray

    def __post_init__(self) -> None:
        rho = _freeze(self.rho)
        if rho.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"rho must be {self.space.dim}x{self.space.dim}, got {rho.shape}")
        object.__setattr__(self, "rho", rho)

    def trace(self) -> complex:
        return complex(np.trace(self.rho))

    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))


class Quadrature(Enum):
    """Quadrature normalization.

    WIDE:     x = a + a+,        p = i(a+ - a)        => [x, p] = 2i
    STANDARD: x = (a + a+)/√2,   p = i(a+ - a)/√2     => [x, p] = i
    """

    WIDE = "wide"
    STANDARD = "standard"


def _check_spaces(a: HilbertSpace, b: HilbertSpace) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {b.dim}")


def build_ladder(space: HilbertSpace) -> tuple[Operator, Operator]:
    """Return (a, a+) in the Fock basis, a|n> = sqrt(n)|n-1>."""
    n = np.arange(1, space.dim)
    a = np.zeros((space.dim, space.dim), dtype=complex)
    a[n - 1, n] = np.sqrt(n)
    return Operator(space, a), Operator(space, a.conj().T)


def build_quadratures(
    space: HilbertSpace, convention: Quadrature = Quadrature.WIDE
) -> tuple[Operator, Operator]:
    """Position/momentum quadratures in the requested normalization."""
    a, adag = build_ladder(space)
    x = a.entries + adag.entries
    p = 1j * (adag.entries - a.entries)
    if convention is Quadrature.STANDARD:
        x = x / math.sqrt(2.0)
        p = p / math.sqrt(2.0)
    return Operator(space, x), Operator(space, p)


def number_operator(space: HilbertSpace) -> Operator:
    return Operator(space, np.diag(np.arange(space.dim, dtype=complex)))


def fock_density(space: HilbertSpace, n: int) -> QuantumState:
    """The Fock state projector |n><n|."""
    if not 0 <= n < space.dim:
        raise ValueError(f"Fock level {n} out of range [0, {space.dim})")
    rho = np.zeros((space.dim, space.dim), dtype=complex)
    rho[n, n] = 1.0
    return QuantumState(space, rho)


def coherent_amplitudes(space: HilbertSpace, alpha: complex) -> np.ndarray:
    """Truncated coherent-state amplitudes c_n = e^{-|α|²/2} α^n / sqrt(n!)."""
    if alpha == 0:
        c = np.zeros(space.dim, dtype=complex)
        c[0] = 1.0
        return c
    n = np.arange(space.dim)
    # log-domain for numerical safety at larger |alpha|
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, space.dim)))))
    mag = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * log_fact)
    phase = np.exp(1j * n * np.angle(alpha))
    return mag * phase


def coherent_density(space: HilbertSpace, alpha: complex) -> QuantumState:
    """|α><α| on the truncated space, renormalized to trace 1.

    Warns with TruncationWarning when the truncated norm deficit exceeds 1e-6
    (rule of thumb: keep |α|² <= dim/4).
    """
    c = coherent_amplitudes(space, alpha)
    norm_sq = float(np.sum(np.abs(c) ** 2))
    if 1.0 - norm_sq > 1e-6:
        warnings.warn(
            f"coherent state alpha={alpha} loses norm {1.0 - norm_sq:.3e} at dim={space.dim}",
            TruncationWarning,
            stacklevel=2,
        )
    rho = np.outer(c, c.conj()) / norm_sq
    return QuantumState(space, rho)


def expect(state: QuantumState, op: Operator) -> complex:
    """Tr[rho op]."""
    _check_spaces(state.space, op.space)
    return complex(np.trace(state.rho @ op.entries))


def check_physical(state: QuantumState, eigen_floor: float = EIGEN_FLOOR) -> None:
    """Raise NonPhysicalState when trace/Hermiticity/positivity tolerances fail."""
    tr = state.trace()
    if abs(tr - 1.0) > 1e-6:
        raise NonPhysicalState(f"trace {tr} deviates from 1")
    herm = float(np.max(np.abs(state.rho - state.rho.conj().T)))
    if herm > 1e-6:
        raise NonPhysicalState(f"Hermiticity violation {herm:.3e}")
    min_eig = float(np.linalg.eigvalsh(0.5 * (state.rho + state.rho.conj().T)).min())
    if min_eig < eigen_floor:
        raise NonPhysicalState(f"eigenvalue {min_eig:.3e} below floor {eigen_floor:.1e}")


def fidelity(a: QuantumState, b: QuantumState, eigen_floor: float = EIGEN_FLOOR) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))².

    ``eigen_floor`` can be loosened when comparing raw Euler-Maruyama
    iterates, whose spectra transiently dip below the constructor tolerance.
    """
    _check_spaces(a.space, b.space)
    check_physical(a, eigen_floor)
    check_physical(b, eigen_floor)
    evals, vecs = np.linalg.eigh(0.5 * (a.rho + a.rho.conj().T))
    evals = np.clip(evals, 0.0, None)
    sqrt_a = (vecs * np.sqrt(evals)) @ vecs.conj().T
    inner = sqrt_a @ b.rho @ sqrt_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    w = np.clip(w, 0.0, None)
    f = float(np.sum(np.sqrt(w)) ** 2)
    return min(max(f, 0.0), 1.0)
