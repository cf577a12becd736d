"""Dense linear-algebra substrate for bipartite density matrices.

Everything here works on small dense complex matrices (total dimension
at most ~100). Entropies are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10


class StateError(ValueError):
    """Raised when a matrix violates a density-matrix invariant."""


def _as_square(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StateError(f"expected a square matrix, got shape {m.shape}")
    return m


class DensityMatrix:
    """Trace-one PSD operator on H_A (x) H_B.

    The underlying array is copied and made read-only, so instances can be
    shared freely. ``validate=False`` skips the invariant checks and is meant
    for hot loops that build states from already-valid pieces.
    """

    __slots__ = ("dim_a", "dim_b", "matrix")

    def __init__(self, matrix, dim_a: int, dim_b: int | None = None, validate: bool = True):
        m = _as_square(matrix).copy()
        if dim_b is None:
            dim_b = m.shape[0] // dim_a if dim_a else 0
        if dim_a < 1 or dim_b < 1 or dim_a * dim_b != m.shape[0]:
            raise StateError(
                f"declared dims ({dim_a}, {dim_b}) do not match matrix size {m.shape[0]}"
            )
        if validate:
            check_density(m)
        m.setflags(write=False)
        self.dim_a = int(dim_a)
        self.dim_b = int(dim_b)
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.dim_a * self.dim_b

    @classmethod
    def from_ket(cls, ket, dim_a: int, dim_b: int | None = None) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), dim_a, dim_b)

    @classmethod
    def maximally_mixed(cls, dim_a: int, dim_b: int | None = None) -> "DensityMatrix":
        dim_b = dim_a if dim_b is None else dim_b
        n = dim_a * dim_b
        return cls(np.eye(n) / n, dim_a, dim_b)

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        """Product state self (x) other, treating each operand as one party."""
        return DensityMatrix(np.kron(self.matrix, other.matrix), self.dim, other.dim)

    def __repr__(self) -> str:
        return f"DensityMatrix(dim_a={self.dim_a}, dim_b={self.dim_b})"


def check_density(m: np.ndarray) -> None:
    herm = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if herm > HERMITIAN_TOL:
        raise StateError(f"matrix is not Hermitian (max deviation {herm:.3e})")
    tr = np.trace(m).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StateError(f"trace is {tr!r}, expected 1")
    lo = np.linalg.eigvalsh(m)[0]
    if lo < -PSD_TOL:
        raise StateError(f"matrix is not positive semidefinite (min eigenvalue {lo:.3e})")


def partial_trace_array(m: np.ndarray, dim_a: int, dim_b: int, keep: str = "A") -> np.ndarray:
    """Partial trace on raw arrays; works on a leading batch axis too."""
    t = m.reshape(m.shape[:-2] + (dim_a, dim_b, dim_a, dim_b))
    if keep == "A":
        return np.einsum("...ijkj->...ik", t)
    if keep == "B":
        return np.einsum("...ijil->...jl", t)
    raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")


def partial_trace(rho: DensityMatrix, keep: str = "A") -> DensityMatrix:
    """Reduced state on subsystem ``keep`` ('A' or 'B')."""
    if rho.matrix.shape[0] != rho.dim_a * rho.dim_b:
        raise StateError("declared subsystem dimensions do not match matrix size")
    red = partial_trace_array(rho.matrix, rho.dim_a, rho.dim_b, keep)
    d = rho.dim_a if keep == "A" else rho.dim_b
    return DensityMatrix(red, d, 1)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, same order

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def clamp_eigenvalues(w: np.ndarray) -> np.ndarray:
    if w.size and w.min() < -PSD_TOL:
        raise StateError(f"eigenvalue {w.min():.3e} below PSD tolerance")
    return np.clip(w, 0.0, 1.0)


def spectral_decompose(rho) -> Spectrum:
    """Eigen-decomposition with eigenvalues sorted descending.

    Accepts a DensityMatrix (eigenvalues clamped to [0, 1]) or any Hermitian
    array (eigenvalues returned as-is).
    """
    if isinstance(rho, DensityMatrix):
        m, is_state = rho.matrix, True
    else:
        m, is_state = _as_square(rho), False
        herm = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if herm > HERMITIAN_TOL:
            raise StateError(f"matrix is not Hermitian (max deviation {herm:.3e})")
    w, v = np.linalg.eigh(m)
    w, v = w[::-1], v[:, ::-1]
    if is_state:
        w = clamp_eigenvalues(w)
    w.setflags(write=False)
    v.setflags(write=False)
    return Spectrum(w, v)


def entropy_of_spectrum(w) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > 0]
    return float(-np.sum(w * np.log2(w))) + 0.0


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S(rho) = -sum l log2 l in bits, with 0 log 0 = 0."""
    w = clamp_eigenvalues(np.linalg.eigvalsh(rho.matrix))
    return entropy_of_spectrum(w)


def moment(rho: DensityMatrix, m: int) -> float:
    """Tr(rho^m) from the clamped spectrum."""
    if int(m) != m or m < 1:
        raise ValueError(f"moment order must be a positive integer, got {m!r}")
    if m == 1:
        return float(np.trace(rho.matrix).real)
    w = clamp_eigenvalues(np.linalg.eigvalsh(rho.matrix))
    return float(np.sum(w ** int(m)))
