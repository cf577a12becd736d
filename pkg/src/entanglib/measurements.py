"""Local projective measurements and the joint outcome statistics they produce.

A measurement on a d-level system is stored as a unitary whose columns are
its eigenvectors; outcome r corresponds to column r. Trainable devices are
parameterised as U = exp(iH(theta)) with H Hermitian and theta in R^(d^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur

from .qcore import DensityMatrix

ORTHO_TOL = 1e-10
PROB_TOL = 1e-12


class Measurement:
    __slots__ = ("dim", "eigenvectors")

    def __init__(self, eigenvectors, validate: bool = True):
        v = np.array(eigenvectors, dtype=complex)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"eigenvector matrix must be square, got {v.shape}")
        if validate:
            err = np.max(np.abs(v.conj().T @ v - np.eye(len(v))))
            if err > ORTHO_TOL:
                raise ValueError(f"eigenvectors are not orthonormal (error {err:.2e})")
        v.setflags(write=False)
        self.dim = len(v)
        self.eigenvectors = v

    def projectors(self) -> np.ndarray:
        """(d, d, d) stack of rank-1 projectors, one per outcome."""
        v = self.eigenvectors
        return np.einsum("ir,jr->rij", v, v.conj())

    def __repr__(self) -> str:
        return f"Measurement(dim={self.dim})"


def cglmp_basis(d: int, n_settings: int, party: str, k: int) -> Measurement:
    """Fourier-phase basis of setting k (1-based) for party 'A' or 'B'."""
    if not 1 <= k <= n_settings:
        raise ValueError(f"setting index {k} outside 1..{n_settings}")
    q = np.arange(d)[:, None]
    r = np.arange(d)[None, :]
    if party == "A":
        shift, sign = (k - 0.5) / n_settings, 1.0
    elif party == "B":
        shift, sign = k / n_settings, -1.0
    else:
        raise ValueError(f"party must be 'A' or 'B', got {party!r}")
    v = np.exp(sign * 2j * np.pi / d * q * (r - shift)) / math.sqrt(d)
    return Measurement(v)


def cglmp_devices(d: int, n_settings: int) -> tuple[list[Measurement], list[Measurement]]:
    a = [cglmp_basis(d, n_settings, "A", k) for k in range(1, n_settings + 1)]
    b = [cglmp_basis(d, n_settings, "B", k) for k in range(1, n_settings + 1)]
    return a, b


def n_params(d: int) -> int:
    return d * d


def hermitian_from_params(theta, d: int) -> np.ndarray:
    """d real diagonal entries, then (re, im) of each upper off-diagonal in row order."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != d * d:
        raise ValueError(f"expected {d * d} parameters per device, got {theta.shape[-1]}")
    h = np.zeros(theta.shape[:-1] + (d, d), dtype=complex)
    idx = np.arange(d)
    h[..., idx, idx] = theta[..., :d]
    iu, ju = np.triu_indices(d, 1)
    off = theta[..., d:].reshape(theta.shape[:-1] + (-1, 2))
    z = off[..., 0] + 1j * off[..., 1]
    h[..., iu, ju] = z
    h[..., ju, iu] = z.conj()
    return h


def _hermitian_grad_to_params(gh: np.ndarray, d: int) -> np.ndarray:
    """Map a complex gradient w.r.t. H entries (dL = Re sum conj(gh) dH) to theta."""
    idx = np.arange(d)
    iu, ju = np.triu_indices(d, 1)
    diag = gh[..., idx, idx].real
    upper, lower = gh[..., iu, ju], gh[..., ju, iu]
    re = (upper + lower).real
    im = upper.imag - lower.imag
    off = np.stack([re, im], axis=-1).reshape(gh.shape[:-2] + (-1,))
    return np.concatenate([diag, off], axis=-1)


@dataclass
class _Expm:
    """exp(iH) with the pieces needed to differentiate it."""

    unitary: np.ndarray
    vecs: np.ndarray
    divdiff: np.ndarray  # D_jk = (e^{i l_j} - e^{i l_k}) / (l_j - l_k), limit i e^{i l}


def _expm_ih(h: np.ndarray) -> _Expm:
    lam, w = np.linalg.eigh(h)
    ph = np.exp(1j * lam)
    u = (w * ph[..., None, :]) @ np.swapaxes(w.conj(), -1, -2)
    mid = 0.5 * (lam[..., :, None] + lam[..., None, :])
    delta = lam[..., :, None] - lam[..., None, :]
    # sin(delta/2)/(delta/2) form is exact at delta = 0
    divdiff = 1j * np.exp(1j * mid) * np.sinc(delta / (2 * np.pi))
    return _Expm(u, w, divdiff)


def params_from_unitary(u: np.ndarray) -> np.ndarray:
    """Some theta with exp(iH(theta)) = u (principal branch of the log)."""
    u = np.asarray(u, dtype=complex)
    d = len(u)
    # a unitary is normal, so the Schur form is diagonal
    t, z = schur(u, output="complex")
    phases = np.angle(np.diag(t))
    h = (z * phases) @ z.conj().T
    h = 0.5 * (h + h.conj().T)
    iu, ju = np.triu_indices(d, 1)
    off = np.stack([h[iu, ju].real, h[iu, ju].imag], axis=-1).ravel()
    return np.concatenate([np.diag(h).real, off])


def params_to_measurement(theta, d: int) -> Measurement:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d * d,):
        raise ValueError(f"expected {d * d} parameters, got shape {theta.shape}")
    return Measurement(_expm_ih(hermitian_from_params(theta, d)).unitary)


@dataclass
class MeasurementParams:
    """Trainable parameters of 2N local devices ordered A_1..A_N, B_1..B_N.

    With ``tied`` set, Bob's devices reuse Alice's parameters and ``theta``
    holds only N rows.
    """

    theta: np.ndarray  # (2N, d^2), or (N, d^2) when tied
    n_settings: int
    dim: int
    tied: bool = False

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        rows = self.n_settings if self.tied else 2 * self.n_settings
        if self.theta.shape != (rows, self.dim**2):
            raise ValueError(f"theta must have shape {(rows, self.dim ** 2)}, got {self.theta.shape}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta has non-finite entries")

    @classmethod
    def cglmp(cls, n_settings: int, dim: int, tied: bool = False) -> "MeasurementParams":
        """Parameters reproducing the fixed CGLMP devices (up to column phases)."""
        a, b = cglmp_devices(dim, n_settings)
        devs = a if tied else a + b
        return cls(np.stack([params_from_unitary(m.eigenvectors) for m in devs]), n_settings, dim, tied)

    @classmethod
    def zeros(cls, n_settings: int, dim: int, tied: bool = False) -> "MeasurementParams":
        rows = n_settings if tied else 2 * n_settings
        return cls(np.zeros((rows, dim * dim)), n_settings, dim, tied)

    def full_theta(self) -> np.ndarray:
        return np.concatenate([self.theta, self.theta]) if self.tied else self.theta

    def unitaries(self) -> tuple[np.ndarray, np.ndarray]:
        u = _expm_ih(hermitian_from_params(self.full_theta(), self.dim)).unitary
        return u[: self.n_settings], u[self.n_settings :]

    def devices(self) -> tuple[list[Measurement], list[Measurement]]:
        ua, ub = self.unitaries()
        return [Measurement(u) for u in ua], [Measurement(u) for u in ub]


@dataclass
class CorrelationTensor:
    """p(ab|xy) stored with axes (x, y, a, b)."""

    values: np.ndarray

    @property
    def n_settings_a(self) -> int:
        return self.values.shape[0]

    @property
    def n_settings_b(self) -> int:
        return self.values.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def grid(self) -> np.ndarray:
        """(N d) x (N d) image with rows (x, a) and columns (y, b)."""
        return grid_layout(self.values)

    def check(self, tol: float = 1e-9) -> None:
        check_correlation_array(self.values, tol)


def check_correlation_array(p: np.ndarray, tol: float = 1e-9) -> None:
    """Nonnegativity, normalisation and no-signalling over (..., x, y, a, b)."""
    if p.min() < 0:
        raise ValueError("negative probability")
    norm = p.sum(axis=(-2, -1))
    if np.max(np.abs(norm - 1)) > tol:
        raise ValueError("correlation slices are not normalised")
    marg_a = p.sum(axis=-1)  # (..., x, y, a)
    marg_b = p.sum(axis=-2)  # (..., x, y, b)
    if np.max(np.abs(marg_a - marg_a[..., :1, :])) > tol or np.max(np.abs(marg_b - marg_b[..., :1, :, :])) > tol:
        raise ValueError("correlations violate no-signalling")


def grid_layout(p: np.ndarray) -> np.ndarray:
    """Reshape (..., x, y, a, b) into (..., N_A d, N_B d) images."""
    *lead, nx, ny, da, db = p.shape
    return np.moveaxis(p, -3, -2).reshape(*lead, nx * da, ny * db)


def _b_contracted(rhos: np.ndarray, ub: np.ndarray, da: int, db: int) -> np.ndarray:
    """T[s,y,b,i,k] = <b_y| rho_s |b_y> as an operator on A."""
    r = rhos.reshape(-1, da, db, da, db)
    return np.einsum("yjb,sijkl,ylb->sybik", ub.conj(), r, ub, optimize=True)


def _a_contracted(rhos: np.ndarray, ua: np.ndarray, da: int, db: int) -> np.ndarray:
    r = rhos.reshape(-1, da, db, da, db)
    return np.einsum("xia,sijkl,xka->sxajl", ua.conj(), r, ua, optimize=True)


def _clean_probs(p: np.ndarray) -> np.ndarray:
    if p.min() < -PROB_TOL:
        raise ValueError(f"probability {p.min():.3e} below tolerance")
    p = np.maximum(p, 0.0)
    return p / p.sum(axis=(-2, -1), keepdims=True)


def correlation_array(rhos: np.ndarray, ua: np.ndarray, ub: np.ndarray, da: int, db: int) -> np.ndarray:
    """Batched Born probabilities, (S, N_A, N_B, d_A, d_B) from stacked rho and unitaries."""
    t = _b_contracted(rhos, ub, da, db)
    p = np.einsum("xia,sybik,xka->sxyab", ua.conj(), t, ua, optimize=True).real
    return _clean_probs(p)


def _stack(devs: list[Measurement]) -> np.ndarray:
    return np.stack([m.eigenvectors for m in devs])


def correlations(rho: DensityMatrix, a_devices: list[Measurement], b_devices: list[Measurement]) -> CorrelationTensor:
    """p(ab|xy) = Tr[(M_x^a (x) N_y^b) rho]."""
    if any(m.dim != rho.dim_a for m in a_devices) or any(m.dim != rho.dim_b for m in b_devices):
        raise ValueError("device dimension does not match subsystem dimension")
    p = correlation_array(rho.matrix[None], _stack(a_devices), _stack(b_devices), rho.dim_a, rho.dim_b)
    return CorrelationTensor(p[0])


def states_array(states) -> np.ndarray:
    return np.stack([s.matrix for s in states])


def params_correlations(rhos: np.ndarray, params: MeasurementParams) -> np.ndarray:
    ua, ub = params.unitaries()
    return correlation_array(rhos, ua, ub, params.dim, params.dim)


def correlation_vjp(rhos: np.ndarray, params: MeasurementParams, cot: np.ndarray) -> np.ndarray:
    """Gradient of sum(cot * p) w.r.t. theta.

    ``rhos`` is (S, D, D); ``cot`` is (C, S, N, N, d, d) with C independent
    cotangents (C=1 for training). Returns (C,) + params.theta.shape.
    """
    n, d = params.n_settings, params.dim
    ex = _expm_ih(hermitian_from_params(params.full_theta(), d))
    ua, ub = ex.unitary[:n], ex.unitary[n:]
    t_b = _b_contracted(rhos, ub, d, d)  # (S, y, b, i, k)
    t_a = _a_contracted(rhos, ua, d, d)  # (S, x, a, j, l)
    # complex gradients 2 dL/d conj(U) for every device column
    gam_a = 2 * np.einsum("csxyab,sybik,xka->cxia", cot, t_b, ua, optimize=True)
    gam_b = 2 * np.einsum("csxyab,sxajl,ylb->cyjb", cot, t_a, ub, optimize=True)
    gam = np.concatenate([gam_a, gam_b], axis=1)  # (C, 2N, d, d)
    w = ex.vecs
    wh = np.swapaxes(w.conj(), -1, -2)
    inner = wh @ gam @ w
    gh = w @ (ex.divdiff.conj() * inner) @ wh
    grad = _hermitian_grad_to_params(gh, d)  # (C, 2N, d^2)
    if params.tied:
        grad = grad[:, :n] + grad[:, n:]
    return grad


def correlation_jacobian(rho: DensityMatrix, params: MeasurementParams) -> np.ndarray:
    """dp(ab|xy)/dtheta with shape (N, N, d, d) + params.theta.shape."""
    n, d = params.n_settings, params.dim
    out_shape = (n, n, d, d)
    size = int(np.prod(out_shape))
    cot = np.eye(size).reshape((size, 1) + out_shape)
    jac = correlation_vjp(rho.matrix[None], params, cot)
    return jac.reshape(out_shape + params.theta.shape)
