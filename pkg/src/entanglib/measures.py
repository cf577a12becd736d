"""Entanglement labels: coherent information and relative entropy of entanglement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .qcore import DensityMatrix, clamp_eigenvalues, entropy_of_spectrum, partial_trace_array
from .states import rng_stream

LN2 = math.log(2.0)
LOG_FLOOR = 1e-12


def coherent_information(rho: DensityMatrix) -> float:
    """I_C = S(rho_A) - S(rho), in bits."""
    red = partial_trace_array(rho.matrix, rho.dim_a, rho.dim_b, "A")
    s_a = entropy_of_spectrum(clamp_eigenvalues(np.linalg.eigvalsh(red)))
    s = entropy_of_spectrum(clamp_eigenvalues(np.linalg.eigvalsh(rho.matrix)))
    return s_a - s


def _neg_entropy_nats(w: np.ndarray) -> float:
    w = w[w > 0]
    return float(np.sum(w * np.log(w)))


def relative_entropy(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """S(rho || sigma) in bits; ``math.inf`` when supp(rho) is not inside supp(sigma)."""
    if rho.matrix.shape != sigma.matrix.shape:
        raise ValueError("rho and sigma must have the same shape")
    w_r = clamp_eigenvalues(np.linalg.eigvalsh(rho.matrix))
    w_s, v_s = np.linalg.eigh(sigma.matrix)
    w_s = clamp_eigenvalues(w_s)
    # rho-weight on each sigma eigenvector
    overlap = np.einsum("ik,ij,jk->k", v_s.conj(), rho.matrix, v_s).real
    null = w_s < LOG_FLOOR
    if np.any(overlap[null] > 1e-9):
        return math.inf
    cross = float(np.sum(overlap[~null] * np.log(w_s[~null])))
    return max((_neg_entropy_nats(w_r) - cross) / LN2, 0.0)


def isotropic_fidelity(d: int, eps: float) -> float:
    return eps + (1.0 - eps) / d**2


def ree_isotropic_analytic(d: int, eps: float) -> float:
    """Closed-form REE of the isotropic state with weight ``eps`` on |psi+>."""
    if d < 2 or not 0.0 <= eps <= 1.0:
        raise ValueError(f"need d >= 2 and eps in [0, 1], got d={d}, eps={eps}")
    f = isotropic_fidelity(d, eps)
    if f <= 1.0 / d:
        return 0.0
    val = math.log2(d) + f * math.log2(f)
    if f < 1.0:
        val += (1 - f) * math.log2((1 - f) / (d - 1))
    return max(val, 0.0)


@dataclass(frozen=True)
class ReeConfig:
    terms: int | None = None  # defaults to 2 d^2
    restarts: int = 5
    max_iter: int = 2000
    tol: float = 1e-8
    seed: int = 0


@dataclass
class ReeResult:
    upper_bound: float
    weights: np.ndarray  # (K,)
    kets_a: np.ndarray  # (K, d_A) unit vectors
    kets_b: np.ndarray  # (K, d_B)
    iterations: int
    converged: bool

    def closest_sep(self) -> DensityMatrix:
        return DensityMatrix(product_mixture(self.weights, self.kets_a, self.kets_b), len(self.kets_a[0]), len(self.kets_b[0]))


def product_mixture(weights, kets_a, kets_b) -> np.ndarray:
    psi = np.einsum("ki,kj->kij", kets_a, kets_b).reshape(len(weights), -1)
    return np.einsum("k,ki,kj->ij", weights, psi, psi.conj())


class _ProductMixtureObjective:
    """S(rho || sigma(theta)) in bits with its analytic gradient.

    theta packs K softmax logits, then K unnormalised complex A-vectors and
    K complex B-vectors as (real, imag) pairs.
    """

    def __init__(self, rho: DensityMatrix, k: int):
        self.rho = rho.matrix
        self.da, self.db, self.k = rho.dim_a, rho.dim_b, k
        self.neg_s = _neg_entropy_nats(clamp_eigenvalues(np.linalg.eigvalsh(self.rho)))

    @property
    def size(self) -> int:
        return self.k + 2 * self.k * (self.da + self.db)

    def unpack(self, theta):
        k, da, db = self.k, self.da, self.db
        logits = theta[:k]
        xa = theta[k : k + 2 * k * da].reshape(k, da, 2)
        xb = theta[k + 2 * k * da :].reshape(k, db, 2)
        xa = xa[..., 0] + 1j * xa[..., 1]
        xb = xb[..., 0] + 1j * xb[..., 1]
        return logits, xa, xb

    def parts(self, theta):
        logits, xa, xb = self.unpack(theta)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        na = np.linalg.norm(xa, axis=1)
        nb = np.linalg.norm(xb, axis=1)
        return p, xa / na[:, None], xb / nb[:, None], na, nb

    def value(self, theta) -> float:
        p, a, b, _, _ = self.parts(theta)
        w, v = np.linalg.eigh(product_mixture(p, a, b))
        logw = np.log(np.maximum(w, LOG_FLOOR))
        rt = np.einsum("ik,ij,jk->k", v.conj(), self.rho, v).real
        return (self.neg_s - float(rt @ logw)) / LN2

    def value_and_grad(self, theta):
        p, a, b, na, nb = self.parts(theta)
        sigma = product_mixture(p, a, b)
        w, v = np.linalg.eigh(sigma)
        wf = np.maximum(w, LOG_FLOOR)
        logw = np.log(wf)
        rt = v.conj().T @ self.rho @ v
        val = (self.neg_s - float(np.real(np.diag(rt)) @ logw)) / LN2

        # divided differences of log at the (floored) eigenvalues
        dw = wf[:, None] - wf[None, :]
        dl = logw[:, None] - logw[None, :]
        same = np.abs(dw) < 1e-12 * np.maximum(wf[:, None], wf[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            loew = np.where(same, 1.0 / np.maximum(wf[:, None], wf[None, :]), dl / np.where(same, 1.0, dw))
        # dS/dsigma (Hermitian), so dS = Tr(g dsigma)
        g = -(v @ (loew * rt) @ v.conj().T) / LN2

        k, da, db = self.k, self.da, self.db
        g4 = g.reshape(da, db, da, db)
        # <a_i b_i| g |a_i b_i>
        gb = np.einsum("kj,ijml,kl->kim", b.conj(), g4, b)  # B-contracted, (K, da, da)
        ga_vec = np.einsum("kim,km->ki", gb, a)  # g_B a
        e = np.einsum("ki,ki->k", a.conj(), ga_vec).real
        grad_logits = p * (e - p @ e)

        ga_b = np.einsum("ki,ijml,km->kjl", a.conj(), g4, a)
        gb_vec = np.einsum("kjl,kl->kj", ga_b, b)

        def through_norm(gamma, u, n):
            # gradient of f(x/|x|) with gamma the complex gradient at u
            proj = np.real(np.einsum("ki,ki->k", u.conj(), gamma))
            return (gamma - proj[:, None] * u) / n[:, None]

        gam_a = through_norm(2 * p[:, None] * ga_vec, a, na)
        gam_b = through_norm(2 * p[:, None] * gb_vec, b, nb)
        grad = np.concatenate(
            [
                grad_logits,
                np.stack([gam_a.real, gam_a.imag], axis=-1).ravel(),
                np.stack([gam_b.real, gam_b.imag], axis=-1).ravel(),
            ]
        )
        return val, grad


def _initial_theta(obj: _ProductMixtureObjective, rng: np.random.Generator) -> np.ndarray:
    return np.concatenate([0.1 * rng.standard_normal(obj.k), rng.standard_normal(obj.size - obj.k)])


def _known_decomposition(rho) -> ReeResult:
    """rho itself as a pure-product mixture, from its stored separable factors."""
    weights, kets_a, kets_b = [], [], []
    for p, fa, fb in zip(rho.weights, rho.factors_a, rho.factors_b):
        wa, va = np.linalg.eigh(fa)
        wb, vb = np.linalg.eigh(fb)
        for i in range(len(wa)):
            for j in range(len(wb)):
                weights.append(p * max(wa[i], 0.0) * max(wb[j], 0.0))
                kets_a.append(va[:, i])
                kets_b.append(vb[:, j])
    weights = np.array(weights) / np.sum(weights)
    res = ReeResult(0.0, weights, np.array(kets_a), np.array(kets_b), 0, True)
    res.upper_bound = relative_entropy(rho, res.closest_sep())
    return res


def ree_upper_bound(rho: DensityMatrix, cfg: ReeConfig | None = None) -> ReeResult:
    """Upper bound on E_R by minimising S(rho||sigma) over K-term product mixtures.

    Each restart runs L-BFGS on the analytic gradient from an independent RNG
    stream; the smallest value wins. The result is always a valid bound since
    every sigma is separable by construction. States carrying a separable
    decomposition are answered with that decomposition directly.
    """
    cfg = cfg or ReeConfig()
    if getattr(rho, "separable", False):
        return _known_decomposition(rho)
    d2 = max(rho.dim_a, rho.dim_b) ** 2
    k = cfg.terms or 2 * d2
    obj = _ProductMixtureObjective(rho, k)
    best, iters, converged = None, 0, False
    for r in range(cfg.restarts):
        theta0 = _initial_theta(obj, rng_stream(cfg.seed, r))
        res = minimize(
            obj.value_and_grad,
            theta0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": cfg.max_iter, "ftol": cfg.tol, "gtol": 1e-9, "maxcor": 30},
        )
        iters += int(res.nit)
        val = obj.value(res.x)
        if best is None or val < best[0]:
            best = (val, res.x)
            converged = bool(res.success)
    p, a, b, _, _ = obj.parts(best[1])
    return ReeResult(max(best[0], 0.0), p, a, b, iters, converged)


def ree_label(rho: DensityMatrix, cfg: ReeConfig | None = None) -> float:
    """REE label: 0 for states flagged separable, otherwise the optimiser bound."""
    if getattr(rho, "separable", False):
        return 0.0
    return ree_upper_bound(rho, cfg).upper_bound
