"""Integer-forcing receiver mathematics.

For the effective uplink channel H (N_r x L) the effective noise of decoding
the integer equation a is

    eps(a) = min_b  sigma2_r/2 ||b||^2 + ||H* b - a||^2 + penalty/2 ||b||^2
           = a* U a,       U = I - H* (c I + H H*)^{-1} H,

with c = sigma2_r/2 + penalty/2 and penalty the estimation-error inflation
sigma2_h * sum_l (Tr(V_l* V_l) + Tr(V_lbar* V_lbar)) (zero under perfect CSI).
The computation rate of the equation is log2+(1/eps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import PrecoderSet

EPS_FLOOR = 1e-9  # effective noise floor before taking the log


def _regularizer(sigma2_r: float, robust_penalty: float) -> float:
    return sigma2_r / 2.0 + robust_penalty / 2.0


def compute_U(Heff: np.ndarray, sigma2_r: float, robust_penalty: float = 0.0) -> np.ndarray:
    """U = I - H* (c I + H H*)^{-1} H; Hermitian PSD with eigenvalues in [0, 1]."""
    Nr, L = Heff.shape
    c = _regularizer(sigma2_r, robust_penalty)
    M = c * np.eye(Nr) + Heff @ Heff.conj().T
    U = np.eye(L) - Heff.conj().T @ np.linalg.solve(M, Heff)
    return 0.5 * (U + U.conj().T)


def optimal_projection(Heff: np.ndarray, a: np.ndarray, sigma2_r: float,
                       robust_penalty: float = 0.0) -> np.ndarray:
    """Projection vector b = (c I + H H*)^{-1} H a minimizing the effective noise."""
    Nr = Heff.shape[0]
    c = _regularizer(sigma2_r, robust_penalty)
    M = c * np.eye(Nr) + Heff @ Heff.conj().T
    return np.linalg.solve(M, Heff @ np.asarray(a, dtype=complex))


def projection_matrix(Heff: np.ndarray, A: np.ndarray, sigma2_r: float,
                      robust_penalty: float = 0.0) -> np.ndarray:
    """L x N_r matrix whose k-th row is b_k* for the k-th row a_k* of A."""
    Nr = Heff.shape[0]
    c = _regularizer(sigma2_r, robust_penalty)
    M = c * np.eye(Nr) + Heff @ Heff.conj().T
    # b_k = M^{-1} H a_k  ->  row k of B is b_k^* = a_k^T H^* M^{-1}
    return np.asarray(A, dtype=complex) @ Heff.conj().T @ np.linalg.inv(M)


def projection_mse(Heff: np.ndarray, b: np.ndarray, a: np.ndarray, sigma2_r: float,
                   robust_penalty: float = 0.0) -> float:
    """Effective noise at an arbitrary projection vector b (not necessarily
    optimal): sigma2_r/2 ||b||^2 + ||H* b - a||^2 + penalty/2 ||b||^2."""
    c = _regularizer(sigma2_r, robust_penalty)
    r = Heff.conj().T @ b - a
    return float(c * np.vdot(b, b).real + np.vdot(r, r).real)


def equation_mse(U: np.ndarray, a: np.ndarray) -> float:
    """Quadratic form a* U a (real for Hermitian U and integer a)."""
    a = np.asarray(a)
    return float(np.real(a.conj() @ U @ a))


def computation_rate(eps: float, ceiling: float = 30.0) -> float:
    """log2+(1/eps), floored at eps = 1e-9; eps == 0 returns the ceiling."""
    if eps == 0.0:
        return float(ceiling)
    eps = max(float(eps), EPS_FLOOR)
    return float(min(ceiling, max(0.0, np.log2(1.0 / eps))))


def robust_penalty(V: PrecoderSet, sigma2_h: float) -> float:
    """sigma2_h * sum_l (Tr(V_l* V_l) + Tr(V_lbar* V_lbar)) over the K pairs."""
    total = 0.0
    for p in range(V.K):
        total += np.sum(np.abs(V.V[p]) ** 2) + np.sum(np.abs(V.V[p + V.K]) ** 2)
    return float(sigma2_h * total)


@dataclass(frozen=True)
class NoiseProfile:
    """Per-equation effective noises and computation rates for a fixed design."""

    U: np.ndarray
    eps: np.ndarray          # eps[k] = a_k* U a_k
    rate: np.ndarray         # rate[k] = log2+(1/eps[k])
    robust_penalty: float


def noise_profile(Heff: np.ndarray, A: np.ndarray, sigma2_r: float,
                  robust_penalty: float = 0.0, ceiling: float = 30.0) -> NoiseProfile:
    U = compute_U(Heff, sigma2_r, robust_penalty)
    eps = np.array([equation_mse(U, a) for a in np.asarray(A)])
    rate = np.array([computation_rate(e, ceiling) for e in eps])
    return NoiseProfile(U=U, eps=eps, rate=rate, robust_penalty=float(robust_penalty))
