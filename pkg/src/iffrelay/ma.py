"""Multiple-access phase transceiver design.

Both algorithms alternate two exact half-steps until the precoders stop
moving: (1) for fixed precoders, re-search the integer equations and set the
projection rows to their closed-form optimum; (2) for fixed equations and
projections, update the per-pair precoders.  The sum criterion has a per-pair
closed form with a power multiplier found by bisection; the max criterion
solves a min-max cone program over the stacked precoder blocks.

The reported A and B always correspond to the final precoders (one closing
filter half-step), while `step_A`, `step_B` and `mu` retain the quantities
that produced the final precoder update, which is where the KKT conditions
hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import minmax
from .channels import PrecoderSet, build_precoders, crandn, pair_power, unvec
from .config import SystemConfig
from .ecv import EcvProblem, search
from .receiver import (NoiseProfile, compute_U, noise_profile,
                       projection_matrix, projection_mse, robust_penalty)

POWER_BISECT_STEPS = 60
POWER_TOL = 1e-8      # relative power mismatch accepted on the active branch
SOLVER_TOL = 1e-6


@dataclass(frozen=True)
class MaDesign:
    V: PrecoderSet
    A: np.ndarray                 # final equation matrix (L x L integers)
    B: np.ndarray                 # final projection rows b_k^*, optimal for (V, A)
    noise: NoiseProfile
    objective_trace: np.ndarray   # non-increasing across half-steps
    iterations: int
    converged: bool
    criterion: str                # "sum" | "max"
    robust: bool
    mu: np.ndarray                # per-pair power multipliers of the last V-step
    step_A: np.ndarray            # equations that produced the final V-step
    step_B: np.ndarray            # projections that produced the final V-step


def init_precoders(channels, cfg: SystemConfig, rng: np.random.Generator) -> PrecoderSet:
    """Random complex Gaussian start, scaled so each pair spends half its
    power budget."""
    V0 = []
    for p in range(cfg.K):
        Vp = crandn(rng, (cfg.N_k[p], cfg.L_k[p]))
        V0.append(Vp)
    V = build_precoders(channels, V0, cfg)
    scaled = []
    for p in range(cfg.K):
        pw = pair_power(V, p)
        scaled.append(V.V[p] * np.sqrt(0.5 * cfg.P_k[p] / pw))
    return build_precoders(channels, scaled, cfg)


def equation_noises(V: PrecoderSet, A: np.ndarray, B: np.ndarray,
                    cfg: SystemConfig, err_var: float) -> np.ndarray:
    """Per-equation effective noise at the given projections (direct form)."""
    Heff = V.effective()
    pen = robust_penalty(V, err_var)
    return np.array([
        projection_mse(Heff, B[k].conj(), A[k], cfg.sigma2_r, pen)
        for k in range(A.shape[0])
    ])


def _objective(eps: np.ndarray, criterion: str) -> float:
    return float(eps.max() if criterion == "max" else eps.sum())


def _filters_step(V: PrecoderSet, cfg: SystemConfig, criterion: str,
                  err_var: float):
    """Half-step 1: optimal (A, B) for the current precoders."""
    Heff = V.effective()
    pen = robust_penalty(V, err_var)
    U = compute_U(Heff, cfg.sigma2_r, pen)
    sol = search(EcvProblem(U=U, criterion=criterion))
    B = projection_matrix(Heff, sol.A, cfg.sigma2_r, pen)
    return sol.A, B, pen


def _sum_precoder_step(channels, V: PrecoderSet, A: np.ndarray, B: np.ndarray,
                       cfg: SystemConfig, err_var: float):
    """Half-step 2 for the sum criterion: per-pair closed form, with the power
    multiplier mu found by bisection when the unconstrained solution violates
    the pair budget."""
    Tmaps = V.alignment_maps()
    BHB = B.conj().T @ B
    shift = 0.5 * err_var * float(np.vdot(B, B).real)
    mu = np.zeros(cfg.K)
    new_first = []
    for p in range(cfg.K):
        Hd = V.uplink[p]
        G = Hd.conj().T @ BHB @ Hd
        sl = cfg.pair_slice(p)
        RHS = Hd.conj().T @ B.conj().T @ A[:, sl].astype(complex)
        Tq = np.eye(cfg.N_k[p]) + Tmaps[p].conj().T @ Tmaps[p]
        Pp = cfg.P_k[p]

        def vp(m):
            M = G + (0.5 * m + shift) * Tq
            if m > 0.0:
                return np.linalg.solve(M, RHS)
            return np.linalg.lstsq(M, RHS, rcond=None)[0]

        def power(Vp):
            return float(np.sum(np.abs(Vp) ** 2)
                         + np.sum(np.abs(Tmaps[p] @ Vp) ** 2))

        V0 = vp(0.0)
        if power(V0) <= Pp * (1.0 + POWER_TOL):
            new_first.append(V0)
            continue
        lo, hi = 0.0, 1.0
        while power(vp(hi)) > Pp and hi < 1e18:
            lo, hi = hi, hi * 2.0
        m = hi
        for _ in range(POWER_BISECT_STEPS):
            m = 0.5 * (lo + hi)
            pw = power(vp(m))
            if abs(pw - Pp) <= POWER_TOL * Pp:
                break
            if pw > Pp:
                lo = m
            else:
                hi = m
        mu[p] = m
        new_first.append(vp(m))
    return build_precoders(channels, new_first, cfg), mu


def build_ma_minmax(V: PrecoderSet, B: np.ndarray, A: np.ndarray,
                    cfg: SystemConfig, robust: bool,
                    tol: float = SOLVER_TOL):
    """Min-max cone program of the precoder step for the max criterion.

    Variable: the stacked conjugate-transposed first-user precoders.  Cone j
    evaluates to twice the effective noise of equation j at the fixed
    projection row b_j; the balls encode the per-pair sum-power budgets.
    Returns (problem, codec) where the codec decodes the solution vector back
    into per-pair precoders.
    """
    err_var = cfg.sigma2_h if robust else 0.0
    Tmaps = V.alignment_maps()
    codec = minmax.BlockCodec([cfg.L_k[p] * cfg.N_k[p] for p in range(cfg.K)])
    sq2 = np.sqrt(2.0)
    cones = []
    for j in range(A.shape[0]):
        b = B[j].conj()
        bnorm = float(np.linalg.norm(b))
        pieces = []
        # residual block: pair p's rows of (effective channel)^* b - a_j,
        # scaled by sqrt(2) per the canonical noise convention
        maps = {}
        for p in range(cfg.K):
            h = V.uplink[p].conj().T @ b
            full = np.zeros((cfg.L, cfg.L_k[p] * cfg.N_k[p]), dtype=complex)
            full[cfg.pair_slice(p), :] = np.kron(h[None, :], np.eye(cfg.L_k[p]))
            maps[p] = sq2 * full
        pieces.append((codec.place_complex(maps, cfg.L),
                       minmax.lift_vector(-sq2 * A[j].astype(complex))))
        pieces.append(minmax.const_row(codec.dim,
                                       np.sqrt(cfg.sigma2_r) * bnorm))
        if err_var > 0:
            s = np.sqrt(err_var) * bnorm
            pieces.append((s * np.eye(codec.dim), np.zeros(codec.dim)))
            for p in range(cfg.K):
                tm = s * np.kron(np.conj(Tmaps[p]), np.eye(cfg.L_k[p]))
                out_len = cfg.L_k[p] * Tmaps[p].shape[0]
                pieces.append((codec.place_complex({p: tm}, out_len),
                               np.zeros(2 * out_len)))
        cones.append(minmax.stack_cone(pieces))
    balls = []
    for p in range(cfg.K):
        top = np.zeros((2 * cfg.L_k[p] * cfg.N_k[p], codec.dim))
        sl = codec.block_slice(p)
        top[:, sl] = np.eye(2 * cfg.L_k[p] * cfg.N_k[p])
        bot = np.zeros((2 * cfg.L_k[p] * Tmaps[p].shape[0], codec.dim))
        bot[:, sl] = minmax.lift_matrix(
            np.kron(np.conj(Tmaps[p]), np.eye(cfg.L_k[p])))
        balls.append((np.vstack([top, bot]), cfg.P_k[p]))
    problem = minmax.MinMaxProblem(dim=codec.dim, cones=cones, balls=balls,
                                   tol=tol)
    return problem, codec


def _max_precoder_step(channels, V: PrecoderSet, A: np.ndarray, B: np.ndarray,
                       cfg: SystemConfig, robust: bool, err_var: float,
                       warm: np.ndarray | None):
    problem, codec = build_ma_minmax(V, B, A, cfg, robust)
    u0 = codec.encode([V.V[p].conj().T for p in range(cfg.K)]) if warm is None else warm
    sol = minmax.solve(problem, u0=u0)
    blocks = codec.decode(sol.u)
    new_first = [
        unvec(blocks[p], (cfg.L_k[p], cfg.N_k[p])).conj().T
        for p in range(cfg.K)
    ]
    return build_precoders(channels, new_first, cfg), sol


def _design(channels, cfg: SystemConfig, criterion: str, robust: bool,
            rng: np.random.Generator | None, V0: PrecoderSet | None) -> MaDesign:
    err_var = cfg.sigma2_h if robust else 0.0
    if V0 is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        V = init_precoders(channels, cfg, rng)
    else:
        V = V0
    trace = []
    mu = np.zeros(cfg.K)
    step_A = step_B = None
    converged = False
    warm = None
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        A, B, _ = _filters_step(V, cfg, criterion, err_var)
        trace.append(_objective(equation_noises(V, A, B, cfg, err_var), criterion))
        step_A, step_B = A, B
        prev_first = [V.V[p] for p in range(cfg.K)]
        if criterion == "sum":
            V_new, mu = _sum_precoder_step(channels, V, A, B, cfg, err_var)
        else:
            V_new, sol = _max_precoder_step(channels, V, A, B, cfg, robust,
                                            err_var, None)
            mu = np.zeros(cfg.K)
            # reject a precoder step the inexact cone solve failed to improve
            if (_objective(equation_noises(V_new, A, B, cfg, err_var), criterion)
                    > trace[-1] * (1.0 + 1e-12) + 1e-15):
                V_new = V
        trace.append(_objective(equation_noises(V_new, A, B, cfg, err_var),
                                criterion))
        moves = [
            float(np.sum(np.abs(V_new.V[p] - prev_first[p]) ** 2))
            for p in range(cfg.K)
        ]
        V = V_new
        if max(moves) <= cfg.delta:
            converged = True
            break
    # closing filter half-step: reported A, B are optimal for the final V
    A, B, pen = _filters_step(V, cfg, criterion, err_var)
    trace.append(_objective(equation_noises(V, A, B, cfg, err_var), criterion))
    noise = noise_profile(V.effective(), A, cfg.sigma2_r, pen,
                          ceiling=cfg.rate_ceiling)
    return MaDesign(V=V, A=A, B=B, noise=noise,
                    objective_trace=np.array(trace), iterations=iterations,
                    converged=converged, criterion=criterion, robust=robust,
                    mu=mu, step_A=step_A, step_B=step_B)


def design_sum_equation(channels, cfg: SystemConfig, robust: bool = False,
                        rng: np.random.Generator | None = None,
                        V0: PrecoderSet | None = None) -> MaDesign:
    """Alternating minimization of the total effective noise over all
    equations (integer search + closed-form precoders)."""
    return _design(channels, cfg, "sum", robust, rng, V0)


def design_max_equation(channels, cfg: SystemConfig, robust: bool = False,
                        rng: np.random.Generator | None = None,
                        V0: PrecoderSet | None = None) -> MaDesign:
    """Alternating minimization of the worst equation's effective noise
    (integer search + min-max cone programming for the precoders)."""
    return _design(channels, cfg, "max", robust, rng, V0)
