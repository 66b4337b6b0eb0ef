"""Broadcast phase transceiver design.

The relay precodes the decoded equation vector with W (power Tr(WW*) <= P_r)
and every user equalizes with its filter D_k.  The per-user decoding noise is

    mse_k = ||D_k G_k W - I||_F^2 + sigma2_u ||D_k||_F^2
            (+ sigma2_g Tr(WW*) ||D_k||_F^2 under estimated downlink CSI),

minimized either in total (closed-form MMSE filter / regularized relay
precoder with a power multiplier) or in the worst user (min-max cone program
for W; the per-user filter step decouples and its optimum is the same MMSE
closed form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import minmax
from .channels import ChannelSet, unvec, vec
from .config import SystemConfig

POWER_BISECT_STEPS = 60
POWER_TOL = 1e-8
SOLVER_TOL = 1e-6


@dataclass(frozen=True)
class BcDesign:
    W: np.ndarray                 # relay precoder, N_r x L
    D: tuple                      # per-user filters, L x N_k, optimal for W
    rho: float                    # relay power multiplier of the last W-step
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    criterion: str                # "sum" | "max"
    robust: bool
    step_D: tuple                 # filters that produced the final W-step


def broadcast_mse(W, Dk, Gk, sigma2_u, sigma2_g=0.0, robust=False) -> float:
    """Decoding noise of one user for given precoder, filter and channel."""
    err = sigma2_g if robust else 0.0
    L = W.shape[1]
    E = Dk @ Gk @ W - np.eye(L)
    d2 = float(np.vdot(Dk, Dk).real)
    out = float(np.vdot(E, E).real) + sigma2_u * d2
    if err > 0:
        out += err * float(np.vdot(W, W).real) * d2
    return out


def mmse_filter(W, Gk, sigma2_u, err_var=0.0) -> np.ndarray:
    """Closed-form filter D_k = W*G_k*(G_k W W* G_k* + (err Tr(WW*) + s u) I)^-1."""
    GW = Gk @ W
    n = Gk.shape[0]
    lam = sigma2_u + err_var * float(np.vdot(W, W).real)
    M = GW @ GW.conj().T + lam * np.eye(n)
    return np.linalg.solve(M, GW).conj().T


def _all_mses(W, D, channels: ChannelSet, cfg: SystemConfig, err_var: float):
    return np.array([
        broadcast_mse(W, D[u], channels.Ghat[u], cfg.sigma2_u, err_var,
                      robust=err_var > 0)
        for u in range(cfg.n_users)
    ])


def _objective(mses: np.ndarray, criterion: str) -> float:
    return float(mses.max() if criterion == "max" else mses.sum())


def init_relay_precoder(cfg: SystemConfig) -> np.ndarray:
    """Deterministic start: scaled identity block inside an N_r x L frame."""
    W = np.zeros((cfg.N_r, cfg.L), dtype=complex)
    m = min(cfg.N_r, cfg.L)
    W[:m, :m] = np.eye(m)
    return W * np.sqrt(cfg.P_r / cfg.L)


def _relay_precoder_step(D, channels: ChannelSet, cfg: SystemConfig,
                         err_var: float):
    """Closed-form W with the power multiplier rho found by bisection."""
    C = np.zeros((cfg.N_r, cfg.N_r), dtype=complex)
    R = np.zeros((cfg.N_r, cfg.L), dtype=complex)
    tr_d = 0.0
    for u in range(cfg.n_users):
        G = channels.Ghat[u]
        DG = D[u] @ G
        C += DG.conj().T @ DG
        R += DG.conj().T
        tr_d += float(np.vdot(D[u], D[u]).real)
    C = C + (err_var * tr_d) * np.eye(cfg.N_r)

    def w(r):
        M = C + r * np.eye(cfg.N_r)
        if r > 0.0:
            return np.linalg.solve(M, R)
        return np.linalg.lstsq(M, R, rcond=None)[0]

    def power(W):
        return float(np.vdot(W, W).real)

    W0 = w(0.0)
    if power(W0) <= cfg.P_r * (1.0 + POWER_TOL):
        return W0, 0.0
    lo, hi = 0.0, 1.0
    while power(w(hi)) > cfg.P_r and hi < 1e18:
        lo, hi = hi, hi * 2.0
    r = hi
    for _ in range(POWER_BISECT_STEPS):
        r = 0.5 * (lo + hi)
        pw = power(w(r))
        if abs(pw - cfg.P_r) <= POWER_TOL * cfg.P_r:
            break
        if pw > cfg.P_r:
            lo = r
        else:
            hi = r
    return w(r), r


def build_bc_w_minmax(D, channels: ChannelSet, cfg: SystemConfig, robust: bool,
                      tol: float = SOLVER_TOL):
    """Min-max cone program of the relay precoder step (max criterion).
    Variable: vec(W); one cone per user; a single relay power ball."""
    err_var = cfg.sigma2_g if robust else 0.0
    codec = minmax.BlockCodec([cfg.N_r * cfg.L])
    eyeL = np.eye(cfg.L, dtype=complex)
    cones = []
    for u in range(cfg.n_users):
        Dk = D[u]
        dnorm = float(np.linalg.norm(Dk))
        pieces = [
            (codec.place_complex({0: np.kron(eyeL, Dk @ channels.Ghat[u])},
                                 cfg.L * cfg.L),
             minmax.lift_vector(-vec(eyeL))),
            minmax.const_row(codec.dim, np.sqrt(cfg.sigma2_u) * dnorm),
        ]
        if err_var > 0:
            s = np.sqrt(err_var) * dnorm
            pieces.append((s * np.eye(codec.dim), np.zeros(codec.dim)))
        cones.append(minmax.stack_cone(pieces))
    balls = [(np.eye(codec.dim), cfg.P_r)]
    return minmax.MinMaxProblem(dim=codec.dim, cones=cones, balls=balls,
                                tol=tol), codec


def build_bc_d_minmax(W, Gk, cfg: SystemConfig, robust: bool,
                      tol: float = SOLVER_TOL):
    """Single-user filter problem as a cone program (used to cross-check the
    closed-form filter; no power ball)."""
    err_var = cfg.sigma2_g if robust else 0.0
    Nk = Gk.shape[0]
    codec = minmax.BlockCodec([cfg.L * Nk])
    GW = Gk @ W
    eyeL = np.eye(cfg.L, dtype=complex)
    pieces = [
        (codec.place_complex({0: np.kron(GW.T, np.eye(cfg.L, dtype=complex))},
                             cfg.L * cfg.L),
         minmax.lift_vector(-vec(eyeL))),
        (np.sqrt(cfg.sigma2_u) * np.eye(codec.dim), np.zeros(codec.dim)),
    ]
    if err_var > 0:
        s = np.sqrt(err_var) * float(np.linalg.norm(W))
        pieces.append((s * np.eye(codec.dim), np.zeros(codec.dim)))
    return minmax.MinMaxProblem(dim=codec.dim, cones=[minmax.stack_cone(pieces)],
                                tol=tol), codec


def _design(channels: ChannelSet, cfg: SystemConfig, criterion: str,
            robust: bool) -> BcDesign:
    err_var = cfg.sigma2_g if robust else 0.0
    W = init_relay_precoder(cfg)
    D = tuple(mmse_filter(W, channels.Ghat[u], cfg.sigma2_u, err_var)
              for u in range(cfg.n_users))
    trace = [_objective(_all_mses(W, D, channels, cfg, err_var), criterion)]
    rho = 0.0
    step_D = D
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        W_prev = W
        if criterion == "sum":
            # order per the algorithm: filters first, then the relay precoder
            D = tuple(mmse_filter(W, channels.Ghat[u], cfg.sigma2_u, err_var)
                      for u in range(cfg.n_users))
            trace.append(_objective(_all_mses(W, D, channels, cfg, err_var),
                                    criterion))
            step_D = D
            W, rho = _relay_precoder_step(D, channels, cfg, err_var)
            trace.append(_objective(_all_mses(W, D, channels, cfg, err_var),
                                    criterion))
        else:
            step_D = D
            problem, codec = build_bc_w_minmax(D, channels, cfg, robust)
            sol = minmax.solve(problem, u0=codec.encode([W]))
            W_new = unvec(codec.decode(sol.u)[0], (cfg.N_r, cfg.L))
            rho = 0.0
            if (_objective(_all_mses(W_new, D, channels, cfg, err_var), criterion)
                    <= trace[-1] * (1.0 + 1e-12) + 1e-15):
                W = W_new
            trace.append(_objective(_all_mses(W, D, channels, cfg, err_var),
                                    criterion))
            D = tuple(mmse_filter(W, channels.Ghat[u], cfg.sigma2_u, err_var)
                      for u in range(cfg.n_users))
            trace.append(_objective(_all_mses(W, D, channels, cfg, err_var),
                                    criterion))
        if float(np.sum(np.abs(W - W_prev) ** 2)) <= cfg.delta:
            converged = True
            break
    if criterion == "sum":
        # closing filter half-step so the reported D is optimal for the final W
        D = tuple(mmse_filter(W, channels.Ghat[u], cfg.sigma2_u, err_var)
                  for u in range(cfg.n_users))
        trace.append(_objective(_all_mses(W, D, channels, cfg, err_var),
                                criterion))
    return BcDesign(W=W, D=D, rho=rho, objective_trace=np.array(trace),
                    iterations=iterations, converged=converged,
                    criterion=criterion, robust=robust, step_D=step_D)


def design_sum_mse(channels: ChannelSet, cfg: SystemConfig,
                   robust: bool = False) -> BcDesign:
    """Alternating minimization of the total decoding noise over all users."""
    return _design(channels, cfg, "sum", robust)


def design_max_mse(channels: ChannelSet, cfg: SystemConfig,
                   robust: bool = False) -> BcDesign:
    """Alternating minimization of the worst user's decoding noise."""
    return _design(channels, cfg, "max", robust)
