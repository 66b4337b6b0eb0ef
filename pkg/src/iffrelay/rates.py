"""End-to-end rate evaluation and Monte Carlo aggregation.

The relay decodes L integer equations at the computation rates of the
multiple-access phase; each user then decodes the relayed equation symbols at
per-stream SINR rates, and recovers its pair's messages from the best subset
of equations whose integer rows let it solve for the pair-sum coordinates.
The exchange rate of a user is the bottleneck rate of the subset it uses
(halved under the two-slot protocol factor).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .bc import BcDesign, design_max_mse, design_sum_mse
from .channels import ChannelSet, alignment_feasible, generate_channels
from .config import SystemConfig
from .ecv import integer_rank
from .ma import MaDesign, design_max_equation, design_sum_equation, init_precoders
from .receiver import computation_rate, projection_mse, robust_penalty

EXHAUSTIVE_SUBSET_LIMIT = 6   # exhaustive equation-subset search up to this L


@dataclass(frozen=True)
class RateTable:
    comp_rate: np.ndarray     # (L,) relay computation rates
    bc_rate: np.ndarray       # (2K, L) per-user equation recovery rates
    overall: np.ndarray       # (2K, L) elementwise minimum of the two


@dataclass(frozen=True)
class EvalReport:
    user_rate: np.ndarray     # (2K,) achieved exchange rates
    used_equations: tuple     # per user, tuple of equation indices
    sum_rate: float
    outage: np.ndarray        # (2K,) bool, user_rate < R_t
    single_eq_fraction: float # fraction of users using a strict subset
    eq_mse: np.ndarray        # (L,) sorted per-equation effective noises
    iters_ma: int
    iters_bc: int
    converged: bool


def broadcast_rate(W, Dk, Gk, sigma2_u, i, err_noise=0.0) -> float:
    """Rate of recovering equation symbol i at one user: per-stream SINR with
    the i-th filter row, treating other streams as interference.  `err_noise`
    adds estimation-error noise power sigma2_g * Tr(WW*) to the denominator."""
    d = Dk.conj().T[:, i]          # conjugated i-th filter row
    dn = float(np.vdot(d, d).real)
    if dn <= 0.0:
        return 0.0
    GW = Gk @ W
    gains = d.conj() @ GW          # row of cross-gains, length L
    sig = abs(gains[i]) ** 2
    interf = float(np.sum(np.abs(gains) ** 2)) - sig
    den = (sigma2_u + err_noise) * dn + interf
    return float(np.log2(1.0 + sig / den))


def _solvable(A_rows, pair_sl: slice, L: int) -> bool:
    """The pair-sum coordinates are recoverable from the given equation rows
    when every unit direction of the pair block lies in their rational span."""
    rows = [list(map(int, r)) for r in A_rows]
    base = integer_rank(rows)
    for j in range(pair_sl.start, pair_sl.stop):
        e = [0] * L
        e[j] = 1
        if integer_rank(rows + [e]) != base:
            return False
    return True


def select_equations(overall_user: np.ndarray, A: np.ndarray, pair_sl: slice):
    """Best equation subset for one user: the subset solving the pair-sum
    block that maximizes the worst used equation's rate.

    Rates sorted descending make the optimum a shortest solvable prefix; the
    prefix is then pruned to a minimal solvable subset.  Exhaustive subset
    enumeration is used at small L as the reference path.
    """
    L = A.shape[0]
    if L <= EXHAUSTIVE_SUBSET_LIMIT:
        best, best_rate = None, -1.0
        for size in range(1, L + 1):
            for S in combinations(range(L), size):
                if not _solvable(A[list(S)], pair_sl, L):
                    continue
                r = float(overall_user[list(S)].min())
                if r > best_rate + 1e-15:
                    best, best_rate = S, r
        assert best is not None, "nonsingular A must admit the full set"
        return tuple(best), best_rate

    order = np.argsort(-overall_user, kind="stable")
    chosen = None
    for m in range(1, L + 1):
        S = sorted(order[:m].tolist())
        if _solvable(A[S], pair_sl, L):
            chosen = S
            break
    assert chosen is not None, "nonsingular A must admit the full set"
    rate = float(overall_user[chosen].min())
    # prune to a minimal solvable subset, dropping weak equations first
    for idx in sorted(chosen, key=lambda i: overall_user[i]):
        trial = [i for i in chosen if i != idx]
        if trial and _solvable(A[trial], pair_sl, L):
            chosen = trial
    return tuple(chosen), rate


def rate_table(ma: MaDesign, bc: BcDesign, channels: ChannelSet,
               cfg: SystemConfig) -> RateTable:
    """Rates under the error statistics actually present in the scenario
    (designs that ignored the estimation error are charged for it here)."""
    Heff = ma.V.effective()
    pen = robust_penalty(ma.V, cfg.sigma2_h)
    eps = np.array([
        projection_mse(Heff, ma.B[k].conj(), ma.A[k], cfg.sigma2_r, pen)
        for k in range(cfg.L)
    ])
    comp = np.array([computation_rate(e, cfg.rate_ceiling) for e in eps])
    err_noise = cfg.sigma2_g * float(np.vdot(bc.W, bc.W).real)
    bc_r = np.zeros((cfg.n_users, cfg.L))
    for u in range(cfg.n_users):
        for i in range(cfg.L):
            bc_r[u, i] = broadcast_rate(bc.W, bc.D[u], channels.Ghat[u],
                                        cfg.sigma2_u, i, err_noise)
    return RateTable(comp_rate=comp, bc_rate=bc_r,
                     overall=np.minimum(comp[None, :], bc_r))


def evaluate(ma: MaDesign, bc: BcDesign, channels: ChannelSet,
             cfg: SystemConfig) -> EvalReport:
    table = rate_table(ma, bc, channels, cfg)
    half = 0.5 if cfg.half_rate else 1.0
    user_rate = np.zeros(cfg.n_users)
    used = []
    strict = 0
    for u in range(cfg.n_users):
        sl = cfg.pair_slice(cfg.pair_of(u))
        S, r = select_equations(table.overall[u], ma.A, sl)
        used.append(S)
        user_rate[u] = half * r
        if len(S) < cfg.L:
            strict += 1
    eps_sorted = np.sort(np.asarray(ma.noise.eps))
    return EvalReport(
        user_rate=user_rate,
        used_equations=tuple(used),
        sum_rate=float(user_rate.sum()),
        outage=user_rate < cfg.R_t,
        single_eq_fraction=strict / cfg.n_users,
        eq_mse=eps_sorted,
        iters_ma=ma.iterations,
        iters_bc=bc.iterations,
        converged=ma.converged and bc.converged,
    )


# ---------------------------------------------------------------------------
# Monte Carlo harness

MA_DESIGNS = {"sum": design_sum_equation, "max": design_max_equation}
BC_DESIGNS = {"sum": design_sum_mse, "max": design_max_mse}

MAX_DRAW_ATTEMPTS = 50


@dataclass(frozen=True)
class Scheme:
    """One transceiver strategy: phase criteria plus the robustness mode."""
    ma_criterion: str = "sum"
    bc_criterion: str = "sum"
    robust: bool = False

    def __post_init__(self):
        if self.ma_criterion not in MA_DESIGNS or self.bc_criterion not in BC_DESIGNS:
            raise ValueError(f"unknown scheme criteria {self.ma_criterion!r}/"
                             f"{self.bc_criterion!r}")


@dataclass(frozen=True)
class MonteCarloPoint:
    snr_db: float
    trials: int
    avg_sum_rate: float
    outage_prob: float
    single_eq_fraction: float
    avg_iters_ma: float
    avg_iters_bc: float
    infeasible_draws: int
    avg_eq_mse: np.ndarray    # (L,) average sorted per-equation noises
    convergence_rate: float


def run_trial(cfg: SystemConfig, scheme: Scheme, seed_key: tuple) -> tuple:
    """One Monte Carlo draw: sample channels (resampling alignment-infeasible
    draws), run both phase designs, evaluate.  Returns (report, resamples)."""
    for attempt in range(MAX_DRAW_ATTEMPTS):
        rng_ch = np.random.default_rng(
            np.random.SeedSequence(list(seed_key) + [attempt, 0]))
        channels = generate_channels(cfg, rng_ch)
        if not alignment_feasible(channels, cfg):
            continue
        rng_init = np.random.default_rng(
            np.random.SeedSequence(list(seed_key) + [attempt, 1]))
        V0 = init_precoders(channels, cfg, rng_init)
        ma = MA_DESIGNS[scheme.ma_criterion](channels, cfg,
                                             robust=scheme.robust, V0=V0)
        bc = BC_DESIGNS[scheme.bc_criterion](channels, cfg,
                                             robust=scheme.robust)
        return evaluate(ma, bc, channels, cfg), attempt
    raise RuntimeError(f"no alignment-feasible channel draw in "
                       f"{MAX_DRAW_ATTEMPTS} attempts")


def _aggregate(snr_db, cfg, reports, resamples) -> MonteCarloPoint:
    return MonteCarloPoint(
        snr_db=float(snr_db),
        trials=len(reports),
        avg_sum_rate=float(np.mean([r.sum_rate for r in reports])),
        outage_prob=float(np.mean([r.outage.mean() for r in reports])),
        single_eq_fraction=float(np.mean([r.single_eq_fraction for r in reports])),
        avg_iters_ma=float(np.mean([r.iters_ma for r in reports])),
        avg_iters_bc=float(np.mean([r.iters_bc for r in reports])),
        infeasible_draws=int(sum(resamples)),
        avg_eq_mse=np.mean([r.eq_mse for r in reports], axis=0),
        convergence_rate=float(np.mean([r.converged for r in reports])),
    )


def monte_carlo(cfg: SystemConfig, scheme: Scheme, snr_grid, trials: int,
                n_jobs: int = 1) -> list:
    """Average sum rate, outage and subset statistics over an SNR grid.

    Powers are set to P_k = P_r = 10^(snr/10) with unit noise variances.
    Every trial draws from its own seed stream, so results are independent
    of the worker count and bit-reproducible for a fixed cfg.seed.
    """
    points = []
    for si, snr in enumerate(snr_grid):
        power = float(10.0 ** (snr / 10.0))
        cfg_p = cfg.with_power(power)
        keys = [(cfg.seed, si, t) for t in range(trials)]
        if n_jobs > 1:
            from joblib import Parallel, delayed
            results = Parallel(n_jobs=n_jobs, batch_size="auto")(
                delayed(run_trial)(cfg_p, scheme, k) for k in keys)
        else:
            results = [run_trial(cfg_p, scheme, k) for k in keys]
        reports = [r for r, _ in results]
        resamples = [n for _, n in results]
        points.append(_aggregate(snr, cfg_p, reports, resamples))
    return points
