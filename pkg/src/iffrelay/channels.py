"""Channel generation, signal-alignment precoding and power accounting.

Uplink channels H_k are N_r x N_k, downlink channels G_k are N_k x N_r, all
with i.i.d. circularly-symmetric complex Gaussian entries.  Under estimation
error the nodes only ever see the estimates Hhat_k = H_k + e_k and
Ghat_k = G_k + ehat_k, so every design consumes the estimated set (which
coincides with the true set when the error variance is zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import AlignmentRankDeficient

ALIGN_TOL = 1e-10     # relative Frobenius residual accepted for H_kbar V_kbar = H_k V_k
PINV_RCOND = 1e-12    # singular values below rcond * s_max are treated as zero


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """CN(0, var) array: real and imaginary parts are N(0, var/2) each."""
    s = np.sqrt(var / 2.0)
    return rng.normal(0.0, s, shape) + 1j * rng.normal(0.0, s, shape)


def vec(X: np.ndarray) -> np.ndarray:
    """Column-major vectorization, matching vec(AXB) = (B^T kron A) vec(X)."""
    return np.ravel(X, order="F")


def unvec(v: np.ndarray, shape) -> np.ndarray:
    return np.reshape(v, shape, order="F")


@dataclass(frozen=True)
class ChannelSet:
    """One network realization: true channels, estimates and error matrices."""

    H: tuple        # uplink, 2K arrays of shape (N_r, N_k)
    G: tuple        # downlink, 2K arrays of shape (N_k, N_r)
    Hhat: tuple
    Ghat: tuple
    e: tuple        # Hhat - H
    ehat: tuple     # Ghat - G


def generate_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """Sample a ChannelSet for `cfg`.  Error matrices are zero when the error
    variance is zero (no RNG draws are consumed for them)."""
    H, G, e, ehat = [], [], [], []
    for u in range(cfg.n_users):
        H.append(crandn(rng, (cfg.N_r, cfg.N_k[u]), cfg.sigma2_k[u]))
        G.append(crandn(rng, (cfg.N_k[u], cfg.N_r), cfg.sigma2_k[u]))
    for u in range(cfg.n_users):
        if cfg.sigma2_h > 0:
            e.append(crandn(rng, (cfg.N_r, cfg.N_k[u]), cfg.sigma2_h))
        else:
            e.append(np.zeros((cfg.N_r, cfg.N_k[u]), dtype=complex))
        if cfg.sigma2_g > 0:
            ehat.append(crandn(rng, (cfg.N_k[u], cfg.N_r), cfg.sigma2_g))
        else:
            ehat.append(np.zeros((cfg.N_k[u], cfg.N_r), dtype=complex))
    Hhat = tuple(H[u] + e[u] for u in range(cfg.n_users))
    Ghat = tuple(G[u] + ehat[u] for u in range(cfg.n_users))
    return ChannelSet(H=tuple(H), G=tuple(G), Hhat=Hhat, Ghat=Ghat,
                      e=tuple(e), ehat=tuple(ehat))


def align_precoder(Hk: np.ndarray, Hkbar: np.ndarray, Vk: np.ndarray) -> np.ndarray:
    """Partner precoder V_kbar = pinv(H_kbar) H_k V_k so both users of the pair
    hit the same relay-side subspace.  Raises AlignmentRankDeficient when the
    partner channel cannot reproduce H_k V_k."""
    Vkbar = np.linalg.pinv(Hkbar, rcond=PINV_RCOND) @ (Hk @ Vk)
    target = Hk @ Vk
    resid = np.linalg.norm(Hkbar @ Vkbar - target)
    scale = np.linalg.norm(target)
    if resid > ALIGN_TOL * max(scale, 1e-300):
        raise AlignmentRankDeficient(
            f"alignment residual {resid:.3e} exceeds {ALIGN_TOL:.0e} * {scale:.3e}"
        )
    return Vkbar


def alignment_feasible(channels: ChannelSet, cfg: SystemConfig) -> bool:
    """True when every pair's partner (estimated) channel has full row rank,
    i.e. alignment holds for any choice of V_k."""
    for p in range(cfg.K):
        Hb = channels.Hhat[p + cfg.K]
        s = np.linalg.svd(Hb, compute_uv=False)
        if s.size < cfg.N_r or s[-1] <= PINV_RCOND * s[0] * 1e2:
            return False
    return True


@dataclass(frozen=True)
class PrecoderSet:
    """Aligned precoders for all 2K users plus the uplink matrices they were
    aligned against (the estimates, which equal the true channels when the
    CSI error variance is zero)."""

    V: tuple        # 2K arrays, V[u] has shape (N_k[u], L_k[pair])
    uplink: tuple   # 2K design-side uplink matrices
    K: int

    @property
    def L(self) -> int:
        return sum(v.shape[1] for v in self.V[: self.K])

    def effective(self) -> np.ndarray:
        """N_r x L effective channel [H_1 V_1, ..., H_K V_K] (first users)."""
        return np.concatenate(
            [self.uplink[p] @ self.V[p] for p in range(self.K)], axis=1
        )

    def stacked_uplink(self) -> np.ndarray:
        """[H_1 ... H_K], first users side by side."""
        return np.concatenate([self.uplink[p] for p in range(self.K)], axis=1)

    def block_precoder(self) -> np.ndarray:
        """Block-diagonal of the first-user precoders V_1..V_K."""
        rows = sum(self.V[p].shape[0] for p in range(self.K))
        cols = sum(self.V[p].shape[1] for p in range(self.K))
        out = np.zeros((rows, cols), dtype=complex)
        r = c = 0
        for p in range(self.K):
            n, l = self.V[p].shape
            out[r:r + n, c:c + l] = self.V[p]
            r += n
            c += l
        return out

    def alignment_maps(self) -> list:
        """T_p = pinv(H_pbar) H_p per pair (so V_pbar = T_p V_p)."""
        return [
            np.linalg.pinv(self.uplink[p + self.K], rcond=PINV_RCOND) @ self.uplink[p]
            for p in range(self.K)
        ]

    def phi(self) -> np.ndarray:
        """Block-diagonal of the alignment maps T_1..T_K."""
        maps = self.alignment_maps()
        rows = sum(t.shape[0] for t in maps)
        cols = sum(t.shape[1] for t in maps)
        out = np.zeros((rows, cols), dtype=complex)
        r = c = 0
        for t in maps:
            out[r:r + t.shape[0], c:c + t.shape[1]] = t
            r += t.shape[0]
            c += t.shape[1]
        return out


def build_precoders(channels: ChannelSet, V_first, cfg: SystemConfig) -> PrecoderSet:
    """Assemble a PrecoderSet from the K first-user precoders, aligning each
    partner against the estimated channels."""
    uplink = channels.Hhat
    V = [None] * cfg.n_users
    for p in range(cfg.K):
        V[p] = np.asarray(V_first[p], dtype=complex)
        V[p + cfg.K] = align_precoder(uplink[p], uplink[p + cfg.K], V[p])
    return PrecoderSet(V=tuple(V), uplink=tuple(uplink), K=cfg.K)


def effective_channel(channels: ChannelSet, V: PrecoderSet, robust: bool = False) -> np.ndarray:
    """N_r x L matrix [H_1 V_1, ..., H_K V_K]; uses the estimates when robust."""
    up = channels.Hhat if robust else channels.H
    return np.concatenate([up[p] @ V.V[p] for p in range(V.K)], axis=1)


def pair_power(V: PrecoderSet, pair: int) -> float:
    """Tr(V_k V_k*) + Tr(V_kbar V_kbar*) for the given pair."""
    Vk = V.V[pair]
    Vkb = V.V[pair + V.K]
    return float(np.sum(np.abs(Vk) ** 2) + np.sum(np.abs(Vkb) ** 2))
