"""System configuration for the multi-pair two-way relay network.

Users are indexed 0..2K-1.  Pair p consists of users p and p+K (the partner
of user u is (u + K) mod 2K).  Pair p exchanges L_k[p] messages per channel
use, so the relay decodes L = sum(L_k) independent equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


def partner(user: int, K: int) -> int:
    """Index of the other user in `user`'s pair."""
    return (user + K) % (2 * K)


@dataclass(frozen=True)
class SystemConfig:
    K: int = 2                    # number of user pairs
    N_k: tuple = (2, 2, 2, 2)     # antennas per user (length 2K)
    N_r: int = 2                  # relay antennas
    L_k: tuple = (1, 1)           # messages per pair (length K)
    P_k: tuple = (10.0, 10.0)     # per-pair sum power budgets (length K)
    P_r: float = 10.0             # relay power budget
    sigma2_k: tuple = (1.0, 1.0, 1.0, 1.0)  # channel gain variance per user
    sigma2_r: float = 1.0         # relay noise variance
    sigma2_u: float = 1.0         # user-side noise variance
    sigma2_h: float = 0.0         # uplink CSI error variance (0 = perfect)
    sigma2_g: float = 0.0         # downlink CSI error variance (0 = perfect)
    R_t: float = 1.0              # target exchange rate, bits/channel use
    delta: float = 1e-3           # alternating-optimization stopping tolerance
    max_iters: int = 100          # alternating-optimization iteration cap
    seed: int = 0                 # root RNG seed
    half_rate: bool = True        # apply the 1/2 two-slot protocol factor to rates
    rate_ceiling: float = 30.0    # cap for degenerate noiseless computation rates

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        object.__setattr__(self, "N_k", tuple(int(n) for n in self.N_k))
        object.__setattr__(self, "L_k", tuple(int(l) for l in self.L_k))
        object.__setattr__(self, "P_k", tuple(float(p) for p in self.P_k))
        object.__setattr__(self, "sigma2_k", tuple(float(s) for s in self.sigma2_k))
        if len(self.N_k) != 2 * self.K:
            raise ValueError(f"N_k must have length 2K={2*self.K}, got {len(self.N_k)}")
        if len(self.L_k) != self.K:
            raise ValueError(f"L_k must have length K={self.K}, got {len(self.L_k)}")
        if len(self.P_k) != self.K:
            raise ValueError(f"P_k must have length K={self.K}, got {len(self.P_k)}")
        if len(self.sigma2_k) != 2 * self.K:
            raise ValueError(f"sigma2_k must have length 2K={2*self.K}, got {len(self.sigma2_k)}")
        if self.N_r < 1:
            raise ValueError(f"N_r must be >= 1, got {self.N_r}")
        if any(n < 1 for n in self.N_k):
            raise ValueError(f"N_k entries must be >= 1, got {self.N_k}")
        for p in range(self.K):
            lp = self.L_k[p]
            if lp < 1:
                raise ValueError(f"L_k[{p}] must be >= 1, got {lp}")
            n_min = min(self.N_k[p], self.N_k[p + self.K])
            if lp > n_min or lp > self.N_r:
                raise ValueError(
                    f"L_k[{p}]={lp} exceeds alignment feasibility bound "
                    f"min(N_k of pair, N_r)={min(n_min, self.N_r)}"
                )
        for name in ("P_r", "sigma2_r", "sigma2_u", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if any(p <= 0 for p in self.P_k):
            raise ValueError(f"P_k entries must be > 0, got {self.P_k}")
        if any(s <= 0 for s in self.sigma2_k):
            raise ValueError(f"sigma2_k entries must be > 0, got {self.sigma2_k}")
        if self.sigma2_h < 0 or self.sigma2_g < 0:
            raise ValueError("sigma2_h and sigma2_g must be >= 0")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    @property
    def L(self) -> int:
        """Total number of equations decoded at the relay."""
        return sum(self.L_k)

    @property
    def n_users(self) -> int:
        return 2 * self.K

    def partner(self, user: int) -> int:
        return partner(user, self.K)

    def pair_of(self, user: int) -> int:
        """Pair index of a user."""
        return user % self.K

    def pair_slice(self, pair: int) -> slice:
        """Slice of pair `pair`'s message coordinates inside the length-L vector."""
        start = sum(self.L_k[:pair])
        return slice(start, start + self.L_k[pair])

    def with_power(self, power: float) -> "SystemConfig":
        """Copy with all pair powers and the relay power set to `power`."""
        return replace(self, P_k=(power,) * self.K, P_r=power)


def uniform_config(K=2, N=2, N_r=None, L=1, power=10.0, **kwargs) -> SystemConfig:
    """Symmetric configuration: every user has N antennas, every pair L messages."""
    N_r = N if N_r is None else N_r
    return SystemConfig(
        K=K,
        N_k=(N,) * (2 * K),
        N_r=N_r,
        L_k=(L,) * K,
        P_k=(power,) * K,
        P_r=power,
        sigma2_k=(1.0,) * (2 * K),
        **kwargs,
    )
