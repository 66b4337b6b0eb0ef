"""Min-max quadratic-norm solver.

Solves problems of the shape

    minimize_u  max_j ||M_j u + c_j||^2    s.t.   ||S_m u||^2 <= rho_m,

the form all SOCP subproblems of the transceiver designs reduce to after
lifting complex variables to real pairs.  Method: bisection on the epigraph
bound x; each feasibility subproblem "exists u with all cones <= x inside the
balls" is solved by accelerated projected gradient on the hinge penalty
phi(u) = sum_j max(0, ||M_j u + c_j||^2 - x), with exact (eigthe-basis secular
equation) projection onto each ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OracleTooLarge


# ---------------------------------------------------------------------------
# complex <-> real lifting

def lift_matrix(M: np.ndarray) -> np.ndarray:
    """Real representation of a complex linear map: [[Re, -Im], [Im, Re]]."""
    A, B = np.real(M), np.imag(M)
    return np.block([[A, -B], [B, A]])


def lift_vector(c: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(c), np.imag(c)])


def unlift_vector(u: np.ndarray) -> np.ndarray:
    n = u.size // 2
    return u[:n] + 1j * u[n:]


class BlockCodec:
    """Layout of a real optimization variable made of complex blocks.

    Block i is a complex vector of length sizes[i], stored as
    [Re z_i; Im z_i] at a contiguous slice of the real variable.
    """

    def __init__(self, sizes):
        self.sizes = [int(s) for s in sizes]
        self.starts = np.concatenate([[0], np.cumsum([2 * s for s in self.sizes])])
        self.dim = int(self.starts[-1])

    def block_slice(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i + 1]))

    def encode(self, blocks) -> np.ndarray:
        return np.concatenate([lift_vector(np.asarray(b).ravel(order="F")) for b in blocks])

    def decode(self, u: np.ndarray):
        return [unlift_vector(u[self.block_slice(i)]) for i in range(len(self.sizes))]

    def place_complex(self, block_maps: dict, out_len: int) -> np.ndarray:
        """Real matrix of a complex affine map sum_i A_i z_i with output length
        out_len; block_maps maps block index -> complex matrix A_i."""
        M = np.zeros((2 * out_len, self.dim))
        for i, A in block_maps.items():
            M[:, self.block_slice(i)] = lift_matrix(A)
        return M


def stack_cone(pieces) -> tuple:
    """Vertically stack (M, c) affine pieces into a single cone."""
    M = np.vstack([m for m, _ in pieces])
    c = np.concatenate([np.atleast_1d(c) for _, c in pieces])
    return M, c


def const_row(dim: int, value: float) -> tuple:
    """Affine piece contributing a constant component to a cone norm."""
    return np.zeros((1, dim)), np.array([float(value)])


# ---------------------------------------------------------------------------
# problem / solution containers

@dataclass
class MinMaxProblem:
    dim: int
    cones: list                      # [(M_j, c_j)] real matrices/vectors
    balls: list = field(default_factory=list)   # [(S_m, rho_m)]
    tol: float = 1e-6
    max_iters: int = 80              # bisection step cap

    def __post_init__(self):
        if not self.cones:
            raise ValueError("at least one cone is required")
        for M, c in self.cones:
            if M.shape[1] != self.dim or M.shape[0] != c.size:
                raise ValueError("cone dimensions inconsistent with problem dim")
        for S, rho in self.balls:
            if S.shape[1] != self.dim:
                raise ValueError("ball dimensions inconsistent with problem dim")
            if rho <= 0:
                raise ValueError("ball budgets must be > 0")


@dataclass
class MinMaxSolution:
    u: np.ndarray
    x: float
    status: str                      # "optimal" | "max_iters"
    kkt_residual: float
    brackets: list                   # [(lb, ub)] per bisection step, monotone
    iterations: int


# ---------------------------------------------------------------------------
# exact projection onto { u : ||S u||^2 <= rho }

class _Ball:
    def __init__(self, S: np.ndarray, rho: float):
        self.rho = float(rho)
        self.cols = np.flatnonzero(np.any(S != 0.0, axis=0))
        Ssub = S[:, self.cols]
        Q = Ssub.T @ Ssub
        d = Q.shape[0]
        self.sphere = np.allclose(Q, Q[0, 0] * np.eye(d), rtol=0, atol=1e-14 * max(Q[0, 0], 1.0))
        if self.sphere:
            self.alpha = float(Q[0, 0])
        else:
            w, V = np.linalg.eigh(Q)
            self.w = np.clip(w, 0.0, None)
            self.V = V
        self.Q = Q

    def violation(self, u: np.ndarray) -> float:
        z = u[self.cols]
        return float(z @ self.Q @ z - self.rho)

    def project_(self, u: np.ndarray) -> None:
        """In-place Euclidean projection of the supported block."""
        z = u[self.cols]
        if self.sphere:
            q = self.alpha * float(z @ z)
            if q > self.rho:
                u[self.cols] = z * np.sqrt(self.rho / q)
            return
        y = self.V.T @ z
        wy2 = self.w * y * y
        if float(wy2.sum()) <= self.rho:
            return
        # solve sum w y^2 / (1 + lam w)^2 = rho; g is convex decreasing, so
        # Newton from lam = 0 increases monotonically to the root
        lam = 0.0
        for _ in range(60):
            t = 1.0 + lam * self.w
            g = float((wy2 / (t * t)).sum()) - self.rho
            if g <= 1e-14 * self.rho:
                break
            gp = -2.0 * float((self.w * wy2 / (t * t * t)).sum())
            lam -= g / gp
        u[self.cols] = self.V @ (y / (1.0 + lam * self.w))


def _disjoint(balls) -> bool:
    seen = set()
    for b in balls:
        cols = set(b.cols.tolist())
        if cols & seen:
            return False
        seen |= cols
    return True


# ---------------------------------------------------------------------------
# solver

class _Workspace:
    def __init__(self, p: MinMaxProblem):
        self.M = np.vstack([M for M, _ in p.cones])
        self.c = np.concatenate([c for _, c in p.cones])
        lens = [c.size for _, c in p.cones]
        self.starts = np.concatenate([[0], np.cumsum(lens)])[:-1].astype(int)
        self.lens = np.asarray(lens)
        self.balls = [_Ball(S, rho) for S, rho in p.balls]
        self.sequential = _disjoint(self.balls)
        self.lip = 2.0 * (np.linalg.norm(self.M, 2) ** 2 + 1e-30)
        self.lstep = self.lip  # running curvature estimate for backtracking
        self.MtM = np.stack([M.T @ M for M, _ in p.cones])
        self.Mtc = np.stack([M.T @ c for M, c in p.cones])
        covered = np.zeros(p.dim, dtype=bool)
        for b in self.balls:
            covered[b.cols] = True
        self.uncovered = ~covered
        self.best_lb = 0.0  # certified lower bound on the min-max optimum

    def cone_values(self, u: np.ndarray) -> np.ndarray:
        r = self.M @ u + self.c
        return np.add.reduceat(r * r, self.starts)

    def fmax(self, u: np.ndarray) -> float:
        return float(self.cone_values(u).max())

    def dual_bound(self, lam: np.ndarray, v: np.ndarray, r: np.ndarray,
                   vals: np.ndarray) -> float:
        """Certified lower bound on min_u-in-balls max_j g_j(u).

        For any simplex weights lam, m(u) = sum_j lam_j g_j(u) minorizes the
        max, so both the ball-constrained minimum of m's linearization at v
        and the unconstrained minimum of m lower-bound the optimum.
        """
        m_v = float(lam @ vals)
        g = 2.0 * (self.M.T @ (np.repeat(lam, self.lens) * r))
        bound = -np.inf
        gmax = float(np.abs(g).max()) + 1e-300
        if self.balls and not np.any(np.abs(g[self.uncovered]) > 1e-12 * gmax):
            lin = m_v - float(g @ v)
            for b in self.balls:
                cb = g[b.cols]
                if b.sphere:
                    q = float(cb @ cb) / b.alpha
                else:
                    y = b.V.T @ cb
                    if np.any((b.w <= 1e-12 * b.w.max()) & (np.abs(y) > 1e-10 * gmax)):
                        lin = -np.inf
                        break
                    q = float((y * y / np.maximum(b.w, 1e-300)).sum())
                lin -= np.sqrt(max(b.rho * q, 0.0))
            bound = max(bound, lin)
        # unconstrained minimum of the weighted quadratic (least squares)
        Q = np.einsum("j,jab->ab", lam, self.MtM)
        rhs = -(lam @ self.Mtc)
        ustar = np.linalg.lstsq(Q, rhs, rcond=None)[0]
        bound = max(bound, float(lam @ self.cone_values(ustar)))
        return bound

    def project_(self, u: np.ndarray, passes: int = 40) -> np.ndarray:
        if not self.balls:
            return u
        if self.sequential:
            for b in self.balls:
                b.project_(u)
            return u
        # Dykstra's alternating projections for overlapping balls
        incr = [np.zeros_like(u) for _ in self.balls]
        for _ in range(passes):
            moved = 0.0
            for i, b in enumerate(self.balls):
                v = u + incr[i]
                w = v.copy()
                b.project_(w)
                incr[i] = v - w
                moved += float(np.abs(w - u).max())
                u = w
            if moved <= 1e-14:
                break
        return u

    def _eval(self, u: np.ndarray, x: float):
        """Residual, cone values, positive violations, hinge sum, squared sum."""
        r = self.M @ u + self.c
        vals = np.add.reduceat(r * r, self.starts)
        viol = vals - x
        pos = np.where(viol > 0.0, viol, 0.0)
        return r, vals, pos, float(pos.sum()), float((pos * pos).sum())

    def feasibility(self, x: float, u0: np.ndarray, eps: float,
                    inner_cap: int = 1500, stall_cap: int = 60):
        """Accelerated projected gradient on the cone-violation penalty
        phi(u) = sum_j max(0, g_j(u) - x), minimized through its C^1 square
        psi(u) = sum_j max(0, g_j(u) - x)^2 with backtracking steps.

        Returns (feasible, u): u attains phi <= eps when feasible, otherwise
        the best ball-feasible iterate found.  Along the way the certified
        lower bound `best_lb` is raised; once it passes x the level is
        provably infeasible and the solve exits immediately.
        """
        M, lens = self.M, self.lens
        u = u0.copy()
        self.project_(u)
        r, vals, pos, phi, psi = self._eval(u, x)
        if phi <= eps:
            return True, u
        if pos.sum() > 0.0:
            lam = pos / pos.sum()
            self.best_lb = max(self.best_lb, self.dual_bound(lam, u, r, vals))
            if self.best_lb >= x:
                return False, u
        L_est = self.lstep
        y = u.copy()
        t = 1.0
        psi_best = psi
        u_best = u.copy()
        stall = 0
        for it in range(inner_cap):
            r_y = M @ y + self.c
            viol_y = np.add.reduceat(r_y * r_y, self.starts) - x
            pos_y = np.where(viol_y > 0.0, viol_y, 0.0)
            psi_y = float((pos_y * pos_y).sum())
            if psi_y == 0.0:
                # momentum point satisfies the cones but may sit outside the
                # balls: restart from its projection
                u_new = y.copy()
                self.project_(u_new)
                r, vals, pos, phi, psi = self._eval(u_new, x)
                if phi <= eps:
                    return True, u_new
                y = u_new.copy()
                u = u_new
                t = 1.0
                continue
            g = 4.0 * (M.T @ (np.repeat(pos_y, lens) * r_y))
            while True:
                u_new = y - g / L_est
                self.project_(u_new)
                r, vals, pos, phi, psi = self._eval(u_new, x)
                d = u_new - y
                if psi <= psi_y + g @ d + 0.5 * L_est * float(d @ d) + 1e-16 * (1.0 + psi_y):
                    break
                L_est *= 2.0
                if L_est > 1e18 * self.lstep:
                    break
            if phi <= eps:
                self.lstep = max(L_est, self.lip)
                return True, u_new
            if it % 3 == 0 and pos.sum() > 0.0:
                lam = pos / pos.sum()
                self.best_lb = max(self.best_lb, self.dual_bound(lam, u_new, r, vals))
                if self.best_lb >= x:
                    self.lstep = max(L_est, self.lip)
                    return False, u_new
            if psi < psi_best * (1.0 - 1e-10):
                psi_best = psi
                u_best = u_new.copy()
                stall = 0
            else:
                stall += 1
                if stall > stall_cap:
                    self.lstep = max(L_est, self.lip)
                    return False, u_best
            if psi > psi_y:
                t = 1.0              # adaptive restart
                y = u_new.copy()
            else:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                y = u_new + ((t - 1.0) / t_new) * (u_new - u)
                t = t_new
            u = u_new
            L_est *= 0.9
        self.lstep = max(L_est, self.lip)
        return False, u_best


def _kkt_newton(ws: _Workspace, p: MinMaxProblem, u: np.ndarray, F: float,
                act: list, bact: list):
    """Newton solve of the equalized KKT system for a fixed active set:
    sum_j lam_j grad g_j + sum_b mu_b grad h_b = 0, g_j = t (j active),
    h_b = rho_b (b active), sum lam = 1.  Returns (u, t, lam, mu) or None."""
    n = p.dim
    nA, nB = len(act), len(bact)
    dim = n + 1 + nA + nB
    Qb = []
    for i in bact:
        b = ws.balls[i]
        Q = np.zeros((n, n))
        Q[np.ix_(b.cols, b.cols)] = b.Q
        Qb.append(Q)
    Ms = [p.cones[j][0] for j in act]
    cs = [p.cones[j][1] for j in act]

    # initialize multipliers from a least-squares fit of the stationarity
    # equation at u (clipped to the nonnegative orthant)
    cols = [2.0 * (M.T @ (M @ u + c)) for M, c in zip(Ms, cs)]
    cols += [2.0 * (Q @ u) for Q in Qb]
    G = np.column_stack(cols)
    big = 1e3 * max(1.0, float(np.abs(G).max()))
    simplex_row = np.concatenate([np.ones(nA), np.zeros(nB)])
    w = np.linalg.lstsq(np.vstack([G, big * simplex_row]),
                        np.concatenate([np.zeros(n), [big]]), rcond=None)[0]
    lam0 = np.clip(w[:nA], 0.0, None)
    lam0 = lam0 / lam0.sum() if lam0.sum() > 0 else np.full(nA, 1.0 / nA)
    mu0 = np.clip(w[nA:], 0.0, None)

    z = np.zeros(dim)
    z[:n] = u
    z[n] = F
    z[n + 1:n + 1 + nA] = lam0
    z[n + 1 + nA:] = mu0

    def residual(z):
        uu, t = z[:n], z[n]
        lam = z[n + 1:n + 1 + nA]
        mu = z[n + 1 + nA:]
        rs = [M @ uu + c for M, c in zip(Ms, cs)]
        r1 = np.zeros(n)
        for lj, M, r in zip(lam, Ms, rs):
            r1 += 2.0 * lj * (M.T @ r)
        for mb, Q in zip(mu, Qb):
            r1 += 2.0 * mb * (Q @ uu)
        r2 = np.array([float(r @ r) - t for r in rs])
        r3 = np.array([float(uu @ Q @ uu) - ws.balls[i].rho
                       for Q, i in zip(Qb, bact)])
        return np.concatenate([r1, r2, r3, [lam.sum() - 1.0]]), rs

    def jacobian(z, rs):
        uu = z[:n]
        lam = z[n + 1:n + 1 + nA]
        mu = z[n + 1 + nA:]
        J = np.zeros((dim, dim))
        Huu = np.zeros((n, n))
        for lj, j in zip(lam, act):
            Huu += 2.0 * lj * ws.MtM[j]
        for mb, Q in zip(mu, Qb):
            Huu += 2.0 * mb * Q
        J[:n, :n] = Huu
        for a, (M, r) in enumerate(zip(Ms, rs)):
            J[:n, n + 1 + a] = 2.0 * (M.T @ r)
            J[n + a, :n] = 2.0 * (r @ M)
            J[n + a, n] = -1.0
        for b_i, Q in enumerate(Qb):
            J[:n, n + 1 + nA + b_i] = 2.0 * (Q @ uu)
            J[n + nA + b_i, :n] = 2.0 * (Q @ uu)
        J[-1, n + 1:n + 1 + nA] = 1.0
        return J

    R, rs = residual(z)
    scale = max(1.0, float(np.abs(R).max()))
    for _ in range(40):
        if np.abs(R).max() <= 1e-12 * scale:
            break
        J = jacobian(z, rs)
        try:
            step = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError:
            return None
        ok = False
        for _ in range(25):
            z_new = z + step
            R_new, rs_new = residual(z_new)
            if np.linalg.norm(R_new) < np.linalg.norm(R):
                z, R, rs = z_new, R_new, rs_new
                ok = True
                break
            step *= 0.5
        if not ok:
            break
    if np.abs(R).max() > 1e-9 * max(1.0, abs(z[n])):
        return None
    return z[:n], float(z[n]), z[n + 1:n + 1 + nA], z[n + 1 + nA:]


def _polish(ws: _Workspace, p: MinMaxProblem, u: np.ndarray, lb: float):
    """Active-set Newton refinement of a near-optimal iterate.

    Starts from the constraints that look active at u and iterates: drop
    constraints with negative multipliers, add violated ones, and accept only
    a verified KKT point (primal feasible with nonnegative multipliers).
    Returns (u, value, simplex weights over all cones) or None.
    """
    vals = ws.cone_values(u)
    F = float(vals.max())
    slack = max(3.0 * (F - lb), 1e-9 * max(1.0, F))
    act = set(np.flatnonzero(vals >= F - slack).tolist())
    bact = {i for i, b in enumerate(ws.balls)
            if b.violation(u) >= -1e-3 * b.rho}
    for _ in range(4):
        sol = _kkt_newton(ws, p, u, F, sorted(act), sorted(bact))
        if sol is None:
            return None
        uu, t, lam, mu = sol
        changed = False
        for j, lj in zip(sorted(act), lam):
            if lj < -1e-9 and len(act) > 1:
                act.discard(j)
                changed = True
        for b_i, mb in zip(sorted(bact), mu):
            if mb < -1e-9:
                bact.discard(b_i)
                changed = True
        if changed:
            continue
        allvals = ws.cone_values(uu)
        grow = False
        for j in range(len(p.cones)):
            if j not in act and allvals[j] > t * (1.0 + 1e-9) + 1e-12:
                act.add(j)
                grow = True
        for i, b in enumerate(ws.balls):
            if i not in bact and b.violation(uu) > 1e-9 * max(1.0, b.rho):
                bact.add(i)
                grow = True
        if grow:
            continue
        if np.any(lam < -1e-9) or np.any(mu < -1e-9) or t < -1e-12:
            return None
        lam_full = np.zeros(len(p.cones))
        lam_full[sorted(act)] = np.clip(lam, 0.0, None)
        s = lam_full.sum()
        if s <= 0:
            return None
        lam_full /= s
        return uu, float(allvals.max()), lam_full
    return None


def solve(p: MinMaxProblem, u0: np.ndarray | None = None) -> MinMaxSolution:
    """Bisection on the epigraph bound with warm-started feasibility solves."""
    ws = _Workspace(p)
    u = np.zeros(p.dim) if u0 is None else np.asarray(u0, dtype=float).copy()
    ws.project_(u)
    ub = ws.fmax(u)
    # single-cone weightings give cheap certified lower bounds
    r0 = ws.M @ u + ws.c
    vals0 = ws.cone_values(u)
    for j in range(len(p.cones)):
        lam = np.zeros(len(p.cones))
        lam[j] = 1.0
        ws.best_lb = max(ws.best_lb, ws.dual_bound(lam, u, r0, vals0))
    # the reported bracket only ever tightens through certified dual bounds;
    # uncertified "infeasible" stall verdicts merely steer the pivot
    lb = min(ws.best_lb, ub)
    lb_soft = lb
    brackets = [(lb, ub)]
    it = 0
    polish_left = 8
    u_probe = u
    while ub - lb > p.tol * max(1.0, ub) and it < p.max_iters:
        it += 1
        if polish_left > 0 and ub - lb_soft <= 0.5 * max(1.0, ub):
            polish_left -= 1
            pol = _polish(ws, p, u_probe, lb)
            if pol is not None:
                u_pol, f_pol, lam = pol
                if f_pol <= ub:
                    u, ub = u_pol, f_pol
                r_pol = ws.M @ u_pol + ws.c
                ws.best_lb = max(ws.best_lb,
                                 ws.dual_bound(lam, u_pol, r_pol,
                                               ws.cone_values(u_pol)))
                lb = max(lb, min(ws.best_lb, ub))
                lb_soft = max(lb_soft, lb)
                brackets.append((lb, ub))
                continue
        if ub - lb_soft <= 1e-14 * max(1.0, ub) and polish_left <= 0:
            break
        x = 0.5 * (lb_soft + ub)
        eps = min(1e-8, 0.01 * p.tol) * max(1.0, x)
        feasible, u_try = ws.feasibility(x, u, eps)
        if feasible:
            u = u_try
            ub = min(ub, ws.fmax(u))
            u_probe = u
        else:
            lb_soft = x
            u_probe = u_try
        lb = max(lb, min(ws.best_lb, ub))
        lb_soft = max(lb_soft, lb)
        brackets.append((lb, ub))
    gap = (ub - lb) / max(1.0, ub)
    ball_viol = max((b.violation(u) for b in ws.balls), default=0.0)
    status = "optimal" if gap <= p.tol else "max_iters"
    return MinMaxSolution(u=u, x=ws.fmax(u), status=status,
                          kkt_residual=gap + max(ball_viol, 0.0),
                          brackets=brackets, iterations=it)


# ---------------------------------------------------------------------------
# test oracle: multi-start projected subgradient plus grid refinement

def oracle_solve(p: MinMaxProblem, n_starts: int = 8, iters: int = 12_000,
                 seed: int = 12345) -> MinMaxSolution:
    if p.dim > 4:
        raise OracleTooLarge(f"oracle guard: dim={p.dim} (max 4)")
    ws = _Workspace(p)
    rng = np.random.default_rng(seed)

    starts = [np.zeros(p.dim)]
    for M, c in p.cones:
        starts.append(np.linalg.lstsq(M, -c, rcond=None)[0])
    scale = max(1.0, max(np.linalg.norm(s) for s in starts))
    while len(starts) < n_starts + 1 + len(p.cones):
        starts.append(rng.normal(0.0, scale, p.dim))

    def fval(u):
        return ws.fmax(u)

    best_u, best_f = None, np.inf
    for s in starts:
        u = ws.project_(s.copy())
        f = fval(u)
        if f < best_f:
            best_f, best_u = f, u.copy()
        for t in range(iters):
            vals = ws.cone_values(u)
            j = int(np.argmax(vals))
            M, c = p.cones[j]
            g = 2.0 * (M.T @ (M @ u + c))
            gn = np.linalg.norm(g)
            if gn < 1e-14:
                break
            step = scale / (np.sqrt(t + 1.0) * gn)
            u = ws.project_(u - step * g)
            f = fval(u)
            if f < best_f:
                best_f, best_u = f, u.copy()

    # local grid refinement around the incumbent
    h = 0.1 * scale
    offsets = np.array(np.meshgrid(*([[-1.0, 0.0, 1.0]] * p.dim))).reshape(p.dim, -1).T
    for _ in range(60):
        cand = best_u + h * offsets
        improved = False
        for v in cand:
            v = ws.project_(v.copy())
            f = fval(v)
            if f < best_f - 1e-15:
                best_f, best_u, improved = f, v.copy(), True
        if not improved:
            h *= 0.5
            if h < 1e-10 * max(1.0, scale):
                break
    return MinMaxSolution(u=best_u, x=best_f, status="optimal", kkt_residual=0.0,
                          brackets=[(0.0, best_f)], iterations=0)
