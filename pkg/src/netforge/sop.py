"""Social optimum: the weight list maximizing the sum of all agents' utilities.

The objective is strictly concave on the box ``[0, 1)^n`` and the utility's
own barrier keeps iterates below 1, so only the lower bound is projected.
Ascent directions come from the Hessian, which is a pair-diagonal matrix plus
one rank-one term per agent; the Newton system is solved in ``O(N^3)`` through
the Woodbury identity instead of ``O(n_pairs^3)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from netforge.errors import ConvergenceError, DataError, UniquenessError
from netforge.graph import CompatibilityList, WeightList, flat_to_pair, to_flat, to_matrix
from netforge.utility import (
    ALPHA_CAP,
    Alky,
    UtilityModel,
    UtilitySpec,
    homogeneous_alky,
    per_agent,
    solve_c_from_grad,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50_000
DEFAULT_STARTS = 3
# coordinates below this after convergence are snapped onto the bound
ZERO_SNAP = 1e-10
# weights below this with non-positive gradient are tested for an exact zero
SUPPORT_PROBE = 0.05
_SUPPORT_ROUNDS = 4
_PIN_ROUNDS = 5
_POLISH_MAX = 1000
_ARMIJO = 1e-4
_DAMP_MIN = 1e-12
_DAMP_MAX = 1.0


class SocialObjective:
    """Objective, gradient and curvature pieces in symmetric-matrix form."""

    def __init__(self, c: CompatibilityList, utility: UtilitySpec):
        self.n = c.n_agents
        self.c = c
        self.C = c.matrix()
        self.models = per_agent(utility, self.n)
        self.alky = homogeneous_alky(utility)
        if self.alky is not None:
            self._alky = Alky(self.alky)
        self._off = ~np.eye(self.n, dtype=bool)

    def _rows(self, W: np.ndarray):
        n = self.n
        for i in range(n):
            yield i, np.delete(W[i], i), np.delete(self.C[i], i)

    def feasible(self, W: np.ndarray) -> bool:
        return bool(np.all(W < ALPHA_CAP) and np.all(W >= 0))

    def value(self, W: np.ndarray) -> float:
        if not self.feasible(W):
            return -math.inf
        return float(self.agent_values(W).sum())

    def agent_values(self, W: np.ndarray) -> np.ndarray:
        if self.alky is not None:
            p = self.alky
            lin = p.kappa * self.C * W - self._alky.barrier(W) * self._off
            return lin.sum(axis=1) - W.sum(axis=1) ** p.delta
        return np.array([self.models[i].evaluate(a, c) for i, a, c in self._rows(W)])

    def shifts(self, W: np.ndarray) -> np.ndarray:
        if self.alky is not None:
            p = self.alky
            return -p.delta * W.sum(axis=1) ** (p.delta - 1)
        return np.array([self.models[i].S(a) for i, a, _ in self._rows(W)])

    def private_H(self, W: np.ndarray) -> np.ndarray:
        """``HM[i, j] = H_i(c_ij, w_ij)``; not symmetric for heterogeneous agents."""
        if self.alky is not None:
            HM = self._alky.H(self.C, W)
        else:
            HM = np.empty((self.n, self.n))
            for i in range(self.n):
                HM[i] = self.models[i].H(self.C[i], W[i])
        np.fill_diagonal(HM, 0.0)
        return HM

    def marginals(self, W: np.ndarray) -> np.ndarray:
        """``M[i, j] = dU_i / d alpha_ij``."""
        M = self.private_H(W) + self.shifts(W)[:, None]
        np.fill_diagonal(M, 0.0)
        return M

    def gradient(self, W: np.ndarray) -> np.ndarray:
        M = self.marginals(W)
        return M + M.T

    def curvature(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pair curvature ``A = -(h_i + h_j) >= 0`` and agent weights ``-s_i >= 0``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.alky is not None:
                hm = self._alky.h(self.C, W)
                sig = np.array([-self._alky.s_from_sum(t) for t in W.sum(axis=1)])
            else:
                hm = np.empty((self.n, self.n))
                for i in range(self.n):
                    hm[i] = self.models[i].h(self.C[i], W[i])
                sig = np.array([-self.models[i].s(a) for i, a, _ in self._rows(W)])
        A = -(hm + hm.T)
        np.fill_diagonal(A, 0.0)
        A = np.nan_to_num(A, nan=0.0, posinf=1e12)
        sig = np.nan_to_num(sig, nan=0.0, posinf=1e12)
        return np.maximum(A, 0.0), np.clip(sig, 0.0, 1e12)

    def hessian_flat(self, W: np.ndarray) -> np.ndarray:
        """Dense Hessian over the flat pair vector (small problems and tests only)."""
        n = self.n
        A, sig = self.curvature(W)
        iu, ju = np.triu_indices(n, k=1)
        m = iu.size
        B = np.zeros((m, n))
        B[np.arange(m), iu] = 1.0
        B[np.arange(m), ju] = 1.0
        return -(np.diag(A[iu, ju]) + B @ np.diag(sig) @ B.T)


def newton_direction(G: np.ndarray, A: np.ndarray, sig: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Solve ``(diag(A) + B diag(sig) B^T) d = G`` on the free pairs.

    ``B`` is the pair/agent incidence matrix; all arrays are symmetric
    ``N x N`` with the pair values off the diagonal.
    """
    Ainv = np.where(free, 1.0 / A, 0.0)
    np.fill_diagonal(Ainv, 0.0)
    Y = Ainv * G
    r = Y.sum(axis=1)
    M0 = Ainv + np.diag(Ainv.sum(axis=1))
    D = np.sqrt(sig)
    system = np.eye(len(sig)) + D[:, None] * M0 * D[None, :]
    z = np.linalg.solve(system, D * r)
    w = D * z
    return Y - Ainv * (w[:, None] + w[None, :])


def projected_gradient_norm(W: np.ndarray, G: np.ndarray) -> float:
    step = np.maximum(W + G, 0.0) - W
    np.fill_diagonal(step, 0.0)
    return float(np.abs(step).max()) if step.size else 0.0


@dataclass
class SopSolution:
    alpha_star: WeightList
    objective_value: float
    kkt_residual: float
    active_lower: list
    iterations: int
    objective_trace: list = field(default_factory=list, repr=False)
    starts: int = 1
    warnings: list = field(default_factory=list)

    def sidecar(self) -> dict:
        return {
            "objective_value": self.objective_value,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "active_lower": len(self.active_lower),
            "starts": self.starts,
            "warnings": list(self.warnings),
        }


def _slope(obj: SocialObjective, W, direction, t, upper):
    """Point, value, gradient and directional derivative along the projected ray."""
    x = W + t * direction
    Wn = np.clip(x, 0.0, upper)
    np.fill_diagonal(Wn, 0.0)
    fn = obj.value(Wn)
    if not math.isfinite(fn):
        return Wn, fn, None, -math.inf
    Gn = obj.gradient(Wn)
    moving = (x > 0.0) & (x < upper)
    return Wn, fn, Gn, float(np.sum(np.triu(Gn * direction * moving, 1)))


def _line_search(obj: SocialObjective, W, f, G, direction, upper):
    """Backtrack on the objective; fall back to the slope sign at round-off scale.

    Once gains drop below the resolution of the objective, only the sign of
    the directional derivative still says whether a step overshot.
    """
    moving0 = (direction > 0) | (W > 0)
    d0 = float(np.sum(np.triu(G * direction * moving0, 1)))
    if not d0 > 0:
        return None
    noise = 1e-12 * (1.0 + abs(f))
    t = 1.0
    while t > 1e-14:
        Wn, fn, Gn, dt = _slope(obj, W, direction, t, upper)
        if math.isfinite(fn):
            gain = float(np.sum(np.triu(G * (Wn - W), 1)))
            if fn - f > noise and fn >= f + _ARMIJO * gain:
                return t, Wn, fn, Gn
            if abs(fn - f) <= noise and dt >= -0.5 * d0:
                return t, Wn, fn, Gn
        t *= 0.5
    return None


def _ascend(obj: SocialObjective, W: np.ndarray, tol: float, max_iter: int, fixed=None):
    """Projected Newton ascent; coordinates in ``fixed`` stay pinned at zero."""
    n = obj.n
    off = ~np.eye(n, dtype=bool)
    f = obj.value(W)
    if not math.isfinite(f):
        raise DataError("starting point outside the weight domain")
    trace = [f]
    pin = (lambda G: G) if fixed is None else (lambda G: np.where(fixed, 0.0, G))
    G = pin(obj.gradient(W))
    pg = projected_gradient_norm(W, G)
    mu = _DAMP_MIN
    moved = math.inf
    polish = 0
    it = 0
    while it < max_iter:
        if pg < tol:
            # weakly curved coordinates keep moving after the gradient test passes
            if moved < tol or polish >= _POLISH_MAX:
                break
            polish += 1
        it += 1
        A, sig = obj.curvature(W)
        eps = min(1e-3, pg)
        # bound coordinates whose growth rate is already within tolerance stay put
        active = (W <= eps) & (G < np.where(W > 0, 0.0, tol)) & off
        if fixed is not None:
            active |= fixed
        free = off & ~active
        A_reg = A + mu
        A_sys = np.where(off, A_reg, 1.0)
        d = newton_direction(G, A_sys, sig, free)
        held = np.zeros_like(free)
        for _ in range(_PIN_ROUNDS):
            # a bound coordinate whose Newton move points outward is held in place
            out = free & (W <= eps) & (d < 0)
            if not out.any():
                break
            held |= out
            free &= ~out
            d = newton_direction(G, A_sys, sig, free)
        d = np.where(active, G / np.maximum(A_reg, 1.0), d)
        # shrinking coordinates near the bound go straight to it
        d = np.where(active & (W > 0), -W, d)
        d[held] = 0.0
        np.fill_diagonal(d, 0.0)
        # upward moves stay within half the distance to the barrier pole
        upper = 0.5 * (W + 1.0)
        step = None
        for direction in (d, G / max(1.0, float(np.abs(G).max()))):
            step = _line_search(obj, W, f, G, direction, upper)
            if step is not None:
                break
        if step is None:
            if pg < tol:
                break
            raise ConvergenceError(f"line search failed (projected gradient {pg:.3e})", pg)
        t, Wn, f, G = step
        moved = float(np.abs(Wn - W).max())
        W = Wn
        G = pin(G)
        # Levenberg-style damping: relax after full steps, stiffen after cuts
        mu = max(mu * 0.1, _DAMP_MIN) if t == 1.0 else min(mu * 10, _DAMP_MAX)
        trace.append(f)
        pg = projected_gradient_norm(W, G)
    else:
        if pg >= tol:
            raise ConvergenceError(
                f"no convergence within {max_iter} iterations (projected gradient {pg:.3e})", pg
            )
    return W, f, pg, it, trace


def _snap(obj: SocialObjective, W: np.ndarray, tol: float) -> np.ndarray:
    G = obj.gradient(W)
    snap = (W > 0) & (W < ZERO_SNAP) & (G <= tol)
    if snap.any():
        W = np.where(snap, 0.0, W)
    return W


def _refine_support(obj: SocialObjective, W: np.ndarray, f: float, tol: float, max_iter: int):
    """Settle which small weights are exactly zero.

    The barrier is nearly flat at zero, so a pair whose optimum sits on the
    bound can meet the stationarity tolerance at a visibly positive weight.
    Small coordinates that do not want to grow are pinned at zero, the rest
    is re-solved, and pins whose gradient at zero turns positive are released.
    """
    off = ~np.eye(obj.n, dtype=bool)
    G = obj.gradient(W)
    fixed = (W < SUPPORT_PROBE) & (G <= tol) & off
    if not fixed.any():
        return W, f, 0
    extra = 0
    for _ in range(_SUPPORT_ROUNDS):
        Wp = np.where(fixed, 0.0, W)
        Wn, fn, _, it, _ = _ascend(obj, Wp, tol, max_iter, fixed=fixed)
        extra += it
        Gn = obj.gradient(Wn)
        release = fixed & (Gn > tol)
        if not release.any():
            if fn >= f - 1e-12 * (1.0 + abs(f)):
                return Wn, fn, extra
            break
        fixed &= ~release
    return W, f, extra


def solve_sop(
    c: CompatibilityList,
    utility: UtilitySpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    n_starts: int = DEFAULT_STARTS,
    seed: Optional[int] = 0,
    init: Optional[WeightList] = None,
) -> SopSolution:
    """Maximize the social objective; every start must reach the same optimum."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    obj = SocialObjective(c, utility)
    n = obj.n
    rng = np.random.default_rng(seed)
    starts = []
    if init is not None:
        starts.append(init.matrix())
    while len(starts) < n_starts:
        starts.append(to_matrix(rng.uniform(0.01, 0.9, n * (n - 1) // 2), n))
    results = []
    for W0 in starts:
        W, f, pg, it, trace = _ascend(obj, W0, tol, max_iter)
        W, f, extra = _refine_support(obj, W, f, tol, max_iter)
        it += extra
        W = _snap(obj, W, tol)
        results.append((W, obj.value(W), it, trace))
    ref = results[0][0]
    for W, *_ in results[1:]:
        gap = float(np.abs(W - ref).max())
        if gap > 10 * tol:
            raise UniquenessError(f"uniqueness check failed: starts differ by {gap:.3e}")
    W, f, it, trace = max(results, key=lambda r: r[1])
    G = obj.gradient(W)
    pg = projected_gradient_norm(W, G)
    flat = to_flat(W)
    alpha = WeightList(flat, n)
    active = [flat_to_pair(int(k), n) for k in np.flatnonzero(flat == 0)]
    notes = []
    iso = alpha.isolated()
    if iso.size:
        msg = f"agents {iso.tolist()} are isolated at the optimum (feasibility clause violated)"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return SopSolution(
        alpha_star=alpha,
        objective_value=f,
        kkt_residual=pg,
        active_lower=active,
        iterations=sum(r[2] for r in results),
        objective_trace=trace,
        starts=len(results),
        warnings=notes,
    )


@dataclass
class RecoveryResult:
    c_bar: CompatibilityList
    slack_pairs: list


def recover_compat(alpha: WeightList, utility: UtilitySpec) -> RecoveryResult:
    """Unique compatibility list for which ``alpha`` is the unconstrained optimum.

    Pairs with zero weight are slack: any compatibility in ``(0, c_bar]``
    leaves the optimum unchanged.
    """
    n = alpha.n_agents
    if np.any(alpha.values >= 1):
        raise ValueError("weights must lie in [0, 1)")
    iso = alpha.isolated()
    if iso.size:
        raise DataError(f"infeasible weight list: isolated agents {(iso + 1).tolist()}")
    models = per_agent(utility, n)
    W = alpha.matrix()
    shifts = np.array([models[i].S(np.delete(W[i], i)) for i in range(n)])
    params = homogeneous_alky(utility)
    if params is not None:
        u = Alky(params)
        g = u.barrier_slope(alpha.values)
        iu, ju = np.triu_indices(n, k=1)
        cbar = (2 * g - shifts[iu] - shifts[ju]) / (2 * params.kappa)
        if np.any(cbar <= 0):
            raise DataError("infeasible recovery: non-positive compatibility")
    else:
        cbar = np.empty(alpha.values.size)
        for k, (i, j) in enumerate(alpha.pairs()):
            cbar[k] = solve_c_from_grad(models[i], models[j], W[i, j], shifts[i], shifts[j])
    slack = [flat_to_pair(int(k), n) for k in np.flatnonzero(alpha.values == 0)]
    return RecoveryResult(CompatibilityList(cbar, n), slack)


# ------------------------------------------------------------------- auditing


@dataclass(frozen=True)
class StabilityViolation:
    pair: tuple
    kind: str  # "sever" or "add"
    agent: int
    gain: float
    weight: float


def check_pairwise_stability(
    g: WeightList,
    c: CompatibilityList,
    utility: UtilitySpec,
    grid: int = 64,
    atol: float = 1e-9,
    severance: str = "unilateral",
) -> list[StabilityViolation]:
    """Pairwise-stability audit.

    A present edge is violated when an endpoint strictly gains (beyond
    ``atol``) by severing it.  With ``severance="joint"`` severing only counts
    when it leaves both endpoints weakly better off and one strictly, the
    same test applied to additions.  An absent edge is violated when some
    grid weight in ``(0, 1)`` leaves both endpoints weakly better off and one
    strictly better off.
    """
    if severance not in ("unilateral", "joint"):
        raise ValueError("severance must be 'unilateral' or 'joint'")
    n = g.n_agents
    models = per_agent(utility, n)
    W = g.matrix()
    C = c.matrix()
    rows = [np.delete(W[i], i) for i in range(n)]
    crow = [np.delete(C[i], i) for i in range(n)]
    base = np.array([models[i].evaluate(rows[i], crow[i]) for i in range(n)])
    grid_pts = np.arange(1, grid + 1) / (grid + 1)
    out = []

    def pos(i, j):
        return j if j < i else j - 1

    def utility_with(i, j, a):
        r = rows[i].copy()
        r[pos(i, j)] = a
        return models[i].evaluate(r, crow[i])

    for i, j in g.pairs():
        w = W[i, j]
        if w > 0:
            gains = [utility_with(k, other, 0.0) - base[k] for k, other in ((i, j), (j, i))]
            tols = [atol * (1 + abs(base[i])), atol * (1 + abs(base[j]))]
            if severance == "joint":
                if all(g >= -t for g, t in zip(gains, tols)) and any(g > t for g, t in zip(gains, tols)):
                    k = 0 if gains[0] >= gains[1] else 1
                    out.append(StabilityViolation((i, j), "sever", (i, j)[k], float(gains[k]), 0.0))
                continue
            for k, gain, t in zip((i, j), gains, tols):
                if gain > t:
                    out.append(StabilityViolation((i, j), "sever", k, float(gain), 0.0))
        else:
            for a in grid_pts:
                gi = utility_with(i, j, a) - base[i]
                gj = utility_with(j, i, a) - base[j]
                ti = atol * (1 + abs(base[i]))
                tj = atol * (1 + abs(base[j]))
                if gi >= -ti and gj >= -tj and (gi > ti or gj > tj):
                    k = i if gi >= gj else j
                    out.append(StabilityViolation((i, j), "add", k, float(max(gi, gj)), float(a)))
                    break
    return out


def check_marginal_reciprocity(solution, c: CompatibilityList, utility: UtilitySpec) -> float:
    """Largest ``|dU_i/da_ij + dU_j/da_ij|`` over pairs with positive weight."""
    alpha = solution.alpha_star if isinstance(solution, SopSolution) else solution
    obj = SocialObjective(c, utility)
    W = alpha.matrix()
    G = obj.gradient(W)
    interior = np.triu(W > 0, 1)
    if not interior.any():
        return 0.0
    return float(np.abs(G[interior]).max())
