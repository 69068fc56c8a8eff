"""Utility functions over an agent's incident weights.

A utility model works on one agent at a time: ``alpha`` and ``c`` are the
agent's incident weight and compatibility rows.  Every model must split its
gradient as ``H(c_k, alpha_k) + S(alpha)`` and its Hessian as
``diag(h(c_k, alpha_k)) + s(alpha) * ones``; the solver and the simulator only
see that decomposition.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

# evaluation guard near the barrier pole at alpha = 1
ALPHA_CAP = 1.0 - 1e-9


class UtilityModel(ABC):
    """Separable concave utility (gradient = H per component + shared S)."""

    def evaluate(self, alpha, c) -> float:
        raise NotImplementedError

    @abstractmethod
    def H(self, c, a):
        """Component-specific part of the gradient (elementwise)."""

    @abstractmethod
    def S(self, alpha) -> float:
        """Shared part of the gradient; symmetric in ``alpha``."""

    @abstractmethod
    def h(self, c, a):
        """Component-specific part of the Hessian diagonal (elementwise)."""

    @abstractmethod
    def s(self, alpha) -> float:
        """Shared Hessian entry (every off-diagonal, added to the diagonal)."""

    @abstractmethod
    def solve_c(self, other: "UtilityModel", a: float, target: float) -> float:
        """Compatibility ``c`` with ``self.H(c, a) + other.H(c, a) == target``."""

    def gradient(self, alpha, c) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        return self.H(np.asarray(c, dtype=float), alpha) + self.S(alpha)

    def hessian(self, alpha, c) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        hk = self.h(np.asarray(c, dtype=float), alpha)
        return np.diag(hk) + self.s(alpha)

    def S_from_sum(self, total: float) -> float:
        """``S`` for models whose shift depends only on the row sum."""
        raise NotImplementedError

    def s_from_sum(self, total: float) -> float:
        raise NotImplementedError


def _check_domain(alpha: np.ndarray) -> None:
    if np.any(alpha >= 1) or np.any(alpha < 0):
        raise ValueError("weights must lie in [0, 1) (barrier pole at 1)")


@dataclass(frozen=True)
class AlkyParams:
    kappa: float = 10.0
    gamma: float = 9.0
    delta: float = 2.0

    def __post_init__(self):
        for name in ("kappa", "gamma", "delta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 1):
                raise ValueError(f"{name} must be > 1, got {v!r}")

    @classmethod
    def from_mapping(cls, m: dict) -> "AlkyParams":
        return cls(**{k: float(m[k]) for k in ("kappa", "gamma", "delta") if k in m})


class Alky(UtilityModel):
    """Linear affinity benefit, per-edge barrier cost, substitution cost.

    ``U(alpha, c) = sum_j [kappa a_j c_j - a_j^g / (1 - a_j^g)] - (sum_j a_j)^d``
    """

    def __init__(self, params: AlkyParams | None = None, **kw):
        self.params = params if params is not None else AlkyParams(**kw)

    def __repr__(self) -> str:
        p = self.params
        return f"Alky(kappa={p.kappa}, gamma={p.gamma}, delta={p.delta})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Alky) and other.params == self.params

    def __hash__(self) -> int:
        return hash(self.params)

    @property
    def kappa(self) -> float:
        return self.params.kappa

    def barrier(self, a):
        a = np.minimum(np.asarray(a, dtype=float), ALPHA_CAP)
        ag = a ** self.params.gamma
        return ag / (1.0 - ag)

    def barrier_slope(self, a):
        """Derivative of the barrier cost, ``g(a) = gamma a^(gamma-1) / (1-a^gamma)^2``."""
        gm = self.params.gamma
        a = np.minimum(np.asarray(a, dtype=float), ALPHA_CAP)
        return gm * a ** (gm - 1) / (1.0 - a**gm) ** 2

    def evaluate(self, alpha, c) -> float:
        alpha = np.asarray(alpha, dtype=float)
        c = np.asarray(c, dtype=float)
        _check_domain(alpha)
        p = self.params
        return float(
            np.sum(p.kappa * alpha * c - self.barrier(alpha)) - np.sum(alpha) ** p.delta
        )

    def H(self, c, a):
        return self.params.kappa * np.asarray(c, dtype=float) - self.barrier_slope(a)

    def S(self, alpha) -> float:
        return self.S_from_sum(float(np.sum(alpha)))

    def S_from_sum(self, total: float) -> float:
        return -self.params.delta * total ** (self.params.delta - 1)

    def h(self, c, a):
        gm = self.params.gamma
        a = np.minimum(np.asarray(a, dtype=float), ALPHA_CAP)
        x = a**gm
        poly = (1 - gm) - (1 + gm) * x
        out = gm * a ** (gm - 2) / (1 - x) ** 3 * poly
        # ALKY curvature does not depend on c; keep the broadcast shape anyway
        return np.broadcast_arrays(out, np.asarray(c, dtype=float))[0].copy()

    def s(self, alpha) -> float:
        return self.s_from_sum(float(np.sum(alpha)))

    def s_from_sum(self, total: float) -> float:
        d = self.params.delta
        if d == 2:
            return -2.0
        if total <= 0:
            return -math.inf if d < 2 else 0.0
        return -d * (d - 1) * total ** (d - 2)

    def solve_c(self, other: UtilityModel, a: float, target: float) -> float:
        if isinstance(other, Alky):
            # H is affine in c: kappa_i c - g_i(a) + kappa_j c - g_j(a) = target
            num = target + float(self.barrier_slope(a)) + float(other.barrier_slope(a))
            return num / (self.kappa + other.kappa)
        return _bisect_c(self, other, a, target)

    def gradient(self, alpha, c) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        _check_domain(alpha)
        return super().gradient(alpha, c)


def _bisect_c(u: UtilityModel, v: UtilityModel, a: float, target: float) -> float:
    """Generic H-sum inverse; ``H`` is increasing in ``c`` by contract."""
    f = lambda c: float(u.H(c, a)) + float(v.H(c, a)) - target
    lo, hi = 1e-300, 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e300:
            raise ArithmeticError("H-sum inverse did not bracket")
    if f(lo) > 0:
        raise ValueError("infeasible recovery: required compatibility is not positive")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return 0.5 * (lo + hi)


def solve_c_from_grad(u_i: UtilityModel, u_j: UtilityModel, a: float, S_i: float, S_j: float) -> float:
    """Compatibility making the pair's social marginal utility vanish at weight ``a``."""
    if not 0 <= a < 1:
        raise ValueError("weights must lie in [0, 1)")
    c = u_i.solve_c(u_j, a, -(S_i + S_j))
    if not c > 0:
        raise ValueError(f"infeasible recovery: c = {c!r} is not positive")
    return c


def check_contract(model: UtilityModel, n: int = 5, samples: int = 20, seed: int = 0) -> None:
    """Numerical audit of the separable-concave contract; raises on failure."""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        c = rng.uniform(0.01, 2.0, n)
        if abs(model.evaluate(np.zeros(n), c)) > 1e-12:
            raise ValueError("utility at zero weights must be 0")
        if np.any(model.gradient(np.zeros(n), c) <= 0):
            raise ValueError("gradient at zero weights must be positive")
        a = rng.uniform(0.01, 0.9, n)
        if np.any(model.h(c, a) > 0) or model.s(a) > 0 or model.S(a) > 0:
            raise ValueError("curvature terms must be non-positive")
        if abs(model.S(a) - model.S(rng.permutation(a))) > 1e-12 * (1 + abs(model.S(a))):
            raise ValueError("S must be symmetric in its argument")


UtilitySpec = Union[UtilityModel, Sequence[UtilityModel]]


def per_agent(utility: UtilitySpec, n: int) -> list[UtilityModel]:
    if isinstance(utility, UtilityModel):
        return [utility] * n
    models = list(utility)
    if len(models) != n:
        raise ValueError(f"expected {n} utility models, got {len(models)}")
    return models


def homogeneous_alky(utility: UtilitySpec) -> AlkyParams | None:
    """The shared ALKY parameters when every agent uses the same ALKY model."""
    if isinstance(utility, Alky):
        return utility.params
    if isinstance(utility, UtilityModel):
        return None
    models = list(utility)
    if models and all(isinstance(m, Alky) and m.params == models[0].params for m in models):
        return models[0].params
    return None


def agent_utilities(g, c, utility: UtilitySpec) -> np.ndarray:
    """Per-agent utility values for graph ``g`` under compatibilities ``c``."""
    n = g.n_agents
    models = per_agent(utility, n)
    wm = g.matrix()
    cm = c.matrix()
    out = np.empty(n)
    for i in range(n):
        out[i] = models[i].evaluate(np.delete(wm[i], i), np.delete(cm[i], i))
    return out
