"""Log-optimal portfolios over discrete return distributions, plus baselines.

The solver maximizes E[log(b . X)] on the simplex with a multiplicative
fixed-point iteration (exponentiated ascent with over-relaxation and monotone
backtracking); optimality is certified through the KKT conditions
E[a_j / (b . a)] <= 1 with equality on the support. Reported growth rates are
base 2; gradients are taken in natural log, which shares the same argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyHistory, InvalidParams, NonConvergence, QuadratureUnstable, Unsupported

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class Portfolio:
    """Nonnegative weights over k assets summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or len(w) < 1:
            raise InvalidParams("portfolio weights must be a nonempty 1-D vector")
        if np.any(w < -1e-12):
            raise InvalidParams(f"negative portfolio weight in {w.tolist()}")
        if abs(w.sum() - 1.0) > 1e-10:
            raise InvalidParams(f"portfolio weights sum to {w.sum()}, not 1")

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class DiscreteReturnDist:
    """Finitely supported return distribution: atoms (n, k) with probabilities."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)
        if a.ndim != 2 or a.shape[0] != len(p):
            raise InvalidParams(f"atoms {a.shape} and probs {p.shape} disagree")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidParams("probabilities must be nonnegative and sum to 1")
        if np.any(a <= 0):
            raise InvalidParams("return atoms must be strictly positive")

    @property
    def k(self) -> int:
        return self.atoms.shape[1]


def growth_rate(b: Portfolio | np.ndarray, dist: DiscreteReturnDist) -> float:
    """Expected base-2 log growth sum_i s_i log2(b . a_i)."""
    w = b.weights if isinstance(b, Portfolio) else np.asarray(b, dtype=float)
    return float(dist.probs @ np.log2(dist.atoms @ w))


def kkt_gradient(b: np.ndarray, dist: DiscreteReturnDist) -> np.ndarray:
    """g_j = E[a_j / (b . a)]; equals 1 on the support at the optimum."""
    r = dist.atoms @ b
    return dist.atoms.T @ (dist.probs / r)


def kkt_residual(b: np.ndarray, dist: DiscreteReturnDist, support_tol: float) -> float:
    g = kkt_gradient(b, dist)
    over = float(g.max() - 1.0)
    on_support = g[b > support_tol]
    under = float((1.0 - on_support).max()) if on_support.size else 0.0
    return max(over, under, 0.0)


def log_optimal_portfolio(
    dist: DiscreteReturnDist, tol: float = 1e-8, max_iter: int = 100_000
) -> Portfolio:
    """argmax_b E[log(b . X)] on the simplex, certified by the KKT residual.

    The iteration is b <- normalize(b * g^alpha) with g the KKT gradient:
    alpha=1 is the classic monotone fixed-point step, larger alpha is attempted
    first and kept only when the objective improves. Degenerate objectives
    (constant in b) terminate immediately at the uniform start.
    """
    if tol <= 0:
        raise InvalidParams(f"tol must be > 0, got {tol}")
    k = dist.k
    if k == 1:
        return Portfolio(np.ones(1))
    A, s = dist.atoms, dist.probs
    b = np.full(k, 1.0 / k)
    r = A @ b
    obj = float(s @ np.log(r))
    residual = np.inf
    for _ in range(max_iter):
        g = A.T @ (s / r)
        over = float(g.max() - 1.0)
        on_support = g[b > tol]
        under = float((1.0 - on_support).max()) if on_support.size else 0.0
        residual = max(over, under, 0.0)
        if residual <= tol:
            return Portfolio(b / b.sum())
        stepped = False
        for alpha in (16.0, 4.0):
            cand = b * g**alpha
            cand /= cand.sum()
            rc = A @ cand
            if np.all(rc > 0):
                oc = float(s @ np.log(rc))
                if oc > obj + 1e-15:
                    b, r, obj = cand, rc, oc
                    stepped = True
                    break
        if not stepped:
            b = b * g
            b /= b.sum()
            r = A @ b
            obj = float(s @ np.log(r))
    raise NonConvergence(residual, max_iter)


def log_optimal_for_bins(
    bin_probs: np.ndarray, bin_atoms: np.ndarray, tol: float = 1e-8
) -> Portfolio:
    """Kelly portfolio for a forecast row over fixed return-grid atoms."""
    return log_optimal_portfolio(DiscreteReturnDist(atoms=bin_atoms, probs=bin_probs), tol=tol)


def bcrp(returns: np.ndarray, tol: float = 1e-8) -> Portfolio:
    """Best constant rebalanced portfolio in hindsight.

    Solves the Kelly problem on the empirical distribution; identical return
    vectors are collapsed into weighted atoms first.
    """
    returns = np.atleast_2d(np.asarray(returns, dtype=float))
    if returns.shape[0] == 0:
        raise EmptyHistory("bcrp needs at least one return vector")
    atoms, counts = np.unique(returns, axis=0, return_counts=True)
    dist = DiscreteReturnDist(atoms=atoms, probs=counts / counts.sum())
    return log_optimal_portfolio(dist, tol=tol)


def best_piecewise_stationary(
    signal_bins: np.ndarray, returns: np.ndarray, K: int, tol: float = 1e-8
) -> list[Portfolio]:
    """Per-signal-bin BCRP; empty bins fall back to the uniform portfolio."""
    returns = np.atleast_2d(np.asarray(returns, dtype=float))
    signal_bins = np.asarray(signal_bins, dtype=np.int64)
    if returns.shape[0] == 0:
        raise EmptyHistory("piecewise comparator needs a nonempty history")
    if returns.shape[0] != len(signal_bins):
        raise InvalidParams("signal bins and returns disagree in length")
    k = returns.shape[1]
    out = []
    for j in range(K):
        sub = returns[signal_bins == j]
        if sub.shape[0] == 0:
            out.append(Portfolio(np.full(k, 1.0 / k)))
        else:
            out.append(bcrp(sub, tol=tol))
    return out


def _arcsine_nodes(quad_points: int) -> np.ndarray:
    """Midpoint nodes for the Dirichlet(1/2,1/2) mixture after b1 = sin^2(theta)."""
    theta = (np.arange(quad_points) + 0.5) * (np.pi / 2.0) / quad_points
    return np.sin(theta) ** 2


def cover_universal_weight(
    history: np.ndarray | list, k: int, quad_points: int = 50_000
) -> Portfolio:
    """Cover's universal portfolio weight for the next round (two assets only).

    Performance-weighted Dirichlet(1/2) mixture over constant rebalanced
    portfolios; the endpoint singularity is absorbed by the b1 = sin^2(theta)
    substitution, making the quadrature uniform in theta. Wealth products are
    accumulated in log space to dodge overflow.
    """
    if k != 2:
        raise Unsupported(f"universal portfolio quadrature implemented for k=2 only, got k={k}")
    if quad_points < 2:
        raise InvalidParams("quad_points must be at least 2")
    hist = np.atleast_2d(np.asarray(history, dtype=float)) if len(history) else None
    if hist is None:
        return Portfolio(np.array([0.5, 0.5]))
    b1 = _arcsine_nodes(quad_points)
    b2 = 1.0 - b1
    logw = np.zeros(quad_points)
    for x in hist:
        logw += np.log(b1 * x[0] + b2 * x[1])
    w = np.exp(logw - logw.max())
    z = w.sum()
    if not np.isfinite(z) or z <= 0:
        raise QuadratureUnstable("mixture weights vanished or overflowed")
    top = float((b1 * w).sum() / z)
    return Portfolio(np.array([top, 1.0 - top]))


class CoverMixtureTracker:
    """Incremental Cover mixture: O(nodes) per round instead of O(T * nodes)."""

    def __init__(self, quad_points: int = 2048):
        self.b1 = _arcsine_nodes(quad_points)
        self.b2 = 1.0 - self.b1
        self.logw = np.zeros(quad_points)

    def weights(self) -> np.ndarray:
        w = np.exp(self.logw - self.logw.max())
        z = w.sum()
        if not np.isfinite(z) or z <= 0:
            raise QuadratureUnstable("mixture weights vanished or overflowed")
        top = float((self.b1 * w).sum() / z)
        return np.array([top, 1.0 - top])

    def update(self, x: np.ndarray) -> None:
        self.logw += np.log(self.b1 * x[0] + self.b2 * x[1])
