"""Finite grids over signals, return vectors, and conditional forecasts.

All three grids carry certified mesh bounds (nu, mu, epsilon): every point of the
underlying set is within the declared distance of some grid point, which is the
property the game construction actually relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import CapExceeded, IndexOutOfRange, InvalidParams, OutOfRange

_BOUND_EPS = 1e-12  # grace for float dust on interval boundary checks


@dataclass(frozen=True)
class MarketSpec:
    """Static market geometry: asset count, return bounds, signal interval."""

    k: int
    lambda1: float
    lambda2: float
    signal_lo: float = 0.0
    signal_hi: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParams(f"asset count k must be >= 1, got {self.k}")
        if not (0.0 < self.lambda1 < self.lambda2):
            raise InvalidParams(
                f"need 0 < lambda1 < lambda2, got [{self.lambda1}, {self.lambda2}]"
            )
        if self.signal_lo > self.signal_hi:
            raise InvalidParams(
                f"signal interval empty: [{self.signal_lo}, {self.signal_hi}]"
            )


@dataclass(frozen=True)
class GridStageParams:
    """Resolution knobs for one refinement stage.

    K: signal-grid cardinality; mu: return mesh; epsilon: forecast mesh and
    target-set radius; nu: optional declared signal mesh (derived when None);
    max_forecast_points: hard cap on the forecast-grid cardinality N.
    """

    K: int
    mu: float
    epsilon: float
    nu: float | None = None
    max_forecast_points: int = 100_000

    def __post_init__(self):
        if self.K < 1:
            raise InvalidParams(f"K must be >= 1, got {self.K}")
        if self.mu <= 0:
            raise InvalidParams(f"mu must be > 0, got {self.mu}")
        if self.epsilon <= 0:
            raise InvalidParams(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_forecast_points < 1:
            raise InvalidParams("max_forecast_points must be >= 1")


@dataclass(frozen=True)
class SignalGrid:
    """Ordered signal grid points c_1..c_K with certified mesh nu."""

    points: np.ndarray
    lo: float
    hi: float
    nu: float

    @property
    def K(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ReturnGrid:
    """Product grid a_1..a_M over [lambda1, lambda2]^k, l2 mesh mu."""

    points: np.ndarray  # (M, k)
    per_axis: int
    lambda1: float
    lambda2: float
    mu: float

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ForecastGrid:
    """Lattice of conditional distributions on the return grid given each signal.

    Per-signal points are all M-simplex lattice vectors with denominator D;
    a flat forecast index encodes one per-signal point choice for each of the
    K signals (mixed radix, first signal slowest).
    """

    K: int
    M: int
    D: int
    lattice: np.ndarray  # (count, M) int, rows sum to D
    rows: np.ndarray  # (count, M) float, lattice / D
    epsilon: float
    _lattice_index: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "_lattice_index",
            {tuple(int(v) for v in row): i for i, row in enumerate(self.lattice)},
        )

    @property
    def per_signal_count(self) -> int:
        return self.lattice.shape[0]

    @property
    def N(self) -> int:
        return self.per_signal_count**self.K

    def decode(self, flat: int) -> tuple[int, ...]:
        """Flat forecast index -> K-tuple of per-signal point indices."""
        if not (0 <= flat < self.N):
            raise IndexOutOfRange(f"forecast index {flat} not in [0, {self.N})")
        base = self.per_signal_count
        out = []
        for _ in range(self.K):
            flat, r = divmod(flat, base)
            out.append(r)
        return tuple(reversed(out))

    def encode(self, idx: tuple[int, ...]) -> int:
        if len(idx) != self.K:
            raise IndexOutOfRange(f"need {self.K} per-signal indices, got {len(idx)}")
        base = self.per_signal_count
        flat = 0
        for r in idx:
            if not (0 <= r < base):
                raise IndexOutOfRange(f"per-signal index {r} not in [0, {base})")
            flat = flat * base + r
        return flat

    def row(self, flat: int, signal_index: int) -> np.ndarray:
        """The forecast's probability vector over return bins at one signal."""
        if not (0 <= signal_index < self.K):
            raise IndexOutOfRange(f"signal index {signal_index} not in [0, {self.K})")
        return self.rows[self.decode(flat)[signal_index]]

    def conditional(self, flat: int) -> "ConditionalForecast":
        idx = self.decode(flat)
        return ConditionalForecast(
            grid_index=flat, rows=self.rows[list(idx)].copy()
        )

    def lattice_point_index(self, lattice_row: np.ndarray) -> int:
        key = tuple(int(v) for v in lattice_row)
        try:
            return self._lattice_index[key]
        except KeyError:
            raise IndexOutOfRange(f"{key} is not a lattice point with D={self.D}")

    def nearest_index(self, conditional_rows: np.ndarray) -> int:
        """Flat index of a grid element within l1 distance epsilon per condition.

        Each row is rounded to the lattice by largest-remainder, which keeps the
        per-condition l1 error at most M/(2D) <= epsilon.
        """
        conditional_rows = np.atleast_2d(np.asarray(conditional_rows, dtype=float))
        if conditional_rows.shape != (self.K, self.M):
            raise InvalidParams(
                f"expected ({self.K}, {self.M}) conditional rows, got {conditional_rows.shape}"
            )
        per_signal = [
            self.lattice_point_index(round_distribution(r, self.D))
            for r in conditional_rows
        ]
        return self.encode(tuple(per_signal))


@dataclass(frozen=True)
class ConditionalForecast:
    """One grid forecast: flat index plus its K rows of bin probabilities."""

    grid_index: int
    rows: np.ndarray  # (K, M)


@dataclass(frozen=True)
class GridSet:
    """The stage's three grids plus the spec/params they were built from."""

    signal: SignalGrid
    returns: ReturnGrid
    forecasts: ForecastGrid
    spec: MarketSpec
    params: GridStageParams


def round_distribution(p: np.ndarray, D: int) -> np.ndarray:
    """Largest-remainder rounding of a probability vector to the D-lattice.

    Returns integer numerators summing exactly to D; l1 error of the rounded
    distribution is at most M/(2D).
    """
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    total = p.sum()
    if total <= 0:
        raise InvalidParams("cannot round an all-zero vector to the simplex lattice")
    scaled = p * (D / total)
    base = np.floor(scaled).astype(np.int64)
    shortfall = int(D - base.sum())
    if shortfall > 0:
        rem = scaled - base
        order = np.argsort(-rem, kind="stable")
        base[order[:shortfall]] += 1
    return base


def _simplex_lattice(M: int, D: int) -> np.ndarray:
    """All compositions of D into M nonnegative parts, lexicographic order."""
    out = np.zeros((math.comb(D + M - 1, M - 1), M), dtype=np.int64)
    row = np.zeros(M, dtype=np.int64)
    pos = 0

    def rec(slot: int, remaining: int):
        nonlocal pos
        if slot == M - 1:
            row[slot] = remaining
            out[pos] = row
            pos += 1
            return
        for v in range(remaining + 1):
            row[slot] = v
            rec(slot + 1, remaining - v)

    rec(0, D)
    assert pos == out.shape[0]
    return out


def grid_cardinalities(k: int, span: float, K: int, mu: float, epsilon: float) -> dict:
    """Derived grid sizes for given mesh targets, without materializing anything.

    Returns {per_axis, M, D, per_signal_count, N}; N is an exact Python int.
    """
    per_axis = max(2, math.ceil(span * math.sqrt(k) / (2.0 * mu) - 1e-12) + 1)
    M = per_axis**k
    D = max(1, math.ceil((M - 1) / epsilon - 1e-12))
    per_signal_count = math.comb(D + M - 1, M - 1)
    return {
        "per_axis": per_axis,
        "M": M,
        "D": D,
        "per_signal_count": per_signal_count,
        "N": per_signal_count**K,
    }


def build_grids(spec: MarketSpec, params: GridStageParams) -> GridSet:
    """Construct the signal, return, and forecast grids for one stage.

    Cardinalities are derived from mesh targets: per-axis return points
    max(2, ceil((l2-l1)*sqrt(k)/(2*mu)) + 1) and simplex denominator
    D = ceil((M-1)/epsilon), so the declared meshes are certified rather than
    assumed. Raises CapExceeded before materializing anything if the forecast
    grid would hold more than max_forecast_points elements.
    """
    k = spec.k
    span = spec.lambda2 - spec.lambda1
    sizes = grid_cardinalities(k, span, params.K, params.mu, params.epsilon)
    per_axis, M, D = sizes["per_axis"], sizes["M"], sizes["D"]
    per_signal_count, N = sizes["per_signal_count"], sizes["N"]
    if N > params.max_forecast_points:
        raise CapExceeded(
            N,
            params.max_forecast_points,
            detail=f"K={params.K}, M={M}, D={D}, per-signal points={per_signal_count}",
        )

    # Signal grid: uniform; single point sits at the interval midpoint.
    if params.K == 1:
        sig_points = np.array([(spec.signal_lo + spec.signal_hi) / 2.0])
        nu = (spec.signal_hi - spec.signal_lo) / 2.0
    else:
        sig_points = np.linspace(spec.signal_lo, spec.signal_hi, params.K)
        nu = (spec.signal_hi - spec.signal_lo) / (2.0 * (params.K - 1))
    if params.nu is not None:
        if params.nu < nu - _BOUND_EPS:
            raise InvalidParams(
                f"declared nu={params.nu} is below the achievable mesh {nu}"
            )
        nu = params.nu
    signal = SignalGrid(points=sig_points, lo=spec.signal_lo, hi=spec.signal_hi, nu=nu)

    axis = np.linspace(spec.lambda1, spec.lambda2, per_axis)
    ret_points = np.array(list(product(axis, repeat=k)))
    h = span / (per_axis - 1)
    mu_certified = h * math.sqrt(k) / 2.0
    returns = ReturnGrid(
        points=ret_points,
        per_axis=per_axis,
        lambda1=spec.lambda1,
        lambda2=spec.lambda2,
        mu=mu_certified,
    )

    lattice = _simplex_lattice(M, D)
    forecasts = ForecastGrid(
        K=params.K,
        M=M,
        D=D,
        lattice=lattice,
        rows=lattice.astype(float) / D,
        epsilon=params.epsilon,
    )
    return GridSet(signal=signal, returns=returns, forecasts=forecasts, spec=spec, params=params)


def quantize_signal(z: float, grid: SignalGrid) -> int:
    """Index of the nearest signal grid point; ties go to the lower index."""
    if not (grid.lo - _BOUND_EPS <= z <= grid.hi + _BOUND_EPS):
        raise OutOfRange(f"signal {z} outside [{grid.lo}, {grid.hi}]")
    return int(np.argmin(np.abs(grid.points - z)))


def quantize_return(x: np.ndarray, grid: ReturnGrid) -> int:
    """Flat index of the l2-nearest return grid point; ties to the lowest index."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.k,):
        raise OutOfRange(f"return vector has shape {x.shape}, expected ({grid.k},)")
    if np.any(x < grid.lambda1 - _BOUND_EPS) or np.any(x > grid.lambda2 + _BOUND_EPS):
        raise OutOfRange(
            f"return {x.tolist()} outside [{grid.lambda1}, {grid.lambda2}]^{grid.k}"
        )
    d2 = ((grid.points - x) ** 2).sum(axis=1)
    return int(np.argmin(d2))
