"""Randomized forecaster: announce a mixed strategy, draw a forecast, keep score.

Wraps the approachability engine into the per-round protocol and maintains the
calibration ledger N_T / M_T. The mean payoff fed to the strategy is derived
from the integer ledger counts, so the ledger-payoff identity
calibration_score == ||mean||_1 holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approachability import (
    MeanPayoff,
    MixedStrategy,
    TargetSet,
    blackwell_strategy,
    distance_to_target,
)
from .discretization import ConditionalForecast, GridSet, round_distribution
from .errors import EmptyHistory, IndexOutOfRange, ProtocolViolation


class CalibrationLedger:
    """Sparse counts N_T(s, i, j) and M_T(s, j) over (forecast, signal) blocks."""

    __slots__ = ("M", "T", "_index", "_keys_i", "_keys_j", "_n", "_m", "_rows", "n_blocks")

    def __init__(self, M: int, capacity: int = 64):
        self.M = int(M)
        self.T = 0
        self.n_blocks = 0
        self._index: dict[tuple[int, int], int] = {}
        self._keys_i = np.zeros(capacity, dtype=np.int64)
        self._keys_j = np.zeros(capacity, dtype=np.int64)
        self._n = np.zeros((capacity, M), dtype=np.int64)
        self._m = np.zeros(capacity, dtype=np.int64)
        self._rows = np.zeros((capacity, M))

    def _grow(self):
        old = len(self._m)
        cap = old * 2

        def widen(a, shape):
            out = np.zeros(shape, dtype=a.dtype)
            out[:old] = a
            return out

        self._keys_i = widen(self._keys_i, cap)
        self._keys_j = widen(self._keys_j, cap)
        self._n = widen(self._n, (cap, self.M))
        self._m = widen(self._m, cap)
        self._rows = widen(self._rows, (cap, self.M))

    def record(self, forecast_index: int, signal_index: int, bin_index: int, row: np.ndarray):
        key = (forecast_index, signal_index)
        pos = self._index.get(key)
        if pos is None:
            if self.n_blocks == len(self._m):
                self._grow()
            pos = self.n_blocks
            self._index[key] = pos
            self._keys_i[pos] = forecast_index
            self._keys_j[pos] = signal_index
            self._rows[pos] = row
            self.n_blocks += 1
        self._n[pos, bin_index] += 1
        self._m[pos] += 1
        self.T += 1

    def stacked(self):
        nb = self.n_blocks
        return (
            self._keys_i[:nb],
            self._keys_j[:nb],
            self._n[:nb],
            self._m[:nb],
            self._rows[:nb],
        )

    @property
    def n_counts(self) -> dict[tuple[int, int, int], int]:
        """Dict view keyed (forecast, return bin, signal); nonzero entries only."""
        out = {}
        for (i, j), pos in self._index.items():
            for b in range(self.M):
                c = int(self._n[pos, b])
                if c:
                    out[(i, b, j)] = c
        return out

    @property
    def m_counts(self) -> dict[tuple[int, int], int]:
        return {(i, j): int(self._m[pos]) for (i, j), pos in self._index.items()}


def calibration_score(ledger: CalibrationLedger, grids: GridSet | None = None) -> float:
    """(1/T) sum over (s, j, i) of |N_T(s,i,j) - M_T(s,j) s(i|c_j)|."""
    if ledger.T == 0:
        raise EmptyHistory("calibration score needs at least one round")
    _, _, n, m, rows = ledger.stacked()
    return float(np.abs(n - m[:, None] * rows).sum() / ledger.T)


def mean_payoff_from_ledger(ledger: CalibrationLedger) -> MeanPayoff:
    """Exact mean payoff view: block sums are N_T - M_T * row, by construction."""
    keys_i, keys_j, n, m, rows = ledger.stacked()
    sums = n - m[:, None] * rows
    return MeanPayoff.from_arrays(
        ledger.M, ledger.T, keys_i, keys_j, sums, rows=list(rows)
    )


@dataclass(frozen=True)
class ForecastDraw:
    """One announced distribution P_t plus the realized draw p_t at signal j."""

    announced: MixedStrategy
    drawn: ConditionalForecast
    signal_index: int


def announced_mean_row(strategy: MixedStrategy, grids: GridSet, signal_index: int) -> np.ndarray:
    """The announced-mixture forecast over return bins at one signal:
    sum_s P(s) * s(.|c_j)."""
    fg = grids.forecasts
    if strategy.is_uniform:
        # Marginal of the uniform distribution over index tuples is uniform
        # over per-signal points.
        return fg.rows.mean(axis=0)
    out = np.zeros(fg.M)
    for i, p in strategy.support:
        out += p * fg.row(i, signal_index)
    return out


class Forecaster:
    """Single-owner state machine alternating next_forecast / observe_outcome."""

    def __init__(
        self,
        grids: GridSet,
        target: TargetSet,
        inside_tol: float = 1e-9,
        game_tol: float = 1e-9,
    ):
        self.grids = grids
        self.target = target
        self.inside_tol = inside_tol
        self.game_tol = game_tol
        fg = grids.forecasts
        self.ledger = CalibrationLedger(fg.M)
        self._pending: ForecastDraw | None = None
        self._touched: set[int] = set()
        self._warm: tuple[int, ...] = ()
        # Per-signal empirical bin counts drive the zero-row representative.
        self._sig_counts = np.zeros((fg.K, fg.M), dtype=np.int64)
        self._sig_totals = np.zeros(fg.K, dtype=np.int64)

    @property
    def T(self) -> int:
        return self.ledger.T

    def mean_payoff(self) -> MeanPayoff:
        return mean_payoff_from_ledger(self.ledger)

    def calibration_score(self) -> float:
        return calibration_score(self.ledger, self.grids)

    def distances(self) -> tuple[float, float]:
        return distance_to_target(self.mean_payoff(), self.target.epsilon)

    def _zero_representative(self) -> int | None:
        fg = self.grids.forecasts
        n = fg.N
        if len(self._touched) >= n:
            return None
        # Prefer the untouched grid point nearest the empirical conditional:
        # any untouched forecast is game-equivalent, and this one earns its keep
        # when drawn.
        rows = np.where(
            self._sig_totals[:, None] > 0,
            self._sig_counts / np.maximum(self._sig_totals[:, None], 1),
            1.0 / fg.M,
        )
        per_signal = [
            fg.lattice_point_index(round_distribution(r, fg.D)) for r in rows
        ]
        flat = fg.encode(tuple(per_signal))
        if flat not in self._touched:
            return flat
        for step in range(1, 65):
            probe = (flat + step) % n
            if probe not in self._touched:
                return probe
        for i in range(n):
            if i not in self._touched:
                return i
        return None

    def strategy(self) -> MixedStrategy:
        """The current round's announced distribution P_t."""
        return blackwell_strategy(
            self.mean_payoff(),
            self.target,
            self.grids,
            tol=self.inside_tol,
            zero_representative=self._zero_representative(),
            warm_support=self._warm,
        )

    def next_forecast(self, signal_index: int, rng: np.random.Generator) -> ForecastDraw:
        if self._pending is not None:
            raise ProtocolViolation("next_forecast called with an outcome still pending")
        fg = self.grids.forecasts
        if not (0 <= signal_index < fg.K):
            raise IndexOutOfRange(f"signal index {signal_index} not in [0, {fg.K})")
        announced = self.strategy()
        flat = announced.sample(float(rng.random()))
        draw = ForecastDraw(
            announced=announced,
            drawn=fg.conditional(flat),
            signal_index=signal_index,
        )
        self._pending = draw
        return draw

    def observe_outcome(self, draw: ForecastDraw, bin_index: int) -> None:
        if self._pending is None:
            raise ProtocolViolation("observe_outcome called before next_forecast")
        if draw is not self._pending:
            raise ProtocolViolation("outcome does not match the pending draw")
        fg = self.grids.forecasts
        if not (0 <= bin_index < fg.M):
            raise IndexOutOfRange(f"return bin {bin_index} not in [0, {fg.M})")
        j = draw.signal_index
        flat = draw.drawn.grid_index
        self.ledger.record(flat, j, bin_index, draw.drawn.rows[j])
        self._touched.add(flat)
        self._sig_counts[j, bin_index] += 1
        self._sig_totals[j] += 1
        if not draw.announced.is_uniform:
            self._warm = tuple(i for i, _ in draw.announced.support)
        else:
            self._warm = ()
        self._pending = None
