"""Market models for the portfolio game.

Markets are turn-based: the engine asks for the round's signal, hands the
announced forecast distribution to adversarial markets through a MarketContext,
then asks for the return vector. Oblivious markets never see the context.
"""

from __future__ import annotations

import abc
from typing import Callable

import numpy as np

from .approachability import MixedStrategy
from .calibration import announced_mean_row
from .discretization import GridSet, MarketSpec
from .errors import InvalidParams, MarketContractViolation


def _draw_index(rng: np.random.Generator, cum: np.ndarray) -> int:
    """One uniform variate -> categorical index via the CDF."""
    u = rng.random()
    return int(min(np.searchsorted(cum, u, side="right"), len(cum) - 1))


class MarketContext:
    """Round context handed to adversarial markets: the announced P_t and the
    portfolio image it induces. Everything is computed lazily."""

    def __init__(
        self,
        t: int,
        signal_index: int,
        announced: MixedStrategy,
        grids: GridSet,
        expectation_fn: Callable[[], np.ndarray],
    ):
        self.t = t
        self.signal_index = signal_index
        self.announced = announced
        self.grids = grids
        self._expectation_fn = expectation_fn
        self._e: np.ndarray | None = None
        self._row: np.ndarray | None = None

    def portfolio_expectation(self) -> np.ndarray:
        """e_t = E_{P_t}(b*_t), the announced distribution's mean optimal portfolio."""
        if self._e is None:
            self._e = self._expectation_fn()
        return self._e

    def mean_forecast_row(self) -> np.ndarray:
        """Announced-mixture forecast over return bins at the current signal."""
        if self._row is None:
            self._row = announced_mean_row(self.announced, self.grids, self.signal_index)
        return self._row

    def return_points(self) -> np.ndarray:
        return self.grids.returns.points


class MarketModel(abc.ABC):
    """Behavioral contract for one market.

    `access` is "oblivious" (never sees the context) or "announced" (receives
    the announced P_t and its portfolio image, per the adversarial protocol).
    """

    access: str = "oblivious"

    def reset(self, spec: MarketSpec, rng: np.random.Generator) -> None:
        self.spec = spec
        self.rng = rng

    @abc.abstractmethod
    def signal(self, t: int) -> float:
        """Announce the round's raw signal z_t."""

    @abc.abstractmethod
    def ret(self, t: int, ctx: MarketContext | None) -> np.ndarray:
        """Announce the round's return vector x_t."""

    def stationary_portfolio(self, t: int) -> np.ndarray | None:
        """Per-round comparator weights, if this market defines its own
        (the discontinuous adversary does). Valid after ret() for the round."""
        return None


def _validate_atoms(spec: MarketSpec, atoms: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    probs = np.asarray(probs, dtype=float)
    if atoms.shape[1] != spec.k:
        raise InvalidParams(f"atoms have {atoms.shape[1]} coordinates, market has k={spec.k}")
    if len(probs) != atoms.shape[0] or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise InvalidParams("atom probabilities must be nonnegative and sum to 1")
    if np.any(atoms < spec.lambda1 - 1e-12) or np.any(atoms > spec.lambda2 + 1e-12):
        raise InvalidParams(
            f"atoms outside [{spec.lambda1}, {spec.lambda2}]^{spec.k}: {atoms.tolist()}"
        )
    return atoms, probs


class IIDMarket(MarketModel):
    """Returns drawn i.i.d. from a fixed atom distribution; constant signal."""

    def __init__(self, atoms, probs, signal_value: float | None = None):
        self._raw_atoms = atoms
        self._raw_probs = probs
        self._signal_value = signal_value

    def reset(self, spec, rng):
        super().reset(spec, rng)
        self.atoms, self.probs = _validate_atoms(spec, self._raw_atoms, self._raw_probs)
        self._cum = np.cumsum(self.probs)
        if self._signal_value is None:
            self._signal_value = (spec.signal_lo + spec.signal_hi) / 2.0

    def signal(self, t):
        return float(self._signal_value)

    def ret(self, t, ctx=None):
        return self.atoms[_draw_index(self.rng, self._cum)]


class RegimeMarket(MarketModel):
    """Signal selects a regime; each regime has its own atom distribution."""

    def __init__(self, bins: list[dict], order: str = "random"):
        # Each bin: {"signal": float, "atoms": [[...]], "probs": [...]}
        if order not in ("random", "cycle"):
            raise InvalidParams(f"regime order must be 'random' or 'cycle', got {order!r}")
        if not bins:
            raise InvalidParams("regime market needs at least one bin")
        self._raw_bins = bins
        self.order = order

    def reset(self, spec, rng):
        super().reset(spec, rng)
        self.bin_signals = []
        self.bin_atoms = []
        self.bin_cums = []
        for b in self._raw_bins:
            atoms, probs = _validate_atoms(spec, b["atoms"], b["probs"])
            z = float(b["signal"])
            if not (spec.signal_lo <= z <= spec.signal_hi):
                raise InvalidParams(f"regime signal {z} outside the signal interval")
            self.bin_signals.append(z)
            self.bin_atoms.append(atoms)
            self.bin_cums.append(np.cumsum(probs))
        self._current = 0

    def signal(self, t):
        if self.order == "cycle":
            self._current = (t - 1) % len(self.bin_signals)
        else:
            self._current = int(self.rng.integers(len(self.bin_signals)))
        return self.bin_signals[self._current]

    def ret(self, t, ctx=None):
        b = self._current
        return self.bin_atoms[b][_draw_index(self.rng, self.bin_cums[b])]


class DiscontinuousAdversaryMarket(MarketModel):
    """Two-asset adversary: favors whichever asset the announced portfolio
    underweights in expectation, and exposes the matching discontinuous
    comparator b(z_t)."""

    access = "announced"

    def reset(self, spec, rng):
        super().reset(spec, rng)
        if spec.k != 2:
            raise InvalidParams("discontinuous adversary is a two-asset construction")
        if spec.lambda1 > 1.0 or spec.lambda2 < 2.0:
            raise InvalidParams(
                "adversary emits returns with components 1 and 2; widen [lambda1, lambda2]"
            )
        self._comparator: np.ndarray | None = None

    def signal(self, t):
        return (self.spec.signal_lo + self.spec.signal_hi) / 2.0

    def ret(self, t, ctx):
        if ctx is None:
            raise MarketContractViolation("adversary market needs the announced context")
        e = ctx.portfolio_expectation()
        if e[0] <= 0.5:
            self._comparator = np.array([1.0, 0.0])
            return np.array([2.0, 1.0])
        self._comparator = np.array([0.0, 1.0])
        return np.array([1.0, 2.0])

    def stationary_portfolio(self, t):
        return self._comparator


class MinForecastProbabilityAdversary(MarketModel):
    """Calibration adversary: emits the return-grid point of the bin with the
    smallest announced-mixture forecast probability (ties to the lowest bin)."""

    access = "announced"

    def signal(self, t):
        return (self.spec.signal_lo + self.spec.signal_hi) / 2.0

    def ret(self, t, ctx):
        if ctx is None:
            raise MarketContractViolation("calibration adversary needs the announced context")
        row = ctx.mean_forecast_row()
        bin_index = int(np.argmin(row))
        return ctx.return_points()[bin_index]


class ReplayMarket(MarketModel):
    """Replays a recorded (signal, return) sequence, e.g. from a CSV file."""

    def __init__(self, records: list[tuple[float | None, np.ndarray]]):
        if not records:
            raise InvalidParams("replay market needs at least one record")
        self.records = [
            (None if z is None else float(z), np.asarray(x, dtype=float))
            for z, x in records
        ]

    def __len__(self) -> int:
        return len(self.records)

    def signal(self, t):
        if t > len(self.records):
            raise MarketContractViolation(f"replay data exhausted at round {t}")
        z = self.records[t - 1][0]
        if z is None:
            return (self.spec.signal_lo + self.spec.signal_hi) / 2.0
        return z

    def ret(self, t, ctx=None):
        return self.records[t - 1][1]
