"""Episode runner for the portfolio game protocol.

Per round: the market announces a signal, the investor announces a forecast
distribution, the market announces a return vector, and the investor's drawn
forecast is turned into a log-optimal portfolio that compounds wealth. Grids
refine on a staged schedule; the approachability state resets per stage while
wealth persists. Comparator strategies (stationary table, hindsight BCRP,
per-bin piecewise BCRP, Cover mixture) are tracked off the same return path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .approachability import TargetSet
from .calibration import Forecaster
from .discretization import (
    GridSet,
    GridStageParams,
    MarketSpec,
    build_grids,
    grid_cardinalities,
    quantize_return,
    quantize_signal,
)
from .errors import CapExceeded, InvalidParams, MarketContractViolation
from .kelly import (
    CoverMixtureTracker,
    DiscreteReturnDist,
    bcrp,
    best_piecewise_stationary,
    log_optimal_portfolio,
)
from .markets import MarketContext, MarketModel


@dataclass(frozen=True)
class Stage:
    t_start: int
    params: GridStageParams


@dataclass(frozen=True)
class RefinementSchedule:
    """Stage start times with per-stage grid parameters; meshes nonincreasing."""

    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise InvalidParams("schedule needs at least one stage")
        if self.stages[0].t_start != 1:
            raise InvalidParams("first stage must start at t=1")
        prev = None
        for st in self.stages:
            if prev is not None:
                if st.t_start <= prev.t_start:
                    raise InvalidParams("stage start times must be strictly increasing")
                if st.params.epsilon > prev.params.epsilon + 1e-12:
                    raise InvalidParams("epsilon must be nonincreasing across stages")
                if st.params.mu > prev.params.mu + 1e-12:
                    raise InvalidParams("mu must be nonincreasing across stages")
            prev = st

    @classmethod
    def single(cls, params: GridStageParams) -> "RefinementSchedule":
        return cls(stages=(Stage(t_start=1, params=params),))


def _clamped_stage_params(
    k: int, span: float, K_target: int, pa_target: int, eps_target: float, cap: int
) -> GridStageParams | None:
    """Finest (K, per_axis, D) combination under the forecast-grid cap.

    Walks per-axis resolution down, then signal resolution, then the lattice
    denominator; the first combination whose effective forecast mesh stays
    usable (<= 2, the l1 diameter of the simplex) wins.
    """
    fallback = None
    for pa in range(pa_target, 1, -1):
        M = pa**k
        mu = span * math.sqrt(k) / (2.0 * (pa - 1))
        for K in range(K_target, 0, -1):
            d_target = max(1, math.ceil((M - 1) / eps_target - 1e-12)) if M > 1 else 1
            for D in range(d_target, 0, -1):
                if math.comb(D + M - 1, M - 1) ** K > cap:
                    continue
                eps_eff = max(eps_target, (M - 1) / D) if M > 1 else eps_target
                params = GridStageParams(
                    K=K, mu=mu, epsilon=eps_eff, max_forecast_points=cap
                )
                if eps_eff <= 2.0:
                    return params
                if fallback is None:
                    fallback = params
                break  # smaller D only coarsens epsilon further
    return fallback


def refinement_schedule_default(
    T_total: int,
    k: int,
    cap: int = 20_000,
    lambda1: float = 0.5,
    lambda2: float = 2.0,
) -> RefinementSchedule:
    """Doubling stage boundaries {256, 512, ...} with meshes from the rate
    heuristics mu ~ (log2 T)^(-1/(k+2)), K ~ 1/mu, eps ~ T^(-1/(KM+1)),
    clamped per stage so the forecast grid respects the cap."""
    if T_total < 1:
        raise InvalidParams("T_total must be >= 1")
    span = lambda2 - lambda1
    starts = [1]
    s = 256
    while s < T_total:
        starts.append(s)
        s *= 2

    stages: list[Stage] = []
    prev: GridStageParams | None = None
    for n, t_start in enumerate(starts):
        t_end = (starts[n + 1] - 1) if n + 1 < len(starts) else T_total
        mu_t = (math.log2(max(t_end, 4))) ** (-1.0 / (k + 2))
        pa_t = grid_cardinalities(k, span, 1, mu_t, 1.0)["per_axis"]
        K_t = max(1, math.ceil(1.0 / mu_t - 1e-12))
        M_t = pa_t**k
        eps_t = float(t_end) ** (-1.0 / (K_t * M_t + 1))
        params = _clamped_stage_params(k, span, K_t, pa_t, eps_t, cap)
        if params is None:
            raise CapExceeded(
                grid_cardinalities(k, span, 1, span * math.sqrt(k) / 2.0, 2.0)["N"],
                cap,
                detail="even the coarsest admissible grid violates the cap",
            )
        if prev is not None:
            finer_or_equal = (
                params.epsilon <= prev.epsilon + 1e-12
                and params.mu <= prev.mu + 1e-12
                and params.K >= prev.K
            )
            if not finer_or_equal:
                params = prev  # refinement stalled at the cap: inherit
        if prev is not None and params == prev:
            continue  # merge stages with identical params (single-stage fallback)
        stages.append(Stage(t_start=t_start, params=params))
        prev = params
    if stages[0].t_start != 1:
        stages[0] = Stage(t_start=1, params=stages[0].params)
    return RefinementSchedule(stages=tuple(stages))


@dataclass
class ComparatorConfig:
    """Which reference strategies to track alongside the investor."""

    stationary_table: np.ndarray | None = None  # (K_final, k) per-signal-bin weights
    bcrp: bool = True
    piecewise: bool = True
    cover: bool = True
    cover_quad_points: int = 2048


@dataclass
class Trajectory:
    """Full seeded episode record; everything reported is recomputable from it."""

    seed: int
    spec: MarketSpec
    T: int
    stage_meta: list[dict]
    t: np.ndarray
    stage_index: np.ndarray
    signals: np.ndarray
    signal_bins: np.ndarray
    returns: np.ndarray
    return_bins: np.ndarray
    forecast_indices: np.ndarray
    investor_weights: np.ndarray
    comparator_weights: dict[str, np.ndarray]
    increments: dict[str, np.ndarray]
    final_log2: dict[str, float]
    calibration_samples: list[tuple[int, float]] = field(default_factory=list)
    distance_samples: list[tuple[int, float, float]] = field(default_factory=list)
    piecewise_bins: np.ndarray | None = None

    @property
    def strategy_names(self) -> list[str]:
        return list(self.increments.keys())

    def recompute_error(self) -> float:
        """Max |final - sum(increments)| across strategies; wealth consistency."""
        err = 0.0
        for name, inc in self.increments.items():
            err = max(err, abs(self.final_log2[name] - float(inc.sum())))
        return err


def _stage_meta(params: GridStageParams, grids: GridSet, t_start: int) -> dict:
    return {
        "t_start": t_start,
        "K": grids.forecasts.K,
        "M": grids.forecasts.M,
        "N": grids.forecasts.N,
        "D": grids.forecasts.D,
        "epsilon": params.epsilon,
        "mu": grids.returns.mu,
        "nu": grids.signal.nu,
        "per_axis": grids.returns.per_axis,
    }


def run_episode(
    spec: MarketSpec,
    schedule: RefinementSchedule,
    market: MarketModel,
    T: int,
    seed: int,
    comparators: ComparatorConfig | None = None,
    sample_every: int = 1000,
    kelly_tol: float = 1e-8,
    inside_tol: float = 1e-9,
    game_tol: float = 1e-9,
    round_hook=None,
) -> Trajectory:
    """Run one seeded episode of the Fig-style protocol for T rounds.

    `round_hook(t, forecaster, announced)` is called after each round's
    strategy is announced, for diagnostics like certificate checks.
    """
    if T < 0:
        raise InvalidParams("T must be >= 0")
    comparators = comparators if comparators is not None else ComparatorConfig()
    k = spec.k

    ss = np.random.SeedSequence(seed)
    mkt_ss, fc_ss = ss.spawn(2)
    rng_mkt = np.random.default_rng(mkt_ss)
    rng_fc = np.random.default_rng(fc_ss)
    market.reset(spec, rng_mkt)

    track_cover = comparators.cover and k == 2
    cover = CoverMixtureTracker(comparators.cover_quad_points) if track_cover else None

    t_arr = np.zeros(T, dtype=np.int64)
    stage_arr = np.zeros(T, dtype=np.int64)
    signals = np.zeros(T)
    signal_bins = np.zeros(T, dtype=np.int64)
    returns = np.zeros((T, k))
    return_bins = np.zeros(T, dtype=np.int64)
    forecast_indices = np.zeros(T, dtype=np.int64)
    inv_w = np.zeros((T, k))
    stat_w = np.zeros((T, k)) if (
        comparators.stationary_table is not None
        or market.stationary_portfolio(0) is not None
        or market.access == "announced"
    ) else None
    cover_w = np.zeros((T, k)) if track_cover else None
    inv_inc = np.zeros(T)
    stat_inc = np.zeros(T) if stat_w is not None else None
    cover_inc = np.zeros(T) if track_cover else None

    stages = schedule.stages
    stage_ptr = -1
    grids: GridSet | None = None
    forecaster: Forecaster | None = None
    kelly_cache: dict[int, np.ndarray] = {}
    uniform_e: np.ndarray | None = None
    stage_meta: list[dict] = []
    calibration_samples: list[tuple[int, float]] = []
    distance_samples: list[tuple[int, float, float]] = []
    stationary_seen = False

    def kelly_point(point_idx: int) -> np.ndarray:
        w = kelly_cache.get(point_idx)
        if w is None:
            dist = DiscreteReturnDist(
                atoms=grids.returns.points, probs=grids.forecasts.rows[point_idx]
            )
            w = log_optimal_portfolio(dist, tol=kelly_tol).weights
            kelly_cache[point_idx] = w
        return w

    def expectation_fn(announced, jbin):
        def compute() -> np.ndarray:
            nonlocal uniform_e
            if announced.is_uniform:
                if uniform_e is None:
                    count = grids.forecasts.per_signal_count
                    acc = np.zeros(k)
                    for idx in range(count):
                        acc += kelly_point(idx)
                    uniform_e = acc / count
                return uniform_e
            out = np.zeros(k)
            for i, p in announced.support:
                out += p * kelly_point(grids.forecasts.decode(i)[jbin])
            return out

        return compute

    def take_sample(t):
        if forecaster is None or forecaster.T == 0:
            return
        if calibration_samples and calibration_samples[-1][0] == t:
            return
        score = forecaster.calibration_score()
        d2, d1 = forecaster.distances()
        calibration_samples.append((t, score))
        distance_samples.append((t, d2, d1))

    for t in range(1, T + 1):
        if stage_ptr + 1 < len(stages) and t == stages[stage_ptr + 1].t_start:
            if forecaster is not None:
                take_sample(t - 1)
            stage_ptr += 1
            params = stages[stage_ptr].params
            grids = build_grids(spec, params)
            forecaster = Forecaster(
                grids, TargetSet(params.epsilon), inside_tol=inside_tol, game_tol=game_tol
            )
            kelly_cache = {}
            uniform_e = None
            stage_meta.append(_stage_meta(params, grids, t))
        if grids is None:
            raise InvalidParams("schedule does not cover round 1")

        z = market.signal(t)
        if not (spec.signal_lo - 1e-12 <= z <= spec.signal_hi + 1e-12):
            raise MarketContractViolation(f"market emitted signal {z} at round {t}")
        jbin = quantize_signal(z, grids.signal)

        draw = forecaster.next_forecast(jbin, rng_fc)
        if round_hook is not None:
            round_hook(t, forecaster, draw)

        ctx = None
        if market.access == "announced":
            ctx = MarketContext(
                t, jbin, draw.announced, grids, expectation_fn(draw.announced, jbin)
            )
        x = np.asarray(market.ret(t, ctx), dtype=float)
        if x.shape != (k,) or np.any(x < spec.lambda1 - 1e-12) or np.any(
            x > spec.lambda2 + 1e-12
        ):
            raise MarketContractViolation(f"market emitted return {x} at round {t}")
        rbin = quantize_return(x, grids.returns)
        forecaster.observe_outcome(draw, rbin)

        point_idx = grids.forecasts.decode(draw.drawn.grid_index)[jbin]
        b = kelly_point(point_idx)

        idx = t - 1
        t_arr[idx] = t
        stage_arr[idx] = stage_ptr
        signals[idx] = z
        signal_bins[idx] = jbin
        returns[idx] = x
        return_bins[idx] = rbin
        forecast_indices[idx] = draw.drawn.grid_index
        inv_w[idx] = b
        inv_inc[idx] = math.log2(float(b @ x))

        if stat_w is not None:
            sw = market.stationary_portfolio(t)
            if sw is None and comparators.stationary_table is not None:
                sw = np.asarray(comparators.stationary_table[jbin], dtype=float)
            if sw is not None:
                stationary_seen = True
                stat_w[idx] = sw
                stat_inc[idx] = math.log2(float(sw @ x))
            else:
                stat_w[idx] = np.full(k, 1.0 / k)
                stat_inc[idx] = math.log2(float(stat_w[idx] @ x))
        if track_cover:
            cw = cover.weights()
            cover_w[idx] = cw
            cover_inc[idx] = math.log2(float(cw @ x))
            cover.update(x)

        if (sample_every and t % sample_every == 0) or t == T:
            take_sample(t)

    comparator_weights: dict[str, np.ndarray] = {}
    increments: dict[str, np.ndarray] = {"investor": inv_inc}
    final_log2: dict[str, float] = {"investor": float(inv_inc.sum())}

    if stat_w is not None and stationary_seen:
        comparator_weights["stationary"] = stat_w
        increments["stationary"] = stat_inc
        final_log2["stationary"] = float(stat_inc.sum())
    if track_cover:
        comparator_weights["cover"] = cover_w
        increments["cover"] = cover_inc
        final_log2["cover"] = float(cover_inc.sum())

    piecewise_bins = None
    if T > 0 and comparators.bcrp:
        b_hind = bcrp(returns, tol=kelly_tol).weights
        w = np.tile(b_hind, (T, 1))
        inc = np.log2(returns @ b_hind)
        comparator_weights["bcrp"] = w
        increments["bcrp"] = inc
        final_log2["bcrp"] = float(inc.sum())
    elif comparators.bcrp:
        final_log2["bcrp"] = 0.0
        increments["bcrp"] = np.zeros(0)
    if T > 0 and comparators.piecewise and grids is not None:
        final_signal_grid = grids.signal
        piecewise_bins = np.array(
            [quantize_signal(z, final_signal_grid) for z in signals], dtype=np.int64
        )
        tables = best_piecewise_stationary(
            piecewise_bins, returns, final_signal_grid.K, tol=kelly_tol
        )
        table = np.array([p.weights for p in tables])
        w = table[piecewise_bins]
        inc = np.log2((w * returns).sum(axis=1))
        comparator_weights["piecewise"] = w
        increments["piecewise"] = inc
        final_log2["piecewise"] = float(inc.sum())
    elif comparators.piecewise:
        final_log2["piecewise"] = 0.0
        increments["piecewise"] = np.zeros(0)

    return Trajectory(
        seed=seed,
        spec=spec,
        T=T,
        stage_meta=stage_meta,
        t=t_arr,
        stage_index=stage_arr,
        signals=signals,
        signal_bins=signal_bins,
        returns=returns,
        return_bins=return_bins,
        forecast_indices=forecast_indices,
        investor_weights=inv_w,
        comparator_weights=comparator_weights,
        increments=increments,
        final_log2=final_log2,
        calibration_samples=calibration_samples,
        distance_samples=distance_samples,
        piecewise_bins=piecewise_bins,
    )
