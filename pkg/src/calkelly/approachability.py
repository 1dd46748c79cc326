"""Vector-payoff calibration game: sparse payoffs, l1-ball target, halfspace play.

The payoff space is indexed by (forecast, signal) blocks of length M; a round's
payoff is delta[outcome bin] minus the played forecast's row, sitting in a single
block. The forecaster drives the running mean payoff toward the l1 ball of radius
epsilon by solving, each round, the scalar game obtained by projecting payoffs
onto the direction from the ball to the current mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import GridSet
from .errors import IndexOutOfRange, Infeasible, InvalidParams
from .matrixgame import solve_matrix_game


@dataclass(frozen=True)
class SparsePayoff:
    """One round's vector payoff: a single (forecast, signal) block of length M."""

    block: tuple[int, int]
    values: np.ndarray


@dataclass(frozen=True)
class TargetSet:
    """The l1 ball of radius epsilon in the payoff space."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidParams(f"target radius must be > 0, got {self.epsilon}")


class MixedStrategy:
    """Distribution over forecast-grid indices; `support=None` means uniform.

    Support pairs are kept sorted by forecast index so inverse-CDF sampling is
    reproducible bit for bit.
    """

    __slots__ = ("n_forecasts", "support", "value", "_cdf", "_indices")

    def __init__(self, n_forecasts: int, support, value: float):
        self.n_forecasts = int(n_forecasts)
        self.value = float(value)
        if support is None:
            self.support = None
            self._cdf = None
            self._indices = None
        else:
            pairs = sorted((int(i), float(p)) for i, p in support if p > 0.0)
            total = sum(p for _, p in pairs)
            if not pairs or abs(total - 1.0) > 1e-10:
                raise InvalidParams(f"support probabilities sum to {total}, not 1")
            self.support = tuple((i, p / total) for i, p in pairs)
            self._indices = np.array([i for i, _ in self.support], dtype=np.int64)
            self._cdf = np.cumsum([p for _, p in self.support])
            self._cdf[-1] = 1.0

    @property
    def is_uniform(self) -> bool:
        return self.support is None

    def support_list(self) -> list[tuple[int, float]]:
        if self.support is not None:
            return list(self.support)
        w = 1.0 / self.n_forecasts
        return [(i, w) for i in range(self.n_forecasts)]

    def probability(self, index: int) -> float:
        if self.support is None:
            return 1.0 / self.n_forecasts
        pos = np.searchsorted(self._indices, index)
        if pos < len(self._indices) and self._indices[pos] == index:
            return self.support[pos][1]
        return 0.0

    def sample(self, u: float) -> int:
        """Inverse-CDF draw from one uniform variate in [0, 1)."""
        if self.support is None:
            return min(int(u * self.n_forecasts), self.n_forecasts - 1)
        pos = int(np.searchsorted(self._cdf, u, side="left"))
        return int(self._indices[min(pos, len(self.support) - 1)])


class MeanPayoff:
    """Sparse running average of vector payoffs over (forecast, signal) blocks.

    Internally stores per-block payoff sums and divides by T on read, which
    keeps updates O(1) and reproduces the batch average exactly. `rows` caches
    each block's forecast row (constant per block) for the halfspace game.
    """

    __slots__ = ("M", "T", "keys_i", "keys_j", "sums", "rows", "_index")

    def __init__(self, M: int):
        self.M = int(M)
        self.T = 0
        self.keys_i: list[int] = []
        self.keys_j: list[int] = []
        self.sums: list[np.ndarray] = []
        self.rows: list[np.ndarray | None] = []
        self._index: dict[tuple[int, int], int] = {}

    @classmethod
    def from_arrays(cls, M, T, keys_i, keys_j, sums, rows=None) -> "MeanPayoff":
        out = cls(M)
        out.T = int(T)
        out.keys_i = [int(v) for v in keys_i]
        out.keys_j = [int(v) for v in keys_j]
        out.sums = [np.asarray(s, dtype=float) for s in sums]
        out.rows = list(rows) if rows is not None else [None] * len(out.sums)
        out._index = {
            (i, j): pos for pos, (i, j) in enumerate(zip(out.keys_i, out.keys_j))
        }
        return out

    def copy(self) -> "MeanPayoff":
        out = MeanPayoff(self.M)
        out.T = self.T
        out.keys_i = list(self.keys_i)
        out.keys_j = list(self.keys_j)
        out.sums = [s.copy() for s in self.sums]
        out.rows = list(self.rows)
        out._index = dict(self._index)
        return out

    @property
    def n_blocks(self) -> int:
        return len(self.sums)

    def add(self, payoff: SparsePayoff, row: np.ndarray | None = None) -> None:
        values = np.asarray(payoff.values, dtype=float)
        if values.shape != (self.M,):
            raise InvalidParams(f"payoff block has shape {values.shape}, expected ({self.M},)")
        pos = self._index.get(payoff.block)
        if pos is None:
            self._index[payoff.block] = len(self.sums)
            self.keys_i.append(payoff.block[0])
            self.keys_j.append(payoff.block[1])
            self.sums.append(values.copy())
            self.rows.append(row)
        else:
            self.sums[pos] += values
            if row is not None and self.rows[pos] is None:
                self.rows[pos] = row
        self.T += 1

    def block(self, i: int, j: int) -> np.ndarray:
        pos = self._index.get((i, j))
        if pos is None or self.T == 0:
            return np.zeros(self.M)
        return self.sums[pos] / self.T

    @property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        if self.T == 0:
            return {}
        return {
            (i, j): self.sums[pos] / self.T
            for pos, (i, j) in enumerate(zip(self.keys_i, self.keys_j))
        }

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(keys_i, keys_j, mean matrix) over nonzero blocks."""
        if not self.sums or self.T == 0:
            return (
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                np.zeros((0, self.M)),
            )
        return (
            np.asarray(self.keys_i, dtype=np.int64),
            np.asarray(self.keys_j, dtype=np.int64),
            np.asarray(self.sums) / self.T,
        )

    def norm_l1(self) -> float:
        if self.T == 0 or not self.sums:
            return 0.0
        return float(np.abs(np.asarray(self.sums)).sum() / self.T)


def update_mean_payoff(mean: MeanPayoff, round_payoff: SparsePayoff) -> MeanPayoff:
    """Running average after one more round; pure, returns a fresh MeanPayoff."""
    out = mean.copy()
    out.add(round_payoff)
    return out


def payoff_vector(i: int, j: int, bin_index: int, grids: GridSet) -> SparsePayoff:
    """Round payoff delta[bin] - s_i(.|c_j) in block (i, j)."""
    fg = grids.forecasts
    if not (0 <= bin_index < fg.M):
        raise IndexOutOfRange(f"return bin {bin_index} not in [0, {fg.M})")
    row = fg.row(i, j)  # validates i and j
    values = -row.copy()
    values[bin_index] += 1.0
    return SparsePayoff(block=(i, j), values=values)


def _l1_threshold(abs_values: np.ndarray, epsilon: float) -> float:
    """Soft-threshold level theta with sum(max(|v|-theta, 0)) == epsilon.

    Assumes ||v||_1 > epsilon. Standard sort-and-cumsum construction.
    """
    srt = np.sort(abs_values)[::-1]
    cumsum = np.cumsum(srt)
    ranks = np.arange(1, len(srt) + 1)
    candidates = (cumsum - epsilon) / ranks
    rho = np.nonzero(srt > candidates)[0].max()
    return float(candidates[rho])


def project_l1_ball(v: np.ndarray, epsilon: float) -> np.ndarray:
    """l2 projection onto {y : ||y||_1 <= epsilon} by sign-preserving soft-thresholding."""
    if epsilon <= 0:
        raise InvalidParams(f"projection radius must be > 0, got {epsilon}")
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= epsilon:
        return v.copy()
    theta = _l1_threshold(a.ravel(), epsilon)
    return np.sign(v) * np.clip(a - theta, 0.0, None)


def distance_to_target(mean: MeanPayoff, epsilon: float) -> tuple[float, float]:
    """(l2 distance, l1 distance) from the mean payoff to the l1 ball U."""
    norm1 = mean.norm_l1()
    if norm1 <= epsilon:
        return 0.0, 0.0
    _, _, mat = mean.stacked()
    a = np.abs(mat).ravel()
    theta = _l1_threshold(a, epsilon)
    clipped = np.minimum(a, theta)
    return float(np.sqrt((clipped**2).sum())), norm1 - epsilon


def strategy_payoffs(
    strategy: MixedStrategy,
    u_blocks: dict[tuple[int, int], np.ndarray],
    grids: GridSet,
) -> np.ndarray:
    """Scalarized payoff u . f(P, (a_bin, c_j)) for every pure market move.

    Returns a (K, M) array indexed by (signal, return bin); used to check the
    halfspace certificate by exhaustive enumeration.
    """
    fg = grids.forecasts
    out = np.zeros((fg.K, fg.M))
    for (i, j), u_b in u_blocks.items():
        p = strategy.probability(i)
        if p == 0.0:
            continue
        row = fg.row(i, j)
        out[j] += p * (u_b - float(u_b @ row))
    return out


def _uniform(n_forecasts: int) -> MixedStrategy:
    return MixedStrategy(n_forecasts=n_forecasts, support=None, value=0.0)


class BlockIndex:
    """Per-forecast grouping of (forecast, signal) blocks.

    Dense ranks let the per-round best-response aggregate with one bincount;
    calibration maintains an instance incrementally, the public ops build one
    on the fly.
    """

    __slots__ = ("rank_of", "rank_ids", "rank_blocks")

    def __init__(self):
        self.rank_of: dict[int, int] = {}
        self.rank_ids: list[int] = []
        self.rank_blocks: list[list[int]] = []

    def add_block(self, forecast_id: int, position: int) -> int:
        r = self.rank_of.get(forecast_id)
        if r is None:
            r = len(self.rank_ids)
            self.rank_of[forecast_id] = r
            self.rank_ids.append(forecast_id)
            self.rank_blocks.append([])
        self.rank_blocks[r].append(position)
        return r

    @classmethod
    def from_keys(cls, keys_i) -> tuple["BlockIndex", np.ndarray]:
        idx = cls()
        ranks = np.empty(len(keys_i), dtype=np.int64)
        for pos, i in enumerate(keys_i):
            ranks[pos] = idx.add_block(int(i), pos)
        return idx, ranks


def _solve_halfspace_stacked(
    keys_j: np.ndarray,
    u_mat: np.ndarray,
    rows_mat: np.ndarray,
    ranks: np.ndarray,
    index: BlockIndex,
    M: int,
    K: int,
    N: int,
    anchor: float,
    tol: float,
    zero_representative: int | None,
    warm_support: tuple[int, ...] = (),
) -> MixedStrategy:
    """Exact minimax of the scalar halfspace game via row generation.

    Rows are forecast indices; only forecasts owning a block of u have nonzero
    payoff rows, and any untouched forecast is one shared zero row. The master
    LP runs on a small candidate set; the best-response row over all touched
    forecasts is computed vectorized, and candidates are added until the value
    is provably optimal.
    """
    n_cols = M * K
    n_ranks = len(index.rank_ids)
    dot_ur = (u_mat * rows_mat).sum(axis=1)  # u_b . s_i(.|c_j) per block

    def game_row(forecast_id: int) -> np.ndarray:
        r = np.zeros(n_cols)
        rank = index.rank_of.get(forecast_id)
        if rank is not None:
            for pos in index.rank_blocks[rank]:
                j = int(keys_j[pos])
                r[j * M : (j + 1) * M] = u_mat[pos] - dot_ur[pos]
        return r

    candidates: list[int] = []
    seen: set[int] = set()

    def add_candidate(i: int) -> bool:
        if i in seen:
            return False
        seen.add(i)
        candidates.append(i)
        return True

    if zero_representative is not None:
        add_candidate(int(zero_representative))
    for i in warm_support:
        if i in index.rank_of or i == zero_representative:
            add_candidate(int(i))
    # Seed with the forecasts carrying the most u-mass.
    block_l1 = np.abs(u_mat).sum(axis=1)
    mass = np.bincount(ranks, weights=block_l1, minlength=n_ranks)
    for r in np.argsort(-mass, kind="stable")[:8]:
        add_candidate(int(index.rank_ids[int(r)]))
    if not candidates:
        raise Infeasible("halfspace game has no candidate rows")

    G = np.array([game_row(i) for i in candidates])
    arange_b = np.arange(len(keys_j))
    for _ in range(n_ranks + 2):
        # Row player minimizes: hand -G to the maximizing solver.
        neg_value, p, q = solve_matrix_game(-G)
        value = -neg_value
        # Best response over every touched forecast against the column mix q.
        qv = q.reshape(K, M)
        qmass = qv.sum(axis=1)
        contrib = (u_mat @ qv.T)[arange_b, keys_j] - dot_ur * qmass[keys_j]
        per_forecast = np.bincount(ranks, weights=contrib, minlength=n_ranks)
        br_rank = int(np.argmin(per_forecast))
        br_value = float(per_forecast[br_rank])
        if zero_representative is not None:
            br_value = min(br_value, 0.0)
        if br_value >= value - 1e-12:
            break  # no row improves: value is the exact minimax value
        new_i = int(index.rank_ids[br_rank])
        if not add_candidate(new_i):
            break  # numerically stuck; value within 1e-12 anyway
        G = np.vstack([G, game_row(new_i)])
    if value > anchor + tol:
        raise Infeasible(
            f"halfspace game value {value:.6e} exceeds anchor {anchor:.6e} + tol"
        )
    support = [(i, float(pi)) for i, pi in zip(candidates, p) if pi > 1e-15]
    return MixedStrategy(n_forecasts=N, support=support, value=float(value))


def solve_halfspace_game(
    u_blocks: dict[tuple[int, int], np.ndarray],
    grids: GridSet,
    anchor: float,
    tol: float = 1e-9,
    zero_representative: int | None = None,
    warm_support: tuple[int, ...] = (),
) -> MixedStrategy:
    """Mixed forecast distribution P with max over pure market moves of
    u . f(P, (a, c_j)) <= anchor + tol.

    `u_blocks` is the sparse direction (mean payoff minus its projection);
    the attained value is the exact minimax value of the scalar game.
    """
    fg = grids.forecasts
    items = [(k, np.asarray(v, dtype=float)) for k, v in sorted(u_blocks.items())]
    items = [(k, v) for k, v in items if np.any(v != 0.0)]
    if not items:
        return _uniform(fg.N)
    keys_i = np.array([k[0] for k, _ in items], dtype=np.int64)
    keys_j = np.array([k[1] for k, _ in items], dtype=np.int64)
    u_mat = np.array([v for _, v in items])
    rows_mat = np.array([fg.row(int(i), int(j)) for i, j in zip(keys_i, keys_j)])
    if zero_representative is None:
        zero_representative = _lowest_untouched(set(int(i) for i in keys_i), fg.N)
    index, ranks = BlockIndex.from_keys(keys_i)
    return _solve_halfspace_stacked(
        keys_j, u_mat, rows_mat, ranks, index, fg.M, fg.K, fg.N,
        anchor, tol, zero_representative, warm_support,
    )


def _lowest_untouched(touched: set[int], n: int) -> int | None:
    for i in range(n):
        if i not in touched:
            return i
    return None


def blackwell_strategy(
    mean: MeanPayoff,
    target: TargetSet,
    grids: GridSet,
    tol: float = 1e-9,
    zero_representative: int | None = None,
    warm_support: tuple[int, ...] = (),
) -> MixedStrategy:
    """The per-round Blackwell mixed strategy for the calibration game.

    Inside the target (boundary included, distance <= tol) the play is uniform;
    otherwise the direction from the projection to the mean defines the scalar
    halfspace game, whose exact solution is returned.
    """
    fg = grids.forecasts
    if mean.T == 0 or mean.n_blocks == 0:
        return _uniform(fg.N)
    keys_i, keys_j, mat = mean.stacked()
    flat = mat.ravel()
    a = np.abs(flat)
    norm1 = float(a.sum())
    if norm1 <= target.epsilon:
        return _uniform(fg.N)
    theta = _l1_threshold(a, target.epsilon)
    u_flat = np.sign(flat) * np.minimum(a, theta)
    dist = float(np.sqrt((np.minimum(a, theta) ** 2).sum()))
    if dist <= tol:
        return _uniform(fg.N)
    proj_flat = flat - u_flat
    anchor = float(u_flat @ proj_flat)
    u_mat = u_flat.reshape(mat.shape)

    rows_mat = np.empty_like(mat)
    for pos in range(len(keys_i)):
        cached = mean.rows[pos] if pos < len(mean.rows) else None
        if cached is None:
            cached = fg.row(int(keys_i[pos]), int(keys_j[pos]))
        rows_mat[pos] = cached
    if zero_representative is None:
        zero_representative = _lowest_untouched(set(int(i) for i in keys_i), fg.N)
    return _solve_halfspace_stacked(
        keys_i, keys_j, u_mat, rows_mat, grids, anchor, tol,
        zero_representative, warm_support,
    )


def halfspace_direction(
    mean: MeanPayoff, target: TargetSet
) -> tuple[dict[tuple[int, int], np.ndarray], float]:
    """(u blocks, anchor) for the current mean; u is empty inside the target."""
    keys_i, keys_j, mat = mean.stacked()
    if mat.size == 0:
        return {}, 0.0
    flat = mat.ravel()
    a = np.abs(flat)
    if a.sum() <= target.epsilon:
        return {}, 0.0
    theta = _l1_threshold(a, target.epsilon)
    u_flat = np.sign(flat) * np.minimum(a, theta)
    anchor = float(u_flat @ (flat - u_flat))
    u_mat = u_flat.reshape(mat.shape)
    blocks = {
        (int(keys_i[pos]), int(keys_j[pos])): u_mat[pos]
        for pos in range(len(keys_i))
    }
    return blocks, anchor
