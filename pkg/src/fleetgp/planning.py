"""Road-graph walks and entropy-driven walk selection.

A vehicle plans a fixed-length walk over the directed region graph; the
walk's value is the joint original-scale entropy of the prediction over the
new (not yet observed, non-support) regions it visits.  Maximizing that
entropy trades off visiting poorly predicted regions (covariance term)
against high-demand regions (mean term).

Each vehicle selects its own best walk independently; an exhaustive joint
search over all vehicles' walks exists only as a tiny-scale reference
(``joint_best_walks``) and is refused beyond desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, JointSizeError, PlannerError
from .gp import LOG_2PI_E, GaussianPredictive, RegionSet

NEG_INF = float("-inf")

# joint_best_walks enumerates the full product of per-vehicle walks.
MAX_JOINT_WALKS = 300_000
MAX_JOINT_VEHICLES = 2
MAX_JOINT_HORIZON = 3


class RoadGraph:
    """Directed region graph with degree-bounded adjacency.

    ``adjacency`` maps region id to the (ascending) tuple of successor ids.
    Region ids must be non-negative integers.
    """

    def __init__(self, regions: RegionSet, adjacency: dict):
        self.regions = regions
        ids = set(int(i) for i in regions.ids)
        adj = {}
        for rid in sorted(ids):
            succ = tuple(sorted(int(s) for s in adjacency.get(rid, ())))
            for s in succ:
                if s not in ids:
                    raise ContractError(f"edge ({rid}, {s}) leaves the region set")
            adj[rid] = succ
        self.adjacency = adj
        self.max_out_degree = max((len(s) for s in adj.values()), default=0)
        self._ids = ids
        # CSR-style arrays for vectorized walk expansion
        size = max(ids) + 1 if ids else 0
        self._outdeg = np.zeros(size, dtype=np.int64)
        ptr = np.zeros(size + 1, dtype=np.int64)
        flat = []
        for rid in range(size):
            succ = adj.get(rid, ())
            self._outdeg[rid] = len(succ)
            ptr[rid + 1] = ptr[rid] + len(succ)
            flat.extend(succ)
        self._ptr = ptr
        self._flat = np.asarray(flat, dtype=np.int64)

    def __contains__(self, rid) -> bool:
        return int(rid) in self._ids

    def walk_array(self, start: int, h: int) -> np.ndarray:
        """All length-``h`` walks from ``start`` as an (n, h+1) id array.

        Rows are in lexicographic order of the id sequence.  Walks that hit
        a dead end before ``h`` steps are not included.
        """
        start = int(start)
        if start not in self._ids:
            raise ContractError(f"start region {start} not in graph")
        if h < 1:
            raise ContractError("walk length must be >= 1")
        walks = np.array([[start]], dtype=np.int64)
        for _ in range(h):
            last = walks[:, -1]
            degs = self._outdeg[last]
            rep = np.repeat(np.arange(walks.shape[0]), degs)
            total = int(degs.sum())
            if total == 0:
                return np.empty((0, h + 1), dtype=np.int64)
            # segment-local arange picks each walk's successors in id order
            seg_start = np.repeat(np.cumsum(degs) - degs, degs)
            offsets = np.repeat(self._ptr[last], degs)
            succ = self._flat[offsets + (np.arange(total) - seg_start)]
            walks = np.column_stack([walks[rep], succ])
        return walks


def grid_graph(rows: int, cols: int, included=None) -> RoadGraph:
    """8-neighborhood graph over a rows-by-cols grid.

    Region id is ``row * cols + col``; features are the grid coordinates
    normalized by the larger grid dimension.  ``included`` (iterable of ids)
    restricts the vertex set; edges are clipped to included regions, so the
    maximum out-degree never exceeds 8.
    """
    if rows < 1 or cols < 1:
        raise ContractError("grid dimensions must be positive")
    if included is None:
        ids = np.arange(rows * cols, dtype=np.int64)
    else:
        ids = np.unique(np.asarray(sorted(int(i) for i in included), dtype=np.int64))
        if ids.size and (ids[0] < 0 or ids[-1] >= rows * cols):
            raise ContractError("included region id outside the grid")
    scale = float(max(rows, cols))
    coords = np.column_stack([ids // cols / scale, ids % cols / scale])
    regions = RegionSet(ids, coords)
    present = set(int(i) for i in ids)
    adjacency = {}
    for rid in present:
        r, c = divmod(rid, cols)
        succ = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and rr * cols + cc in present:
                    succ.append(rr * cols + cc)
        adjacency[rid] = tuple(sorted(succ))
    return RoadGraph(regions, adjacency)


@dataclass(frozen=True)
class Walk:
    """A length-H walk (H+1 region ids) and its set of scoreable new regions."""

    steps: tuple
    new_regions: frozenset

    def __post_init__(self):
        if len(self.steps) < 2:
            raise ContractError("a walk has at least two steps")
        if not self.new_regions <= set(self.steps):
            raise ContractError("new_regions must be visited by the walk")


@dataclass(frozen=True)
class WalkScore:
    walk: Walk
    entropy: float


@dataclass(frozen=True)
class WalkContext:
    """Immutable per-round snapshot a vehicle scores walks against.

    ``pred`` is the joint prediction over every scoreable region (the
    unobserved, non-support candidates); scoring a walk marginalizes it to
    the walk's new regions, which is exact for all predictors here.
    """

    pred: GaussianPredictive
    lookup: np.ndarray  # region id -> row in pred, -1 if not scoreable

    @staticmethod
    def build(pred: GaussianPredictive, graph: RoadGraph) -> "WalkContext":
        size = int(graph.regions.ids.max()) + 1 if len(graph.regions) else 0
        size = max(size, int(pred.query.ids.max()) + 1 if len(pred.query) else 0)
        lookup = np.full(size, -1, dtype=np.int64)
        lookup[pred.query.ids] = np.arange(len(pred.query))
        return WalkContext(pred, lookup)

    def scoreable(self, rid: int) -> bool:
        rid = int(rid)
        return 0 <= rid < self.lookup.size and self.lookup[rid] >= 0


def _set_entropy(ctx: WalkContext, idx: np.ndarray) -> float:
    """Entropy of the context prediction restricted to row indices ``idx``.

    Same arithmetic as :func:`fleetgp.gp.log_gaussian_entropy`; an empty or
    numerically singular restriction scores -inf (such walks lose to any
    informative one).
    """
    k = idx.size
    if k == 0:
        return NEG_INF
    cov = ctx.pred.cov[np.ix_(idx, idx)]
    try:
        l = np.linalg.cholesky(cov)
        logdet = 2.0 * float(np.sum(np.log(np.diag(l))))
    except np.linalg.LinAlgError:
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            return NEG_INF
    return 0.5 * (k * LOG_2PI_E + logdet) + float(np.sum(ctx.pred.mean[idx]))


def enumerate_walks(graph: RoadGraph, start: int, h: int, observed=(), excluded=()):
    """All length-``h`` walks from ``start`` in deterministic (lexicographic) order.

    ``observed`` and ``excluded`` (e.g. the support set) are dropped from
    each walk's ``new_regions``; revisits within a walk count once.
    """
    arr = graph.walk_array(start, h)
    drop = set(int(i) for i in observed) | set(int(i) for i in excluded)
    walks = []
    for row in arr:
        steps = tuple(int(s) for s in row)
        walks.append(Walk(steps, frozenset(s for s in steps if s not in drop)))
    return walks


def score_walk(walk: Walk, ctx: WalkContext) -> WalkScore:
    """Entropy score of one walk under the context prediction."""
    if not walk.new_regions:
        return WalkScore(walk, NEG_INF)
    rids = list(walk.new_regions)
    for rid in rids:
        if not ctx.scoreable(rid):
            raise ContractError(f"walk region {rid} is outside the context prediction")
    idx = np.sort(ctx.lookup[np.asarray(rids, dtype=np.int64)])
    return WalkScore(walk, _set_entropy(ctx, idx))


def _canonical_rows(ctx: WalkContext, arr: np.ndarray) -> np.ndarray:
    """Map walk rows to sorted, deduplicated context-index rows (-1 padding)."""
    m = ctx.lookup[arr]
    m = np.sort(m, axis=1)
    dup = np.zeros_like(m, dtype=bool)
    dup[:, 1:] = (m[:, 1:] == m[:, :-1]) & (m[:, 1:] >= 0)
    m[dup] = -1
    return np.sort(m, axis=1)


def select_walk(graph: RoadGraph, start: int, h: int, ctx: WalkContext) -> Walk:
    """The walk from ``start`` maximizing the entropy score.

    Ties break to the earliest walk in enumeration order, making selection
    deterministic given the context.  Raises :class:`PlannerError` when no
    length-``h`` walk exists.
    """
    walk, _ = select_walk_scored(graph, start, h, ctx)
    return walk


def _entropies_for_rows(ctx: WalkContext, uniq: np.ndarray) -> np.ndarray:
    """Scores for canonical rows, batched by set size.

    The batched path performs the same factorization and summation order as
    :func:`_set_entropy`, so scores are bit-identical to the single-walk
    path; groups containing a non-PSD restriction fall back to it.
    """
    scores = np.full(uniq.shape[0], NEG_INF)
    counts = (uniq >= 0).sum(axis=1)
    for k in np.unique(counts):
        if k == 0:
            continue
        sel = np.flatnonzero(counts == k)
        idxs = uniq[sel, -k:]  # rows sort ascending with -1 padding first
        covs = ctx.pred.cov[idxs[:, :, None], idxs[:, None, :]]
        try:
            ls = np.linalg.cholesky(covs)
            logdets = 2.0 * np.sum(np.log(np.diagonal(ls, axis1=1, axis2=2)), axis=1)
            scores[sel] = (
                0.5 * (k * LOG_2PI_E + logdets) + ctx.pred.mean[idxs].sum(axis=1)
            )
        except np.linalg.LinAlgError:
            for j in sel:
                row = uniq[j]
                scores[j] = _set_entropy(ctx, row[row >= 0])
    return scores


def select_walk_scored(graph: RoadGraph, start: int, h: int, ctx: WalkContext):
    arr = graph.walk_array(start, h)
    if arr.shape[0] == 0:
        raise PlannerError(f"no length-{h} walk from region {start}")
    canon = _canonical_rows(ctx, arr)
    uniq, inverse = np.unique(canon, axis=0, return_inverse=True)
    per_walk = _entropies_for_rows(ctx, uniq)[inverse]
    best = int(np.argmax(per_walk))  # first occurrence wins ties
    steps = tuple(int(s) for s in arr[best])
    row = canon[best]
    new = frozenset(int(ctx.pred.query.ids[i]) for i in row[row >= 0])
    return Walk(steps, new), float(per_walk[best])


def joint_entropy(walks, ctx: WalkContext) -> float:
    """Entropy of the union of the walks' new regions under the context."""
    union = frozenset().union(*(w.new_regions for w in walks)) if walks else frozenset()
    if not union:
        return NEG_INF
    idx = np.sort(ctx.lookup[np.asarray(sorted(union), dtype=np.int64)])
    if np.any(idx < 0):
        raise ContractError("walk region outside the context prediction")
    return _set_entropy(ctx, idx)


def joint_best_walks(graph: RoadGraph, starts, h: int, ctx: WalkContext,
                     limit: int = MAX_JOINT_WALKS):
    """Exhaustive argmax of the joint entropy over all vehicles' walk tuples.

    A tiny-scale reference only: refuses more than two vehicles, horizons
    beyond 3, or a walk product larger than ``limit`` (the count rides on
    the raised :class:`JointSizeError`).  Returns ``(walk tuple, entropy)``.
    """
    if len(starts) > MAX_JOINT_VEHICLES or h > MAX_JOINT_HORIZON:
        raise JointSizeError(
            f"joint search limited to {MAX_JOINT_VEHICLES} vehicles and "
            f"horizon {MAX_JOINT_HORIZON}",
            count=-1,
        )
    arrays = [graph.walk_array(int(s), h) for s in starts]
    counts = [a.shape[0] for a in arrays]
    if any(c == 0 for c in counts):
        raise PlannerError("a vehicle has no admissible walk")
    total = math.prod(counts)
    if total > limit:
        raise JointSizeError(f"joint walk count {total} exceeds limit {limit}", total)

    canon = [_canonical_rows(ctx, a) for a in arrays]
    cache = {}

    def entropy_of(key):
        val = cache.get(key)
        if val is None:
            val = _set_entropy(ctx, np.asarray(key, dtype=np.int64))
            cache[key] = val
        return val

    best_combo, best_score = None, NEG_INF
    indices = [0] * len(arrays)
    while True:
        rows = [canon[v][indices[v]] for v in range(len(arrays))]
        merged = np.unique(np.concatenate(rows))
        key = tuple(int(i) for i in merged if i >= 0)
        score = entropy_of(key)
        if score > best_score or best_combo is None:
            best_combo, best_score = tuple(indices), score
        # odometer over vehicle-major enumeration order
        v = len(arrays) - 1
        while v >= 0:
            indices[v] += 1
            if indices[v] < counts[v]:
                break
            indices[v] = 0
            v -= 1
        if v < 0:
            break

    walks = []
    for v, a in enumerate(arrays):
        row = canon[v][best_combo[v]]
        steps = tuple(int(s) for s in a[best_combo[v]])
        new = frozenset(int(ctx.pred.query.ids[i]) for i in row[row >= 0])
        walks.append(Walk(steps, new))
    return tuple(walks), float(best_score)
