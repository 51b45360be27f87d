"""One-shot prediction benchmark: accuracy and per-vehicle wall time.

Mirrors the protocol's cost model: with pooled exact prediction every
vehicle performs the whole computation, so its per-vehicle time is the full
time; with the decentralized predictors each vehicle pays for its own local
work plus one copy of the shared aggregation/assignment work.  The thread
pool is pinned to one thread for stable measurements.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ContractError
from .fileio import demand_to_log
from .fusion import (
    SupportSet,
    aggregate_summaries,
    assign_regions,
    local_summary,
    summary_moments,
    vehicle_moments,
)
from .gp import Dataset, Hyperparameters, RegionSet, gp_posterior
from .sim import HotspotConfig, demand_rmse, generate_field


@dataclass(frozen=True)
class BenchRow:
    algorithm: str
    data_size: int
    rmse: float
    per_vehicle_ms: float


@dataclass(frozen=True)
class BenchResult:
    rows: tuple
    pooled_scaling: float  # time ratio when the data size doubles
    distributed_scaling: float
    settings: dict

    def table(self) -> str:
        lines = [f"{'algorithm':<10}{'|D|':>8}{'rmse':>12}{'per-vehicle ms':>18}"]
        for r in self.rows:
            lines.append(
                f"{r.algorithm:<10}{r.data_size:>8}{r.rmse:>12.4f}{r.per_vehicle_ms:>18.3f}"
            )
        if self.pooled_scaling:
            lines.append(
                f"doubling |D|: fgp x{self.pooled_scaling:.2f}, "
                f"gpddf+ per-vehicle x{self.distributed_scaling:.2f}"
            )
        return "\n".join(lines)


def _nearest_center_blocks(coords, centers_xy, ids):
    d2 = ((coords[:, None, :] - centers_xy[None, :, :]) ** 2).sum(axis=2)
    owner = np.argmin(d2, axis=1)
    return {int(k + 1): ids[owner == k] for k in range(centers_xy.shape[0])}


def _timer(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _run_once(field, hyp, support, blocks, z_by_vid, query, truth_q):
    """Time the three predictors once; returns {algo: (rmse, per_vehicle_s)}."""
    vids = sorted(blocks)
    results = {}

    pooled_ids = np.concatenate([blocks[v].ids for v in vids])
    order = np.argsort(pooled_ids)
    pooled_regions = RegionSet(
        pooled_ids[order],
        np.concatenate([blocks[v].coords for v in vids])[order],
    )
    pooled_z = np.concatenate([z_by_vid[v] for v in vids])[order]

    def run_fgp():
        pooled = Dataset(pooled_regions, pooled_z)
        return gp_posterior(pooled, query, hyp)

    pred, t_full = _timer(run_fgp)
    results["fgp"] = (demand_rmse(truth_q, pred.mean, pred.variances), t_full)

    datasets = {v: Dataset(blocks[v], z_by_vid[v]) for v in vids}
    local_times = {}
    locals_ = []
    for v in vids:
        ls, dt = _timer(local_summary, datasets[v], support, hyp)
        local_times[v] = dt
        locals_.append((v, ls))
    glob, t_agg = _timer(aggregate_summaries, locals_, support)

    (s_mean, s_var), t_query = _timer(summary_moments, glob, query, support, hyp)
    t_ddf = float(np.mean([local_times[v] for v in vids])) + t_agg + t_query
    results["gpddf"] = (demand_rmse(truth_q, s_mean, s_var), t_ddf)

    member_times = {}
    means = {}
    variances = {}
    local_by_vid = dict(locals_)
    for v in vids:
        (mean, var, _), dt = _timer(
            vehicle_moments, v, datasets[v], local_by_vid[v], glob, query, support, hyp
        )
        member_times[v] = dt
        means[v] = mean
        variances[v] = var

    def finish_plus():
        per_region = {
            int(rid): {v: float(variances[v][i]) for v in vids}
            for i, rid in enumerate(query.ids)
        }
        assignment = assign_regions(per_region)
        tau = np.array([assignment.map[int(r)] for r in query.ids])
        mean = np.empty(len(query))
        var = np.empty(len(query))
        for v in vids:
            sel = tau == v
            mean[sel] = means[v][sel]
            var[sel] = variances[v][sel]
        return mean, var

    (p_mean, p_var), t_assign = _timer(finish_plus)
    t_plus = (
        float(np.mean([local_times[v] + member_times[v] for v in vids])) + t_agg + t_assign
    )
    results["gpddf+"] = (demand_rmse(truth_q, p_mean, p_var), t_plus)
    return results


def run_predict_benchmark(
    seed: int = 0,
    rows: int = 100,
    cols: int = 100,
    data_size: int = 2000,
    support_size: int = 64,
    vehicles: int = 20,
    query_size: int = 256,
    reps: int = 3,
    scaling: bool = True,
    hyp: Hyperparameters = None,
) -> BenchResult:
    """Benchmark the three predictors on one synthetic field.

    Observation blocks are spatially coherent (nearest of ``vehicles``
    random centers) and nested across the two data sizes; the query set is
    shared, so the doubling ratios compare like against like.
    """
    n_regions = rows * cols
    need = 2 * data_size + support_size + query_size
    if scaling and need > n_regions:
        raise ContractError(f"grid too small: need {need} regions, have {n_regions}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    base_hyp = hyp or Hyperparameters(1.0, 0.1, [0.12, 0.12])
    field = generate_field(seed, rows, cols, base_hyp, HotspotConfig())
    z_all = demand_to_log(field.truth)
    run_hyp = Hyperparameters(
        base_hyp.signal_var,
        base_hyp.noise_var,
        base_hyp.length_scales,
        prior_mean=float(np.mean(z_all)),
    )

    support_idx = rng.choice(n_regions, size=support_size, replace=False)
    support_idx.sort()
    support = SupportSet.build(field.regions.take(support_idx), run_hyp)

    pool = np.setdiff1d(np.arange(n_regions), support_idx)
    picked = rng.choice(pool, size=2 * data_size + query_size, replace=False)
    data_ids = picked[: 2 * data_size]
    query_idx = np.sort(picked[2 * data_size :])
    query = field.regions.take(query_idx)
    truth_q = field.truth[query_idx]

    centers = rng.choice(n_regions, size=vehicles, replace=False)
    centers_xy = field.regions.coords[centers]

    sizes = [data_size] + ([2 * data_size] if scaling else [])
    timings = {(algo, size): [] for algo in ("fgp", "gpddf", "gpddf+") for size in sizes}
    accuracy = {}
    with threadpool_limits(limits=1):
        for size in sizes:
            ids = np.sort(data_ids[:size])
            coords = field.regions.coords[ids]
            blocks = _nearest_center_blocks(coords, centers_xy, ids)
            blocks = {v: field.regions.take(b) for v, b in blocks.items()}
            z_by_vid = {v: z_all[b.ids] for v, b in blocks.items()}
            for _ in range(reps):
                out = _run_once(field, run_hyp, support, blocks, z_by_vid, query, truth_q)
                for algo, (rmse, t) in out.items():
                    timings[(algo, size)].append(t)
                    accuracy[(algo, size)] = rmse

    rows_out = []
    med = {}
    for (algo, size), ts in timings.items():
        med[(algo, size)] = float(np.median(ts))
        rows_out.append(
            BenchRow(algo, size, accuracy[(algo, size)], med[(algo, size)] * 1000.0)
        )
    pooled_ratio = distributed_ratio = 0.0
    if scaling:
        pooled_ratio = med[("fgp", 2 * data_size)] / med[("fgp", data_size)]
        distributed_ratio = med[("gpddf+", 2 * data_size)] / med[("gpddf+", data_size)]
    settings = {
        "seed": seed,
        "rows": rows,
        "cols": cols,
        "data_size": data_size,
        "support_size": support_size,
        "vehicles": vehicles,
        "query_size": query_size,
        "reps": reps,
    }
    return BenchResult(tuple(rows_out), pooled_ratio, distributed_ratio, settings)
