"""Closed-loop mobility-on-demand fleet simulation.

Each step: every vehicle runs the configured fusion policy over the fleet's
messages, plans a fixed-length walk maximizing predictive entropy, then the
fleet executes the walks move by move.  A vehicle entering a region with
waiting users picks one up (uniformly at random, seeded), leaves the fleet,
and is replaced by a fresh vehicle drawn from the supply distribution; the
picked-up user is replaced by a fresh user drawn from the demand
distribution, so vehicle and user populations stay constant.

Demand measurements are the (static) per-region counts, observed noiselessly
on entry and stored log-transformed as log(1 + count); revisits replace the
stored value.  Support regions are never added to a vehicle's data.

The numeric thread pool is pinned to one thread inside :meth:`Simulation.run`
so metric streams are bit-reproducible regardless of BLAS thread settings.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np
from threadpoolctl import threadpool_limits

from .config import AUTO, RunConfig
from .errors import ContractError, PlannerError, ValidationError
from .fileio import demand_to_log, log_moments_to_demand
from .fusion import (
    SupportSet,
    aggregate_summaries,
    assign_regions,
    consistent_predictive,
    local_summary,
    summary_moments,
    summary_predictive,
    vehicle_predictive,
)
from .gp import Dataset, GaussianPredictive, Hyperparameters, RegionSet, gp_posterior
from .planning import RoadGraph, WalkContext, grid_graph, select_walk_scored


@dataclass(frozen=True)
class HotspotConfig:
    """Shape of the synthetic demand field's extreme-demand bumps."""

    count: int = 3
    amplitude: float = 2.5
    radius: float = 0.08
    base_log_mean: float = 0.8

    @staticmethod
    def from_config(config: RunConfig) -> "HotspotConfig":
        return HotspotConfig(
            count=config.hotspot_count,
            amplitude=config.hotspot_amplitude,
            radius=config.hotspot_radius,
            base_log_mean=config.base_log_mean,
        )


@dataclass(frozen=True)
class DemandField:
    """Static demand truth over a (possibly masked) grid, with the region
    graph and the normalized demand/supply distributions."""

    rows: int
    cols: int
    regions: RegionSet
    graph: RoadGraph
    truth: np.ndarray
    demand_dist: np.ndarray
    supply_dist: np.ndarray
    index: np.ndarray  # region id -> position in `regions`, -1 if excluded

    def __post_init__(self):
        n = len(self.regions)
        if self.truth.shape != (n,) or self.demand_dist.shape != (n,):
            raise ValidationError("field arrays must align with the region set")
        if self.supply_dist.shape != (n,):
            raise ValidationError("supply distribution must align with the region set")
        if not np.all(np.isfinite(self.truth)) or np.any(self.truth < 0):
            raise ValidationError("demand truth must be finite and non-negative")
        for name, dist in (("demand", self.demand_dist), ("supply", self.supply_dist)):
            if abs(float(dist.sum()) - 1.0) > 1e-9 or np.any(dist < 0):
                raise ValidationError(f"{name} distribution must be normalized")


def make_field(rows, cols, ids, truth, supply=None) -> DemandField:
    """Assemble a field from raw arrays; distributions are normalized here."""
    graph = grid_graph(rows, cols, ids)
    regions = graph.regions
    order = np.argsort(np.asarray(ids, dtype=np.int64))
    truth = np.asarray(truth, dtype=float)[order]
    total = float(truth.sum())
    n = len(regions)
    demand_dist = truth / total if total > 0 else np.full(n, 1.0 / n)
    if supply is None:
        supply_dist = np.full(n, 1.0 / n)
    else:
        supply = np.asarray(supply, dtype=float)[order]
        s = float(supply.sum())
        if s <= 0:
            raise ValidationError("supply weights must have positive sum")
        # already-normalized weights pass through bit-exactly (file round-trips)
        supply_dist = supply if abs(s - 1.0) <= 1e-9 else supply / s
    index = np.full(rows * cols, -1, dtype=np.int64)
    index[regions.ids] = np.arange(n)
    return DemandField(rows, cols, regions, graph, truth, demand_dist, supply_dist, index)


def generate_field(
    seed: int, rows: int, cols: int, hyp: Hyperparameters, hotspots: HotspotConfig
) -> DemandField:
    """Synthesize a demand field: a log-scale GP draw plus localized bumps.

    The squared-exponential kernel factorizes over the two grid axes, so the
    draw uses the two axis factors instead of the full grid covariance; the
    nugget is added as white noise.  Counts are exp of the log field, rounded.
    The supply distribution is an independent smooth draw, exp-normalized.
    """
    if rows < 1 or cols < 1:
        raise ContractError("grid dimensions must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scale = float(max(rows, cols))
    r = np.arange(rows) / scale
    c = np.arange(cols) / scale
    k_r = np.exp(-0.5 * ((r[:, None] - r[None, :]) / hyp.length_scales[0]) ** 2)
    k_c = np.exp(-0.5 * ((c[:, None] - c[None, :]) / hyp.length_scales[1]) ** 2)
    l_r = np.linalg.cholesky(k_r + 1e-10 * np.eye(rows))
    l_c = np.linalg.cholesky(k_c + 1e-10 * np.eye(cols))

    def smooth_draw():
        g = rng.standard_normal((rows, cols))
        return math.sqrt(hyp.signal_var) * (l_r @ g @ l_c.T)

    log_field = hotspots.base_log_mean + smooth_draw()
    if hyp.noise_var:
        log_field = log_field + math.sqrt(hyp.noise_var) * rng.standard_normal((rows, cols))
    rr = (np.arange(rows) / scale)[:, None]
    cc = (np.arange(cols) / scale)[None, :]
    for _ in range(hotspots.count):
        cr = int(rng.integers(rows))
        ccol = int(rng.integers(cols))
        d2 = (rr - cr / scale) ** 2 + (cc - ccol / scale) ** 2
        log_field = log_field + hotspots.amplitude * np.exp(-0.5 * d2 / hotspots.radius**2)
    truth = np.rint(np.exp(log_field)).ravel()

    supply_log = smooth_draw()
    supply = np.exp(supply_log - supply_log.max()).ravel()
    ids = np.arange(rows * cols, dtype=np.int64)
    return make_field(rows, cols, ids, truth, supply)


@dataclass
class VehicleState:
    vid: int
    location: int
    data: dict = dc_field(default_factory=dict)  # region id -> log measurement
    moves: int = 0
    spawn_step: int = 0
    alive: bool = True


@dataclass
class UserState:
    uid: int
    location: int
    spawn_step: int


@dataclass(frozen=True)
class MetricsRow:
    step: int
    rmse: float
    kld: float
    avg_cruise: float
    avg_wait: float
    total_pickups: int
    wall_time_ms: float


def demand_rmse(truth, mean_log, var_log) -> float:
    """RMSE between true counts and back-transformed predictions, over all regions."""
    predicted = log_moments_to_demand(mean_log, var_log)
    err = np.asarray(truth, dtype=float) - predicted
    return float(np.sqrt(np.mean(err * err)))


def smoothed_kld(fleet_weights, demand_dist, eps) -> float:
    """KL divergence of the (smoothed, renormalized) fleet distribution from
    the similarly smoothed demand distribution."""
    w = np.asarray(fleet_weights, dtype=float) + eps
    p_c = w / w.sum()
    d = np.asarray(demand_dist, dtype=float) + eps
    p_d = d / d.sum()
    return float(np.sum(p_c * np.log(p_c / p_d)))


class Simulation:
    """One policy's closed-loop run over a static demand field.

    Deterministic given (field, config): randomness flows through three
    seeded streams (vehicle spawns, user spawns, pickup choice) spawned from
    the run seed, and vehicles are always processed in id order.
    """

    def __init__(self, field: DemandField, config: RunConfig):
        config.validate()
        if config.support_size >= len(field.regions):
            raise ValidationError("support_size must be smaller than the region count")
        self.field = field
        self.config = config
        self.z_truth = demand_to_log(field.truth)
        prior_mean = (
            float(np.mean(self.z_truth))
            if config.prior_mean == AUTO
            else float(config.prior_mean)
        )
        self.hyp = config.hyperparameters(prior_mean)

        rng_support = np.random.default_rng(np.random.SeedSequence(config.support_seed))
        pick = rng_support.choice(len(field.regions), size=config.support_size, replace=False)
        pick.sort()
        self.support = SupportSet.build(field.regions.take(pick), self.hyp)
        self.support_ids = frozenset(int(i) for i in self.support.regions.ids)
        self._support_mask = np.zeros(len(field.regions), dtype=bool)
        self._support_mask[pick] = True

        streams = np.random.SeedSequence(config.seed).spawn(3)
        self.rng_vehicles = np.random.default_rng(streams[0])
        self.rng_users = np.random.default_rng(streams[1])
        self.rng_pickup = np.random.default_rng(streams[2])

        self.step_index = 0
        self._next_vid = 0
        self._next_uid = 0
        self.vehicles: list[VehicleState] = []
        self.users_by_region: dict[int, list[UserState]] = {}
        self.totals = {
            "pickups": 0,
            "cruise_sum": 0,
            "wait_sum": 0,
            "planned_walk_steps": 0,
        }
        self.window: deque = deque()
        self.window_counts = np.zeros(len(field.regions))
        self.events: list[str] = []

        for _ in range(config.vehicles):
            self._spawn_vehicle()
        for _ in range(config.users):
            self._spawn_user()

    # -- population bookkeeping -------------------------------------------

    def _draw_region(self, rng, dist) -> int:
        idx = int(rng.choice(len(self.field.regions), p=dist))
        return int(self.field.regions.ids[idx])

    def _observe(self, vehicle: VehicleState, rid: int) -> None:
        if rid not in self.support_ids:
            vehicle.data[rid] = float(self.z_truth[self.field.index[rid]])

    def _spawn_vehicle(self) -> None:
        loc = self._draw_region(self.rng_vehicles, self.field.supply_dist)
        v = VehicleState(self._next_vid, loc, {}, 0, self.step_index)
        self._next_vid += 1
        self._observe(v, loc)
        self.vehicles.append(v)

    def _spawn_user(self) -> None:
        loc = self._draw_region(self.rng_users, self.field.demand_dist)
        u = UserState(self._next_uid, loc, self.step_index)
        self._next_uid += 1
        self.users_by_region.setdefault(loc, []).append(u)

    def user_count(self) -> int:
        return sum(len(v) for v in self.users_by_region.values())

    def _pickup(self, vehicle: VehicleState, rid: int) -> None:
        waiting = self.users_by_region[rid]
        user = waiting.pop(int(self.rng_pickup.integers(len(waiting))))
        if not waiting:
            del self.users_by_region[rid]
        self.totals["pickups"] += 1
        self.totals["cruise_sum"] += vehicle.moves
        self.totals["wait_sum"] += self.step_index - user.spawn_step
        vehicle.alive = False
        self.vehicles.remove(vehicle)
        self._spawn_vehicle()
        self._spawn_user()

    # -- fusion round -------------------------------------------------------

    def _vehicle_dataset(self, vehicle: VehicleState) -> Dataset:
        ids = np.fromiter(sorted(vehicle.data), dtype=np.int64, count=len(vehicle.data))
        coords = self.field.regions.coords[self.field.index[ids]] if ids.size else np.empty((0, 2))
        z = np.array([vehicle.data[int(i)] for i in ids])
        return Dataset(RegionSet(ids, coords), z)

    def _fusion_round(self):
        """Run the configured policy; returns per-region (mean, var) over all
        regions plus the walk-scoring context over unobserved, non-support
        candidates."""
        field = self.field
        n = len(field.regions)
        observed: dict[int, float] = {}
        for v in self.vehicles:
            observed.update(v.data)
        obs_ids = np.fromiter(sorted(observed), dtype=np.int64, count=len(observed))
        obs_idx = field.index[obs_ids] if obs_ids.size else np.empty(0, dtype=np.int64)
        obs_mask = np.zeros(n, dtype=bool)
        obs_mask[obs_idx] = True

        candidate_mask = ~obs_mask & ~self._support_mask
        cand_idx = np.flatnonzero(candidate_mask)
        cand_regions = field.regions.take(cand_idx)

        mean_all = np.empty(n)
        var_all = np.empty(n)
        if obs_ids.size:
            mean_all[obs_idx] = [observed[int(i)] for i in obs_ids]
            var_all[obs_idx] = 0.0

        policy = self.config.policy
        if policy == "fgp":
            pooled = Dataset(
                RegionSet(obs_ids, field.regions.coords[obs_idx]),
                np.array([observed[int(i)] for i in obs_ids]),
            )
            unobs_idx = np.flatnonzero(~obs_mask)
            pred = gp_posterior(pooled, field.regions.take(unobs_idx), self.hyp)
            mean_all[unobs_idx] = pred.mean
            var_all[unobs_idx] = pred.variances
            in_cand = candidate_mask[unobs_idx]
            ctx_pred = pred.take(np.flatnonzero(in_cand))
        else:
            vids = [v.vid for v in self.vehicles]
            datasets = {v.vid: self._vehicle_dataset(v) for v in self.vehicles}
            locals_ = [(vid, local_summary(datasets[vid], self.support, self.hyp)) for vid in vids]
            glob = aggregate_summaries(locals_, self.support)
            sup_idx = np.flatnonzero(self._support_mask)
            sup_mean, sup_var = summary_moments(
                glob, self.support.regions, self.support, self.hyp
            )
            mean_all[sup_idx] = sup_mean
            var_all[sup_idx] = sup_var
            if policy == "gpddf":
                ctx_pred = summary_predictive(glob, cand_regions, self.support, self.hyp)
            else:  # gpddf+
                local_by_vid = dict(locals_)
                preds = {
                    vid: vehicle_predictive(
                        vid,
                        datasets[vid],
                        local_by_vid[vid],
                        glob,
                        cand_regions,
                        self.support,
                        self.hyp,
                    )
                    for vid in vids
                }
                diag_by_vid = {vid: preds[vid].cov.diagonal().tolist() for vid in vids}
                variances = {
                    int(rid): {vid: diag_by_vid[vid][i] for vid in vids}
                    for i, rid in enumerate(cand_regions.ids)
                }
                assignment = assign_regions(variances)
                ctx_pred = consistent_predictive(
                    assignment, preds, glob, self.support, self.hyp
                )
            mean_all[cand_idx] = ctx_pred.mean
            var_all[cand_idx] = ctx_pred.variances
        ctx = WalkContext.build(ctx_pred, field.graph)
        return mean_all, var_all, ctx

    # -- stepping -----------------------------------------------------------

    def step(self) -> MetricsRow:
        config = self.config
        t0 = time.perf_counter() if config.timing else 0.0
        mean_all, var_all, ctx = self._fusion_round()

        plans = []
        for vehicle in self.vehicles:
            try:
                walk, _ = select_walk_scored(
                    self.field.graph, vehicle.location, config.horizon, ctx
                )
            except PlannerError:
                self.events.append(
                    f"step {self.step_index}: vehicle {vehicle.vid} holds position"
                )
                continue
            plans.append((vehicle, walk.steps))
            self.totals["planned_walk_steps"] += config.horizon
        wall_ms = (time.perf_counter() - t0) * 1000.0 / config.vehicles if config.timing else 0.0

        for substep in range(1, config.horizon + 1):
            for vehicle, steps in plans:
                if not vehicle.alive:
                    continue
                nxt = int(steps[substep])
                vehicle.location = nxt
                vehicle.moves += 1
                self._observe(vehicle, nxt)
                if nxt in self.users_by_region:
                    self._pickup(vehicle, nxt)

        locs = self.field.index[np.array([v.location for v in self.vehicles], dtype=np.int64)]
        hist = np.bincount(locs, minlength=len(self.field.regions)).astype(float)
        self.window.append(hist)
        self.window_counts += hist
        if len(self.window) > config.window:
            self.window_counts -= self.window.popleft()

        row = MetricsRow(
            step=self.step_index,
            rmse=demand_rmse(self.field.truth, mean_all, var_all),
            kld=smoothed_kld(self.window_counts, self.field.demand_dist, config.smoothing_eps),
            avg_cruise=(
                self.totals["cruise_sum"] / self.totals["pickups"]
                if self.totals["pickups"]
                else float("nan")
            ),
            avg_wait=(
                self.totals["wait_sum"] / self.totals["pickups"]
                if self.totals["pickups"]
                else float("nan")
            ),
            total_pickups=self.totals["pickups"],
            wall_time_ms=wall_ms,
        )
        self.step_index += 1
        return row

    def run(self, writer=None) -> list[MetricsRow]:
        """Execute all configured steps single-threaded (bit-reproducible)."""
        rows = []
        with threadpool_limits(limits=1):
            for _ in range(self.config.steps):
                row = self.step()
                rows.append(row)
                if writer is not None:
                    writer.append(row)
        return rows

    def summary(self) -> dict:
        pending = [
            self.step_index - u.spawn_step
            for users in self.users_by_region.values()
            for u in users
        ]
        t = self.totals
        return {
            "total_pickups": t["pickups"],
            "avg_cruise": t["cruise_sum"] / t["pickups"] if t["pickups"] else None,
            "avg_wait": t["wait_sum"] / t["pickups"] if t["pickups"] else None,
            "planned_walk_steps": t["planned_walk_steps"],
            "unserved_users": len(pending),
            "unserved_mean_wait": float(np.mean(pending)) if pending else None,
            "observed_regions": len({r for v in self.vehicles for r in v.data}),
        }
