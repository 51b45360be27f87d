"""Randomized equivalence checks between the decentralized and centralized paths.

Each check exercises a proven identity on a corpus of random instances:
the decentralized consistent prediction must match the centralized blocked
sparse prediction; at a single vehicle both must match the exact GP
posterior; the fused support covariance must be identical whether built by
summing summaries or through the block solves; and the lemma-based blocked
inverse must match a dense inverse.  Residuals are max-abs errors relative
to the reference's largest entry.

The same corpus generator feeds the test suite and the ``verify`` CLI
subcommand.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fusion import (
    Assignment,
    SupportSet,
    aggregate_summaries,
    consistent_predictive,
    local_summary,
    summary_predictive,
    vehicle_predictive,
)
from .gp import Dataset, GaussianPredictive, Hyperparameters, RegionSet, gp_posterior
from .pic import PicOperator, pic_predictive, pitc_predictive, woodbury_residual

DEFAULT_SEED = 20240801

THRESHOLDS = {
    "equivalence_mean": 1e-8,
    "equivalence_cov": 1e-8,
    "single_vehicle_vs_exact": 1e-8,
    "fused_support_identity": 1e-9,
    "blocked_inverse": 1e-8,
    "aggregation_order": 1e-12,
    "assembly_invariance": 1e-12,
    "summary_vs_pitc": 1e-8,
    "per_vehicle_cov_psd": 1e-8,
    "consistent_variances": 1e-8,
}


def rel_err(a, b) -> float:
    """Max-abs difference scaled by the reference's largest magnitude."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


@dataclass(frozen=True)
class FuzzInstance:
    """One random fusion problem: hyperparameters, support, per-vehicle data,
    a query set, and a (not necessarily variance-optimal) assignment."""

    hyp: Hyperparameters
    support: SupportSet
    datasets: dict
    query: RegionSet
    tau: dict

    @property
    def vehicle_ids(self):
        return sorted(self.datasets)


def make_instance(
    rng,
    n_vehicles=None,
    support_range=(3, 12),
    data_range=(0, 15),
    query_range=(1, 8),
) -> FuzzInstance:
    """Draw a random instance with well-spread points and a sane nugget."""
    k = int(n_vehicles) if n_vehicles else int(rng.integers(2, 5))
    m = int(rng.integers(support_range[0], support_range[1] + 1))
    sizes = [int(rng.integers(data_range[0], data_range[1] + 1)) for _ in range(k)]
    q = int(rng.integers(query_range[0], query_range[1] + 1))
    total = m + sum(sizes) + q
    ids = rng.permutation(total * 2)[:total].astype(np.int64)
    coords = rng.uniform(0.0, 1.0, size=(total, 2))
    hyp = Hyperparameters(
        signal_var=float(rng.uniform(0.5, 2.0)),
        noise_var=float(rng.uniform(0.02, 0.3)),
        length_scales=rng.uniform(0.15, 0.6, size=2),
        prior_mean=float(rng.uniform(-1.0, 1.0)),
    )
    pos = 0

    def cut(count):
        nonlocal pos
        rs = RegionSet(ids[pos : pos + count], coords[pos : pos + count])
        pos += count
        return rs

    support = SupportSet.build(cut(m), hyp)
    datasets = {}
    for vid in range(1, k + 1):
        regions = cut(sizes[vid - 1])
        z = hyp.prior_mean + rng.normal(0.0, 1.0, size=len(regions))
        datasets[vid] = Dataset(regions, z)
    query = cut(q)
    tau = {int(r): int(rng.integers(1, k + 1)) for r in query.ids}
    return FuzzInstance(hyp, support, datasets, query, tau)


def decentralized_predictive(inst: FuzzInstance) -> GaussianPredictive:
    """Full message-passing pipeline ending in the consistent prediction."""
    locals_ = [
        (vid, local_summary(inst.datasets[vid], inst.support, inst.hyp))
        for vid in inst.vehicle_ids
    ]
    glob = aggregate_summaries(locals_, inst.support)
    preds = {
        vid: vehicle_predictive(
            vid, inst.datasets[vid], ls, glob, inst.query, inst.support, inst.hyp
        )
        for vid, ls in locals_
    }
    assignment = Assignment(dict(inst.tau), {})
    return consistent_predictive(assignment, preds, glob, inst.support, inst.hyp)


def centralized_predictive(inst: FuzzInstance) -> GaussianPredictive:
    op = PicOperator.build(
        {vid: ds.regions for vid, ds in inst.datasets.items()}, inst.support, inst.hyp
    )
    z = {vid: ds.z for vid, ds in inst.datasets.items()}
    return pic_predictive(op, z, inst.query, inst.tau)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_residual: float
    threshold: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.threshold


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self) -> str:
        lines = [f"{'check':<28}{'instances':>10}{'max residual':>16}{'threshold':>12}  status"]
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"{c.name:<28}{c.instances:>10}{c.max_residual:>16.3e}{c.threshold:>12.1e}  {status}"
            )
        lines.append(f"elapsed: {self.elapsed_s:.1f} s")
        return "\n".join(lines)


def run_verification(instances: int = 200, seed: int = DEFAULT_SEED,
                     single_vehicle_instances: int = 50) -> VerifyReport:
    """Run the full residual corpus; small enough to finish in seconds."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    start = time.perf_counter()
    worst = {name: 0.0 for name in THRESHOLDS}
    counts = {name: 0 for name in THRESHOLDS}

    def record(name, value):
        worst[name] = max(worst[name], value)
        counts[name] += 1

    for _ in range(instances):
        inst = make_instance(rng)
        dec = decentralized_predictive(inst)
        cen = centralized_predictive(inst)
        record("equivalence_mean", rel_err(dec.mean, cen.mean))
        record("equivalence_cov", rel_err(dec.cov, cen.cov))

        # fused support covariance: summed summaries vs block solves
        locals_ = [
            (vid, local_summary(inst.datasets[vid], inst.support, inst.hyp))
            for vid in inst.vehicle_ids
        ]
        glob = aggregate_summaries(locals_, inst.support)
        op = PicOperator.build(
            {vid: ds.regions for vid, ds in inst.datasets.items()},
            inst.support,
            inst.hyp,
        )
        record("fused_support_identity", rel_err(glob.mat, op.fused_cov))
        record("blocked_inverse", woodbury_residual(op))

        z = {vid: ds.z for vid, ds in inst.datasets.items()}
        base = summary_predictive(glob, inst.query, inst.support, inst.hyp)
        pitc = pitc_predictive(op, z, inst.query)
        record("summary_vs_pitc", max(rel_err(base.mean, pitc.mean), rel_err(base.cov, pitc.cov)))

        perm = list(locals_)[::-1]
        glob2 = aggregate_summaries(perm, inst.support)
        record(
            "aggregation_order",
            max(rel_err(glob2.vec, glob.vec), rel_err(glob2.mat, glob.mat)),
        )

        preds = {
            vid: vehicle_predictive(
                vid, inst.datasets[vid], ls, glob, inst.query, inst.support, inst.hyp
            )
            for vid, ls in locals_
        }
        assignment = Assignment(dict(inst.tau), {})
        a = consistent_predictive(assignment, preds, glob, inst.support, inst.hyp)
        reversed_preds = dict(reversed(list(preds.items())))
        b = consistent_predictive(assignment, reversed_preds, glob2, inst.support, inst.hyp)
        record("assembly_invariance", max(rel_err(b.mean, a.mean), rel_err(b.cov, a.cov)))

        # Per-vehicle covariances are proper posteriors and must be PSD; the
        # stitched joint matrix mixes owners and is not PSD in general (its
        # diagonal still is: every variance comes from one owner's posterior).
        worst_pv = 0.0
        for vp in preds.values():
            if len(vp.query):
                scale = max(float(np.max(np.abs(vp.cov))), 1e-12)
                worst_pv = max(
                    worst_pv,
                    max(0.0, -float(np.linalg.eigvalsh(vp.cov)[0])) / scale,
                )
        record("per_vehicle_cov_psd", worst_pv)
        var_scale = max(float(np.max(np.abs(a.variances))), 1e-12)
        record("consistent_variances", max(0.0, -float(a.variances.min())) / var_scale)

    for _ in range(single_vehicle_instances):
        inst = make_instance(rng, n_vehicles=1, data_range=(1, 15))
        dec = decentralized_predictive(inst)
        cen = centralized_predictive(inst)
        exact = gp_posterior(inst.datasets[1], inst.query, inst.hyp)
        err = max(
            rel_err(dec.mean, exact.mean),
            rel_err(dec.cov, exact.cov),
            rel_err(cen.mean, exact.mean),
            rel_err(cen.cov, exact.cov),
        )
        record("single_vehicle_vs_exact", err)

    checks = tuple(
        CheckResult(name, worst[name], THRESHOLDS[name], counts[name])
        for name in THRESHOLDS
    )
    return VerifyReport(checks, time.perf_counter() - start)
