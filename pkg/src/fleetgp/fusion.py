"""Decentralized demand-data fusion.

Each vehicle compresses its raw observations, relative to a common support
set of regions, into a fixed-size summary (a vector and a matrix over the
support set).  Summaries are additive: broadcast and summed they form the
global summary, from which every vehicle can compute the same predictions
without ever seeing another vehicle's raw data.

Two predictors are built on the summaries:

* ``summary_predictive`` uses the global summary alone (the fast, lossy
  predictor);
* ``vehicle_predictive`` additionally corrects with the vehicle's own raw
  data, improving predictions near that data.  Per-region assignment of the
  minimum-variance vehicle (``assign_regions``) then stitches the per-vehicle
  results into one globally consistent prediction
  (``consistent_predictive``), which provably matches the centralized
  blocked sparse predictor in :mod:`fleetgp.pic`.

Everything a vehicle sends -- summaries, per-region variance scalars, rows
of its ``gamma`` matrix -- is an explicit value; no function reads another
vehicle's dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ContractError, ProtocolError
from .gp import (
    Dataset,
    GaussianPredictive,
    Hyperparameters,
    RegionSet,
    chol_spd,
    cov_matrix,
)


@dataclass(frozen=True)
class SupportSet:
    """Common support regions with their prior covariance and its factor."""

    regions: RegionSet
    prior_cov: np.ndarray
    chol: np.ndarray

    @staticmethod
    def build(regions: RegionSet, hyp: Hyperparameters) -> "SupportSet":
        cov = cov_matrix(regions, regions, hyp)
        l, _ = chol_spd(cov, hyp.signal_var)
        return SupportSet(regions, cov, l)

    def __len__(self) -> int:
        return len(self.regions)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply the inverse prior support covariance to ``b``."""
        return cho_solve((self.chol, True), b)


@dataclass(frozen=True)
class LocalSummary:
    """One vehicle's data compressed onto the support set (vector, matrix)."""

    vec: np.ndarray
    mat: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=float)
        mat = np.asarray(self.mat, dtype=float)
        m = vec.size
        if vec.ndim != 1 or mat.shape != (m, m):
            raise ContractError("summary vector and matrix sizes disagree")
        if m:
            scale = max(float(np.max(np.abs(mat))), 1e-300)
            if float(np.max(np.abs(mat - mat.T))) > 1e-10 * scale:
                raise ContractError("summary matrix is not symmetric")
            mat = 0.5 * (mat + mat.T)
        object.__setattr__(self, "vec", vec)
        object.__setattr__(self, "mat", mat)

    def __len__(self) -> int:
        return self.vec.size


@dataclass(frozen=True)
class GlobalSummary:
    """Sum of all local summaries, with the factored fused support covariance."""

    vec: np.ndarray
    mat: np.ndarray
    chol: np.ndarray
    contributors: frozenset

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply the inverse fused support covariance to ``b``."""
        return cho_solve((self.chol, True), b)


@dataclass(frozen=True)
class VehiclePredictive:
    """Per-vehicle prediction over a query set, with the gamma rows other
    vehicles need to combine cross-vehicle covariance entries."""

    owner: int
    query: RegionSet
    mean: np.ndarray
    cov: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        q = len(self.query)
        if self.mean.shape != (q,) or self.cov.shape != (q, q):
            raise ContractError("mean/cov dimensions must match the query set")
        if self.gamma.shape[0] != q:
            raise ContractError("gamma must have one row per query region")

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


@dataclass(frozen=True)
class Assignment:
    """Map from region id to the vehicle predicting it with minimum variance.

    ``basis_variances`` keeps, per region, the per-vehicle variances the
    decision was based on.  Ties go to the smallest vehicle id.
    """

    map: dict
    basis_variances: dict


def _conditioned_block(data: Dataset, support: SupportSet, hyp: Hyperparameters):
    """Factor the vehicle-local covariance conditioned on the support set.

    Returns ``(k_ud, solve)`` where ``k_ud`` is the support-by-data prior
    covariance and ``solve(b)`` applies the inverse conditioned block.
    """
    if len(data) == 0:
        return np.zeros((len(support), 0)), None
    overlap = np.intersect1d(data.regions.ids, support.regions.ids)
    if overlap.size:
        raise ContractError(f"data regions overlap the support set: {overlap[:5]}")
    k_dd = cov_matrix(data.regions, data.regions, hyp)
    k_ud = cov_matrix(support.regions, data.regions, hyp)
    v = solve_triangular(support.chol, k_ud, lower=True)
    lam = k_dd - v.T @ v
    l, _ = chol_spd(lam, hyp.signal_var)
    return k_ud, lambda b: cho_solve((l, True), b)


def local_summary(data: Dataset, support: SupportSet, hyp: Hyperparameters) -> LocalSummary:
    """Compress one vehicle's observations onto the support set.

    Empty data yields the zero summary.  Data may not contain support
    regions (the conditioned block would be singular); callers drop such
    points beforehand.
    """
    m = len(support)
    if len(data) == 0:
        return LocalSummary(np.zeros(m), np.zeros((m, m)))
    k_ud, solve = _conditioned_block(data, support, hyp)
    vec = k_ud @ solve(data.z - hyp.prior_mean)
    mat = k_ud @ solve(k_ud.T)
    return LocalSummary(vec, 0.5 * (mat + mat.T))


def aggregate_summaries(
    contributions: Sequence, support: SupportSet
) -> GlobalSummary:
    """Fold ``(vehicle id, LocalSummary)`` pairs into the global summary.

    Summation is a plain left fold over the given order; any ordering gives
    the same result up to floating-point reassociation.  Duplicate vehicle
    ids are a protocol violation.
    """
    m = len(support)
    seen = set()
    vec = np.zeros(m)
    mat = support.prior_cov.copy()
    for vid, summary in contributions:
        if vid in seen:
            raise ProtocolError(f"duplicate local summary from vehicle {vid}")
        seen.add(vid)
        if len(summary) != m:
            raise ContractError(f"summary size {len(summary)} != support size {m}")
        vec += summary.vec
        mat += summary.mat
    scale = float(np.max(np.abs(mat))) if m else 1.0
    l, _ = chol_spd(mat, max(scale, 1e-30))
    return GlobalSummary(vec, mat, l, frozenset(seen))


def merge_globals(a: GlobalSummary, b: GlobalSummary, support: SupportSet) -> GlobalSummary:
    """Combine two global summaries built from disjoint vehicle sets."""
    common = a.contributors & b.contributors
    if common:
        raise ProtocolError(f"vehicles contributed twice: {sorted(common)[:5]}")
    vec = a.vec + b.vec
    mat = a.mat + b.mat - support.prior_cov
    scale = float(np.max(np.abs(mat))) if mat.size else 1.0
    l, _ = chol_spd(mat, max(scale, 1e-30))
    return GlobalSummary(vec, mat, l, a.contributors | b.contributors)


def _vehicle_terms(data, local, glob, query, support, hyp):
    """Shared pieces of the per-vehicle predictive (mean, gamma, diagonals)."""
    k_su = cov_matrix(query, support.regions, hyp)
    k_sd = cov_matrix(query, data.regions, hyp)
    k_ud, solve = _conditioned_block(data, support, hyp)
    if solve is None:
        dot_su = np.zeros_like(k_su)
        dot_z = np.zeros(len(query))
        dot_ss_diag = np.zeros(len(query))
        t = None
    else:
        dot_su = k_sd @ solve(k_ud.T)
        dot_z = k_sd @ solve(data.z - hyp.prior_mean)
        t = solve(k_sd.T)
        dot_ss_diag = np.einsum("ij,ji->i", k_sd, t)
    alpha = support.solve(k_su.T).T  # rows: query x support, times inverse prior
    gamma = k_su + alpha @ local.mat - dot_su
    mean = hyp.prior_mean + gamma @ glob.solve(glob.vec) - alpha @ local.vec + dot_z
    return k_su, k_sd, alpha, gamma, mean, dot_su, dot_z, dot_ss_diag, t


def vehicle_predictive(
    vid: int,
    data: Dataset,
    local: LocalSummary,
    glob: GlobalSummary,
    query: RegionSet,
    support: SupportSet,
    hyp: Hyperparameters,
) -> VehiclePredictive:
    """One vehicle's predictive distribution over ``query``.

    Combines the global summary with corrections from the vehicle's own raw
    data; ``local`` must be the summary previously built from ``data`` and
    already folded into ``glob``.  With no data anywhere this reduces
    exactly to the prior.
    """
    if vid not in glob.contributors:
        raise ProtocolError(f"global summary lacks vehicle {vid}'s contribution")
    k_su, k_sd, alpha, gamma, mean, dot_su, dot_z, _, t = _vehicle_terms(
        data, local, glob, query, support, hyp
    )
    k_ss = cov_matrix(query, query, hyp)
    dot_ss = k_sd @ t if t is not None else np.zeros_like(k_ss)
    cov = (
        k_ss
        - gamma @ support.solve(k_su.T)
        + alpha @ dot_su.T
        + gamma @ glob.solve(gamma.T)
        - dot_ss
    )
    return VehiclePredictive(vid, query, mean, 0.5 * (cov + cov.T), gamma)


def vehicle_moments(vid, data, local, glob, query, support, hyp):
    """Mean, variance and gamma rows of :func:`vehicle_predictive`.

    Avoids forming the full query covariance; used for assignment over
    large query sets where only the diagonal is needed.
    """
    if vid not in glob.contributors:
        raise ProtocolError(f"global summary lacks vehicle {vid}'s contribution")
    k_su, _, alpha, gamma, mean, dot_su, _, dot_ss_diag, _ = _vehicle_terms(
        data, local, glob, query, support, hyp
    )
    prior_var = np.full(len(query), hyp.prior_var)
    var = (
        prior_var
        - np.einsum("ij,ij->i", gamma, alpha)
        + np.einsum("ij,ij->i", alpha, dot_su)
        + np.einsum("ij,ij->i", gamma, glob.solve(gamma.T).T)
        - dot_ss_diag
    )
    return mean, var, gamma


def assign_regions(per_vehicle_vars: Mapping[int, Mapping[int, float]]) -> Assignment:
    """Assign each region to the vehicle reporting minimum variance there.

    ``per_vehicle_vars`` maps region id to a complete mapping of vehicle id
    to that vehicle's predictive variance at the region; an incomplete
    report is a protocol violation.  Ties break to the smallest vehicle id.
    """
    vehicles = None
    chosen = {}
    basis = {}
    for region, vars_by_vehicle in per_vehicle_vars.items():
        if vehicles is None:
            vehicles = frozenset(vars_by_vehicle)
            if not vehicles:
                raise ProtocolError("no vehicle variance reports")
        if frozenset(vars_by_vehicle) != vehicles:
            raise ProtocolError(f"incomplete variance reports for region {region}")
        best = min(sorted(vars_by_vehicle), key=lambda k: vars_by_vehicle[k])
        chosen[region] = best
        basis[region] = dict(sorted(vars_by_vehicle.items()))
    return Assignment(chosen, basis)


def consistent_predictive(
    assignment: Assignment,
    preds: Mapping[int, VehiclePredictive],
    glob: GlobalSummary,
    support: SupportSet,
    hyp: Hyperparameters,
) -> GaussianPredictive:
    """Stitch per-vehicle predictions into one consistent joint prediction.

    Each region's mean and same-owner covariance entries come from its
    assigned vehicle; cross-owner covariance entries combine the two
    vehicles' gamma rows through the fused support covariance.  The result
    depends only on the message values, so every vehicle assembles the
    identical prediction.
    """
    if not preds:
        raise ProtocolError("no vehicle predictions supplied")
    vids = sorted(preds)
    query = preds[vids[0]].query
    for vid in vids[1:]:
        if not np.array_equal(preds[vid].query.ids, query.ids):
            raise ContractError("vehicle predictions cover different query sets")
    q = len(query)
    try:
        tau = np.array([assignment.map[int(r)] for r in query.ids], dtype=np.int64)
    except KeyError as exc:
        raise ProtocolError(f"assignment missing for region {exc.args[0]}") from exc
    missing = set(int(v) for v in np.unique(tau)) - set(vids)
    if missing:
        raise ProtocolError(f"no prediction from assigned vehicles {sorted(missing)}")

    mean = np.empty(q)
    gamma_sel = np.empty((q, len(support)))
    for vid in np.unique(tau):
        idx = np.flatnonzero(tau == vid)
        mean[idx] = preds[vid].mean[idx]
        gamma_sel[idx] = preds[vid].gamma[idx]

    k_ss = cov_matrix(query, query, hyp)
    k_su = cov_matrix(query, support.regions, hyp)
    v = solve_triangular(support.chol, k_su.T, lower=True)
    cov = k_ss - v.T @ v + gamma_sel @ glob.solve(gamma_sel.T)
    for vid in np.unique(tau):
        idx = np.flatnonzero(tau == vid)
        cov[np.ix_(idx, idx)] = preds[vid].cov[np.ix_(idx, idx)]
    return GaussianPredictive(query, mean, 0.5 * (cov + cov.T))


def summary_predictive(
    glob: GlobalSummary,
    query: RegionSet,
    support: SupportSet,
    hyp: Hyperparameters,
) -> GaussianPredictive:
    """Predict from the global summary alone (no raw-data corrections).

    This is the fast predictor every vehicle can evaluate after one round
    of summary exchange; with no data anywhere it returns the prior.
    """
    k_su = cov_matrix(query, support.regions, hyp)
    k_ss = cov_matrix(query, query, hyp)
    mean = hyp.prior_mean + k_su @ glob.solve(glob.vec)
    v = solve_triangular(support.chol, k_su.T, lower=True)
    t = solve_triangular(glob.chol, k_su.T, lower=True)
    cov = k_ss - v.T @ v + t.T @ t
    return GaussianPredictive(query, mean, 0.5 * (cov + cov.T))


def summary_moments(glob, query, support, hyp):
    """Mean and variance vectors of :func:`summary_predictive`."""
    k_su = cov_matrix(query, support.regions, hyp)
    mean = hyp.prior_mean + k_su @ glob.solve(glob.vec)
    v = solve_triangular(support.chol, k_su.T, lower=True)
    t = solve_triangular(glob.chol, k_su.T, lower=True)
    var = np.full(len(query), hyp.prior_var) - np.sum(v * v, axis=0) + np.sum(t * t, axis=0)
    return mean, var
