"""Centralized blocked sparse GP predictors.

The data are partitioned into per-vehicle blocks.  Conditioned on the
support set, blocks are treated as independent (the block-diagonal
``lambda`` matrices), while the low-rank cross-block covariance flows
through the support set.  ``pic_predictive`` keeps the exact kernel between
a query region and the block it is assigned to (PIC); ``pitc_predictive``
uses the low-rank kernel everywhere (PITC).

These centralized predictors are the correctness references for the
decentralized protocol in :mod:`fleetgp.fusion`: the consistent combined
prediction there must match ``pic_predictive`` entry for entry, and the
summary-only predictor must match ``pitc_predictive``.  The blocked inverse
is always applied through the matrix-inversion-lemma route (never a dense
factorization of the full data covariance); ``woodbury_residual`` checks
that route against a brute-force dense inverse at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ContractError, NumericalError
from .fusion import Assignment, SupportSet
from .gp import GaussianPredictive, Hyperparameters, RegionSet, chol_spd, cov_matrix

# woodbury_residual is O(|D|^3) dense; refuse beyond desk scale.
MAX_DENSE_DATA = 80


@dataclass(frozen=True)
class PicOperator:
    """Factored blocked representation of the data covariance.

    ``blocks`` maps a block id (vehicle id) to its observed regions;
    ``chols`` holds the Cholesky factor of each non-empty block's
    support-conditioned covariance; ``fused_cov``/``fused_chol`` are the
    support prior covariance augmented by all blocks (the same matrix the
    decentralized global summary produces); ``block_of`` maps every observed
    region id to its block id.
    """

    blocks: Mapping[int, RegionSet]
    support: SupportSet
    hyp: Hyperparameters
    chols: Mapping[int, np.ndarray]
    k_ud: Mapping[int, np.ndarray]
    fused_cov: np.ndarray
    fused_chol: np.ndarray
    block_of: Mapping[int, int]

    @staticmethod
    def build(
        blocks: Mapping[int, RegionSet], support: SupportSet, hyp: Hyperparameters
    ) -> "PicOperator":
        m = len(support)
        seen = {}
        chols = {}
        k_ud = {}
        fused = support.prior_cov.copy()
        for bid in sorted(blocks):
            if bid < 0:
                raise ContractError("block ids must be non-negative")
            regions = blocks[bid]
            for rid in regions.ids:
                rid = int(rid)
                if rid in seen:
                    raise ContractError(
                        f"region {rid} appears in blocks {seen[rid]} and {bid}"
                    )
                seen[rid] = bid
            if np.intersect1d(regions.ids, support.regions.ids).size:
                raise ContractError(f"block {bid} overlaps the support set")
            if len(regions) == 0:
                continue
            k = cov_matrix(support.regions, regions, hyp)
            v = solve_triangular(support.chol, k, lower=True)
            lam = cov_matrix(regions, regions, hyp) - v.T @ v
            try:
                l, _ = chol_spd(lam, hyp.signal_var)
            except NumericalError as exc:
                raise NumericalError(
                    f"conditioned block {bid} is singular", jitters=exc.jitters
                ) from exc
            chols[bid] = l
            k_ud[bid] = k
            fused += k @ cho_solve((l, True), k.T)
        fused = 0.5 * (fused + fused.T)
        scale = float(np.max(np.abs(fused))) if m else 1.0
        fused_chol, _ = chol_spd(fused, max(scale, 1e-30))
        return PicOperator(
            dict(blocks), support, hyp, chols, k_ud, fused, fused_chol, seen
        )

    def data_size(self) -> int:
        return sum(len(r) for r in self.blocks.values())

    def _solve_block(self, bid: int, b: np.ndarray) -> np.ndarray:
        return cho_solve((self.chols[bid], True), b)

    def _fused_solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve((self.fused_chol, True), b)


def _tau_lookup(tau, query: RegionSet) -> np.ndarray:
    mapping = tau.map if isinstance(tau, Assignment) else tau
    try:
        return np.array([mapping[int(r)] for r in query.ids], dtype=np.int64)
    except KeyError as exc:
        raise ContractError(f"assignment missing for query region {exc.args[0]}") from exc


def _blocked_predict(op: PicOperator, z: Mapping[int, np.ndarray], query, tau_arr):
    """Shared PIC/PITC evaluation; ``tau_arr[i] == bid`` marks exact rows."""
    hyp = op.hyp
    support = op.support
    q = len(query)
    k_ss = cov_matrix(query, query, hyp)
    k_su = cov_matrix(query, support.regions, hyp)
    alpha = support.solve(k_su.T).T  # query x support, through the prior inverse

    active = [bid for bid in sorted(op.blocks) if len(op.blocks[bid])]
    mean = np.full(q, hyp.prior_mean)
    if not active:
        return GaussianPredictive(query, mean, k_ss)

    u = {}
    fused_vec = np.zeros(len(support))
    for bid in active:
        zb = np.asarray(z[bid], dtype=float)
        if zb.shape != (len(op.blocks[bid]),):
            raise ContractError(f"measurements for block {bid} misaligned")
        u[bid] = op._solve_block(bid, zb - hyp.prior_mean)
        fused_vec += op.k_ud[bid] @ u[bid]
    g = op._fused_solve(fused_vec)

    gamma_rows = {}
    h = {}
    cov = k_ss.copy()
    fused_cross = np.zeros((len(support), q))
    for bid in active:
        regions = op.blocks[bid]
        rows = k_su @ support.solve(op.k_ud[bid])  # low-rank kernel to this block
        exact = np.flatnonzero(tau_arr == bid)
        if exact.size:
            rows[exact] = cov_matrix(query.take(exact), regions, hyp)
        gamma_rows[bid] = rows
        w = u[bid] - op._solve_block(bid, op.k_ud[bid].T @ g)
        mean += rows @ w
        h[bid] = op._solve_block(bid, rows.T)
        cov -= rows @ h[bid]
        fused_cross += op.k_ud[bid] @ h[bid]
    cov += fused_cross.T @ op._fused_solve(fused_cross)
    return GaussianPredictive(query, mean, 0.5 * (cov + cov.T))


def pic_predictive(
    op: PicOperator,
    z: Mapping[int, np.ndarray],
    query: RegionSet,
    tau,
) -> GaussianPredictive:
    """Blocked sparse prediction with exact within-assigned-block kernels.

    ``z`` maps block id to that block's log-measurement vector; ``tau``
    (an :class:`~fleetgp.fusion.Assignment` or plain dict) must cover every
    query region.  With a single block containing all assignments this
    collapses algebraically to the exact GP posterior.
    """
    return _blocked_predict(op, z, query, _tau_lookup(tau, query))


def pitc_predictive(
    op: PicOperator,
    z: Mapping[int, np.ndarray],
    query: RegionSet,
) -> GaussianPredictive:
    """Blocked sparse prediction with the low-rank kernel everywhere.

    The centralized counterpart of the summary-only decentralized
    predictor; equals it entry for entry up to round-off.
    """
    # -1 never matches a block id, so no row gets the exact kernel.
    return _blocked_predict(op, z, query, np.full(len(query), -1, dtype=np.int64))


def woodbury_residual(op: PicOperator) -> float:
    """Max-abs mismatch of the lemma-based blocked inverse, relative scale.

    Builds the full data covariance (low-rank cross terms plus the
    block-diagonal conditioned blocks), inverts it densely, and compares
    with the matrix-inversion-lemma route used by the predictors.  Returns
    ``max|difference| / max(1, max|dense inverse|)``; 0.0 for empty data.
    """
    n = op.data_size()
    if n == 0:
        return 0.0
    if n > MAX_DENSE_DATA:
        raise ContractError(f"dense check limited to {MAX_DENSE_DATA} points, got {n}")
    active = [bid for bid in sorted(op.blocks) if len(op.blocks[bid])]
    sizes = [len(op.blocks[bid]) for bid in active]
    offs = np.concatenate([[0], np.cumsum(sizes)])

    k_du = np.vstack([op.k_ud[bid].T for bid in active])  # data x support
    gamma_dd = k_du @ op.support.solve(k_du.T)
    dense = gamma_dd.copy()
    lam_inv = np.zeros((n, n))
    for i, bid in enumerate(active):
        sl = slice(offs[i], offs[i + 1])
        regions = op.blocks[bid]
        v = solve_triangular(op.support.chol, op.k_ud[bid], lower=True)
        dense[sl, sl] += cov_matrix(regions, regions, op.hyp) - v.T @ v
        lam_inv[sl, sl] = op._solve_block(bid, np.eye(sizes[i]))
    try:
        dense_inv = np.linalg.inv(dense)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"dense inversion failed: {exc}") from exc

    t = lam_inv @ k_du
    lemma = lam_inv - t @ op._fused_solve(t.T)
    resid = float(np.max(np.abs(dense_inv - lemma)))
    return resid / max(1.0, float(np.max(np.abs(dense_inv))))
