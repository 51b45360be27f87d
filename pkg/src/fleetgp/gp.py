"""Dense Gaussian-process machinery over a set of identified regions.

Regions carry an integer id and a feature vector.  The covariance function
is squared-exponential with per-dimension length-scales plus a noise nugget
that fires on *region identity*, not on feature equality: two distinct
regions sharing coordinates are still distinct random variables.

The exact posterior here (``gp_posterior``) is the pooled-data predictor the
fleet simulator uses as its full-communication reference policy; the sparse
and decentralized predictors live in :mod:`fleetgp.fusion` and
:mod:`fleetgp.pic`.  All functions are pure and all value types are frozen,
so values can be shared freely across threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import ContractError, NumericalError

# Jitter escalation for SPD factorizations: multiples of the signal variance
# added to the diagonal after a bare attempt fails.
JITTER_LEVELS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

LOG_2PI_E = math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel and prior-mean parameters.

    Parameters
    ----------
    signal_var : float
        Signal variance, > 0.
    noise_var : float
        Noise variance added on the diagonal (same-region pairs), >= 0.
    length_scales : array-like
        One positive length-scale per feature dimension.
    prior_mean : float
        Constant prior mean of the (log-scale) field.
    """

    signal_var: float
    noise_var: float
    length_scales: np.ndarray
    prior_mean: float = 0.0

    def __post_init__(self):
        ls = np.asarray(self.length_scales, dtype=float)
        if ls.ndim != 1 or ls.size == 0:
            raise ContractError("length_scales must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ContractError("length_scales must be finite and > 0")
        if not (self.signal_var > 0 and math.isfinite(self.signal_var)):
            raise ContractError("signal_var must be finite and > 0")
        if not (self.noise_var >= 0 and math.isfinite(self.noise_var)):
            raise ContractError("noise_var must be finite and >= 0")
        if not math.isfinite(self.prior_mean):
            raise ContractError("prior_mean must be finite")
        object.__setattr__(self, "length_scales", ls)

    @property
    def dim(self) -> int:
        return self.length_scales.size

    @property
    def prior_var(self) -> float:
        """Marginal prior variance of a single region."""
        return self.signal_var + self.noise_var


@dataclass(frozen=True)
class RegionSet:
    """An ordered set of distinct regions with their feature vectors.

    ``ids`` is a 1-D int array of distinct region identifiers, ``coords`` the
    matching (n, p) feature matrix.
    """

    ids: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        if ids.ndim != 1 or coords.ndim != 2 or ids.shape[0] != coords.shape[0]:
            raise ContractError("ids and coords must align (n,) with (n, p)")
        if np.unique(ids).size != ids.size:
            raise ContractError("duplicate region ids")
        if not np.all(np.isfinite(coords)):
            raise ContractError("coords must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return self.ids.size

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def take(self, indices) -> "RegionSet":
        return RegionSet(self.ids[indices], self.coords[indices])

    @staticmethod
    def empty(dim: int) -> "RegionSet":
        return RegionSet(np.empty(0, dtype=np.int64), np.empty((0, dim)))


@dataclass(frozen=True)
class Dataset:
    """Observed regions together with their log-scale measurements."""

    regions: RegionSet
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size != len(self.regions):
            raise ContractError("z must be 1-D and aligned with regions")
        if not np.all(np.isfinite(z)):
            raise ContractError("measurements must be finite")
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return len(self.regions)

    @staticmethod
    def empty(dim: int) -> "Dataset":
        return Dataset(RegionSet.empty(dim), np.empty(0))


@dataclass(frozen=True)
class GaussianPredictive:
    """Joint Gaussian prediction (mean vector, covariance matrix) over a query set.

    The covariance is validated to be symmetric (1e-10 relative) and stored
    symmetrized; positive semidefiniteness is not verified at construction
    (an O(n^3) check) -- use :meth:`min_eigenvalue` in tests.
    """

    query: RegionSet
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        n = len(self.query)
        if mean.shape != (n,) or cov.shape != (n, n):
            raise ContractError("mean/cov dimensions must match the query set")
        if n:
            scale = max(float(np.max(np.abs(cov))), 1e-300)
            if float(np.max(np.abs(cov - cov.T))) > 1e-10 * scale:
                raise ContractError("covariance is not symmetric within 1e-10 relative")
            cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def __len__(self) -> int:
        return len(self.query)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def take(self, indices) -> "GaussianPredictive":
        """Marginal prediction over a subset of the query (exact for Gaussians)."""
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianPredictive(
            self.query.take(idx), self.mean[idx], self.cov[np.ix_(idx, idx)]
        )

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the covariance (0.0 for an empty query)."""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.cov)[0])


def kernel_value(a_coords, b_coords, same_region: bool, hyp: Hyperparameters) -> float:
    """Squared-exponential covariance between two regions.

    ``same_region`` controls the nugget: the noise variance is added only
    when the two regions are the same region, regardless of coordinates.
    """
    a = np.asarray(a_coords, dtype=float).ravel()
    b = np.asarray(b_coords, dtype=float).ravel()
    if a.size != b.size or a.size != hyp.dim:
        raise ContractError(
            f"feature dimensions disagree: {a.size}, {b.size}, length_scales {hyp.dim}"
        )
    d = (a - b) / hyp.length_scales
    value = hyp.signal_var * math.exp(-0.5 * float(d @ d))
    if same_region:
        value += hyp.noise_var
    return value


def cov_matrix(a: RegionSet, b: RegionSet, hyp: Hyperparameters) -> np.ndarray:
    """Covariance matrix between two region sets, with the nugget on id matches."""
    if a.dim != hyp.dim or b.dim != hyp.dim:
        raise ContractError("region feature dimension does not match length_scales")
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    xa = a.coords / hyp.length_scales
    xb = b.coords / hyp.length_scales
    sq = (
        np.sum(xa * xa, axis=1)[:, None]
        + np.sum(xb * xb, axis=1)[None, :]
        - 2.0 * (xa @ xb.T)
    )
    np.maximum(sq, 0.0, out=sq)
    k = hyp.signal_var * np.exp(-0.5 * sq)
    if hyp.noise_var:
        k += hyp.noise_var * (a.ids[:, None] == b.ids[None, :])
    return k


def chol_spd(matrix: np.ndarray, scale: float):
    """Lower Cholesky factor of an SPD matrix with escalating diagonal jitter.

    Jitter is ``eps * scale`` for eps in ``JITTER_LEVELS`` after a bare
    attempt; exhaustion raises :class:`NumericalError` carrying the attempted
    levels.  Returns ``(L, jitter_used)``.
    """
    n = matrix.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    attempted = []
    for eps in (0.0,) + JITTER_LEVELS:
        attempted.append(eps)
        try:
            m = matrix if eps == 0.0 else matrix + (eps * scale) * np.eye(n)
            return cholesky(m, lower=True), eps * scale
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"SPD factorization failed after jitter escalation (n={n})",
        jitters=attempted,
    )


def gp_posterior(data: Dataset, query: RegionSet, hyp: Hyperparameters) -> GaussianPredictive:
    """Exact GP posterior over ``query`` given ``data``.

    The posterior mean is the prior mean plus the usual data correction, and
    the posterior covariance subtracts the data-explained quadratic form;
    both are computed through a Cholesky factorization of the (nugget-
    regularized) data covariance, never an explicit inverse.  With empty
    data the prior is returned exactly.
    """
    if np.unique(query.ids).size != len(query):
        raise ContractError("query regions must be distinct")
    prior_mean = np.full(len(query), hyp.prior_mean)
    prior_cov = cov_matrix(query, query, hyp)
    if len(data) == 0:
        return GaussianPredictive(query, prior_mean, prior_cov)
    k_dd = cov_matrix(data.regions, data.regions, hyp)
    k_sd = cov_matrix(query, data.regions, hyp)
    l, _ = chol_spd(k_dd, hyp.signal_var)
    alpha = cho_solve((l, True), data.z - hyp.prior_mean)
    v = solve_triangular(l, k_sd.T, lower=True)
    mean = prior_mean + k_sd @ alpha
    cov = prior_cov - v.T @ v
    return GaussianPredictive(query, mean, cov)


def log_gaussian_mean(mean, var):
    """Unbiased original-scale predictor exp(mean + var/2) of a log-Gaussian.

    Overflow saturates to the largest finite float and emits a warning
    instead of returning inf.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0):
        raise ContractError("variance must be non-negative")
    with np.errstate(over="ignore"):
        out = np.exp(mean + 0.5 * var)
    if np.any(np.isinf(out)):
        warnings.warn("log_gaussian_mean overflow; saturating to max float", RuntimeWarning)
        out = np.where(np.isinf(out), np.finfo(float).max, out)
    if out.ndim == 0:
        return float(out)
    return out


def log_gaussian_entropy(pred: GaussianPredictive) -> float:
    """Joint entropy of the original-scale (log-Gaussian) prediction.

    Equals the Gaussian entropy of the log-scale prediction plus the sum of
    the log-scale means.  A singular or indefinite covariance raises
    :class:`NumericalError` rather than returning -inf.
    """
    n = len(pred)
    if n == 0:
        return 0.0
    try:
        l = np.linalg.cholesky(pred.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance is not positive definite: {exc}") from exc
    # log-determinant from the factor diagonal; cofactor expansion would
    # overflow long before it got slow.
    logdet = 2.0 * float(np.sum(np.log(np.diag(l))))
    return 0.5 * (n * LOG_2PI_E + logdet) + float(np.sum(pred.mean))
