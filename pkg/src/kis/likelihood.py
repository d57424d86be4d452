"""Marginal likelihood of the data given kernel hyperparameters.

Three interchangeable evaluators of log p(D | tau, sigma^2):

* :func:`gp_log_marginal`: the production path, an N x N kernel matrix
  plus a Cholesky factorization, O(N^2 p + N^3) for O(p) kernels.
* :func:`naive_log_marginal`: explicit features, factorizing the
  full coefficient-space posterior precision.
* :func:`woodbury_log_marginal`: explicit features with the
  matrix-inversion and determinant lemmas, O(N^2 p^2 + N^3).

The explicit-feature paths exist as oracles and baselines only and are
guarded by a feature cap so benchmark sweeps cannot exhaust memory.
All determinant and quadratic forms go through triangular factors in
log space; explicit inverses are never formed.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from threadpoolctl import threadpool_limits

from .features import phi2_design, phi2_dim
from .kernels import PriorDiag

__all__ = [
    "Dataset",
    "MarginalResult",
    "FactorizationError",
    "JITTER_LADDER",
    "chol_with_jitter",
    "gp_log_marginal",
    "naive_log_marginal",
    "woodbury_log_marginal",
    "BenchmarkCell",
    "benchmark_marginal",
    "fit_loglog_slope",
    "DEFAULT_FEATURE_CAP",
]

LOG_2PI = math.log(2.0 * math.pi)
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
DEFAULT_FEATURE_CAP = 5000


class FactorizationError(RuntimeError):
    """Cholesky failed at every rung of the jitter ladder."""

    def __init__(self, message: str, ladder=JITTER_LADDER):
        super().__init__(message)
        self.ladder = tuple(ladder)


@dataclass(frozen=True)
class Dataset:
    """Observations: design matrix X (N x p), responses Y (N,), and a
    per-column flag recording which covariates were standardized."""

    X: np.ndarray
    Y: np.ndarray
    standardized: np.ndarray = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("need N >= 1 and p >= 1")
        if Y.shape != (X.shape[0],):
            raise ValueError(f"Y must have length N={X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("dataset entries must be finite")
        std = self.standardized
        std = np.zeros(X.shape[1], dtype=bool) if std is None else np.asarray(std, dtype=bool)
        if std.shape != (X.shape[1],):
            raise ValueError("standardized must be one flag per column")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "standardized", std)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MarginalResult:
    log_density: float
    cholesky_ok: bool = True
    jitter_used: float = 0.0


def chol_with_jitter(A: np.ndarray):
    """Lower Cholesky factor with a documented stabilization ladder.

    Tries delta * mean(diag(A)) for delta in ``JITTER_LADDER``; returns
    (L, jitter_added) or raises :class:`FactorizationError` carrying the
    attempted ladder.
    """
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale):
        raise FactorizationError("matrix diagonal is not finite")
    for delta in JITTER_LADDER:
        jitter = delta * scale
        try:
            M = A if jitter == 0.0 else A + jitter * np.eye(A.shape[0])
            L = cholesky(M, lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"Cholesky failed after jitter ladder {JITTER_LADDER} (diag scale {scale:g})"
    )


def gp_log_marginal(K: np.ndarray, sigma2: float, Y) -> MarginalResult:
    """log N(Y | 0, K + sigma^2 I) through a triangular factorization."""
    K = np.asarray(K, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    n = Y.size
    if K.shape != (n, n):
        raise ValueError(f"K must be {n} x {n}")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if not np.allclose(K, K.T, rtol=1e-8, atol=1e-8 * max(1.0, float(np.abs(K).max()))):
        raise ValueError("K must be symmetric")
    A = K + sigma2 * np.eye(n)
    L, jitter = chol_with_jitter(A)
    a = solve_triangular(L, Y, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    ld = -0.5 * float(a @ a) - 0.5 * logdet - 0.5 * n * LOG_2PI
    return MarginalResult(log_density=ld, cholesky_ok=True, jitter_used=jitter)


def _resolve_prior_diag(prior, p: int) -> PriorDiag:
    if isinstance(prior, PriorDiag):
        diag = prior
    elif hasattr(prior, "induced_diag"):
        diag = prior.induced_diag()
    else:
        raise TypeError("prior must be a PriorDiag or expose induced_diag()")
    if diag.p != p:
        raise ValueError(f"prior has p={diag.p}, dataset has p={p}")
    return diag


def _check_cap(p: int, feature_cap: int):
    d = phi2_dim(p)
    if d > feature_cap:
        raise ValueError(
            f"phi2_dim({p}) = {d} exceeds the explicit-feature cap {feature_cap}"
        )
    return d


def naive_log_marginal(prior, dataset: Dataset, sigma2: float,
                       feature_cap: int = DEFAULT_FEATURE_CAP) -> MarginalResult:
    """Marginal likelihood by factorizing the coefficient-space posterior
    precision diag(S)^-1 + Phi^T Phi / sigma^2.

    Requires every prior variance to be strictly positive and p small
    enough to materialize the feature matrix.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    diag = _resolve_prior_diag(prior, dataset.p)
    _check_cap(dataset.p, feature_cap)
    s = diag.variances
    if np.any(s <= 0):
        raise ValueError("naive evaluator needs strictly positive prior variances")
    Phi = phi2_design(dataset.X)
    n, d = Phi.shape
    A = (Phi.T @ Phi) / sigma2
    A[np.diag_indices_from(A)] += 1.0 / s
    L, jitter = chol_with_jitter(A)
    # log det(Sigma_N) = -log det(A);  log det(Sigma_tau) = sum log s
    logdet_post = -2.0 * float(np.sum(np.log(np.diag(L))))
    v = Phi.T @ dataset.Y
    w = solve_triangular(L, v, lower=True, check_finite=False)
    quad = float(w @ w) / sigma2**2
    ld = (
        -0.5 * n * (LOG_2PI + math.log(sigma2))
        - 0.5 * float(dataset.Y @ dataset.Y) / sigma2
        + 0.5 * logdet_post
        - 0.5 * float(np.sum(np.log(s)))
        + 0.5 * quad
    )
    return MarginalResult(log_density=ld, cholesky_ok=True, jitter_used=jitter)


def woodbury_log_marginal(prior, dataset: Dataset, sigma2: float,
                          feature_cap: int = DEFAULT_FEATURE_CAP) -> MarginalResult:
    """Marginal likelihood via the matrix-inversion and determinant lemmas:
    only N x N factorizations, but still materializes the feature matrix."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    diag = _resolve_prior_diag(prior, dataset.p)
    _check_cap(dataset.p, feature_cap)
    s = diag.variances
    if np.any(s <= 0):
        raise ValueError("woodbury evaluator needs strictly positive prior variances")
    Phi = phi2_design(dataset.X)
    n = dataset.n
    Phi *= np.sqrt(s)  # in place; the unscaled features are not needed again
    K = Phi @ Phi.T
    del Phi
    B = np.eye(n) + K / sigma2
    L, jitter = chol_with_jitter(B)
    logdet_B = 2.0 * float(np.sum(np.log(np.diag(L))))
    # quadratic term: Y^T Phi Sigma_N Phi^T Y / sigma^4
    #   with Phi Sigma_N Phi^T = K - K (sigma^2 B)^-1 K
    KY = K @ dataset.Y
    w = solve_triangular(L, KY, lower=True, check_finite=False)
    quad = (float(dataset.Y @ KY) - float(w @ w) / sigma2) / sigma2**2
    ld = (
        -0.5 * n * (LOG_2PI + math.log(sigma2))
        - 0.5 * float(dataset.Y @ dataset.Y) / sigma2
        - 0.5 * logdet_B
        + 0.5 * quad
    )
    return MarginalResult(log_density=ld, cholesky_ok=True, jitter_used=jitter)


# --------------------------------------------------------------------------
# scaling benchmark
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkCell:
    method: str
    N: int
    p: int
    rep: int
    seconds: float
    bytes_peak_estimate: int

    @property
    def skipped(self) -> bool:
        return not np.isfinite(self.seconds)


_METHOD_CAPS = {"kis": None, "woodbury": 400_000, "naive": DEFAULT_FEATURE_CAP}


def _benchmark_state(p: int):
    from .skim import HyperState

    return HyperState(
        m2=1.0, xi2=1.0, psi2=1.0, c2=1.0, sigma=1.0, eta1=0.5, lam=np.ones(p)
    )


def benchmark_marginal(method: str, N: int, p_grid, repetitions: int = 3,
                       seed: int = 0) -> list[BenchmarkCell]:
    """Wall-clock and peak-allocation profile of one evaluator across ``p``.

    Each cell times a full evaluation of log p(D | tau, sigma^2) for a
    fixed valid hyperparameter state on fresh seeded data.  Infeasible
    cells (feature cap exceeded) are emitted with NaN seconds as a
    skip marker.  Memory is measured on one extra untimed repetition.
    BLAS threading is pinned to one thread for stable measurements.
    """
    if method not in _METHOD_CAPS:
        raise ValueError(f"unknown method {method!r}; pick from {sorted(_METHOD_CAPS)}")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    with threadpool_limits(limits=1):
        return _benchmark_marginal(method, N, p_grid, repetitions, seed)


def _benchmark_marginal(method, N, p_grid, repetitions, seed):
    from .skim import to_kernel

    cap = _METHOD_CAPS[method]
    cells = []
    for p in p_grid:
        p = int(p)
        if cap is not None and phi2_dim(p) > cap:
            cells.append(BenchmarkCell(method, N, p, 0, float("nan"), 0))
            continue
        rng = np.random.default_rng([seed, p])
        X = rng.normal(0.0, 1.0, (N, p))
        Y = rng.normal(0.0, 1.0, N)
        ds = Dataset(X, Y)
        tau = _benchmark_state(p)
        sigma2 = tau.sigma2

        if method == "kis":
            kernel = to_kernel(tau)

            def run():
                return gp_log_marginal(kernel.pairwise(X), sigma2, Y)

        elif method == "woodbury":

            def run():
                return woodbury_log_marginal(tau, ds, sigma2, feature_cap=cap)

        else:

            def run():
                return naive_log_marginal(tau, ds, sigma2, feature_cap=cap)

        run()  # warm caches / lazy imports outside the timed region
        for rep in range(repetitions):
            t0 = time.perf_counter()
            run()
            seconds = time.perf_counter() - t0
            cells.append(BenchmarkCell(method, N, p, rep, seconds, 0))
        tracemalloc.start()
        run()
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        cells[-1] = BenchmarkCell(method, N, p, repetitions - 1,
                                  cells[-1].seconds, int(peak))
    return cells


def fit_loglog_slope(cells) -> float:
    """Least-squares slope of log(median seconds) against log(p)."""
    by_p: dict[int, list[float]] = {}
    for c in cells:
        if not c.skipped:
            by_p.setdefault(c.p, []).append(c.seconds)
    if len(by_p) < 2:
        raise ValueError("need at least two feasible grid points")
    ps = sorted(by_p)
    med = [float(np.median(by_p[p])) for p in ps]
    slope, _ = np.polyfit(np.log(ps), np.log(med), 1)
    return float(slope)
