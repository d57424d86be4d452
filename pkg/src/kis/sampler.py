"""MCMC over the unconstrained hyperparameter vector.

The target is log p(D | tau, sigma^2) + log prior on
z = (log m^2, log xi^2, log psi^2, log c^2, log sigma, log eta1,
log lambda_1..p).  The primary backend is gradient-free componentwise
random-walk Metropolis with Robbins-Monro proposal-scale adaptation
toward 0.44 acceptance per coordinate, frozen after warmup.  A
dual-averaging HMC backend is available for small problems.

Hyperparameter states whose kernel-weight constraints fail are treated
as zero-probability (rejected and counted), which leaves the target
density valid wherever the kernel is defined.

One marginal-likelihood evaluation costs O(N^2 p + N^3); the evaluator
caches the kappa-dependent Gram matrices so coordinate moves that leave
kappa (or the whole kernel) unchanged skip the matching rebuild.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from threadpoolctl import threadpool_limits

from . import skim
from .kernels import KernelConstraintError, kernel_matrix
from .likelihood import (
    JITTER_LADDER,
    LOG_2PI,
    Dataset,
    FactorizationError,
    gp_log_marginal,
)
from .skim import GLOBAL_NAMES, SkimConfig
from .trick import GPFit

__all__ = [
    "SamplerConfig",
    "Trace",
    "EffectSummary",
    "target_log_density",
    "run_chains",
    "split_rhat",
    "split_rhat_sequences",
    "rhat_table",
    "posterior_summaries",
    "combine_conditionals",
    "AdaptiveMetropolis",
    "DualAveragingHMC",
]

_ALGORITHMS = ("adaptive-rwm", "hmc")


@dataclass(frozen=True)
class SamplerConfig:
    algorithm: str = "adaptive-rwm"
    chains: int = 4
    warmup: int = 1000
    iterations: int = 1000
    target_accept: float = None
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(f"algorithm must be one of {_ALGORITHMS}")
        if self.chains < 1 or self.warmup < 1 or self.iterations < 1:
            raise ValueError("chains, warmup, and iterations must be >= 1")
        if self.target_accept is not None and not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def resolved_target_accept(self) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.44 if self.algorithm == "adaptive-rwm" else 0.8

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "chains": self.chains,
            "warmup": self.warmup,
            "iterations": self.iterations,
            "target_accept": self.resolved_target_accept,
            "seed": self.seed,
        }


@dataclass
class Trace:
    """Post-warmup draws of one chain."""

    chain_id: int
    seed: tuple
    z: np.ndarray
    log_post: np.ndarray
    accept_stats: np.ndarray
    draws: list
    constraint_rejections: int = 0
    warnings: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.draws)


# --------------------------------------------------------------------------
# target density
# --------------------------------------------------------------------------


def target_log_density(z, dataset: Dataset, config: SkimConfig) -> float:
    """Unnormalized log posterior of the unconstrained hyperparameters.

    Composition of the module contracts: marginal likelihood of the
    state's kernel plus the prior with its transform Jacobian.  Returns
    -inf for kernel-constraint-violating states and for factorization
    failures (treated as rejections).
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    state = skim.constrain(z, p=config.p)
    try:
        kernel = skim.to_kernel(state)
    except KernelConstraintError:
        return -math.inf
    K = kernel_matrix(kernel, dataset.X)
    try:
        res = gp_log_marginal(K, state.sigma2, dataset.Y)
    except FactorizationError:
        return -math.inf
    return res.log_density + skim.log_prior_unconstrained(z, config)


class _SkimTarget:
    """Coordinate-aware evaluator of the target density.

    Caches the Gram matrices G = (kappa * X)(kappa * X)^T and
    G2 = (kappa^2 * X^2)(kappa^2 * X^2)^T, the assembled kernel matrix,
    and rebuilds only what the changed coordinate invalidates:
    sigma touches nothing, the three weight scales reuse G/G2, all
    kappa-affecting coordinates rebuild the Grams.
    """

    _LEVELS = {0: "kappa", 1: "weights", 2: "weights", 3: "weights", 4: "sigma", 5: "kappa"}

    def __init__(self, dataset: Dataset, config: SkimConfig):
        if dataset.p != config.p or dataset.n != config.N:
            raise ValueError("dataset shape disagrees with the prior config")
        self.config = config
        self.X = np.ascontiguousarray(dataset.X)
        self.X2 = self.X * self.X
        self.Y = dataset.Y
        n, p = self.X.shape
        self.n, self.p = n, p
        self._G = np.empty((n, n))
        self._G2 = np.empty((n, n))
        self._K = np.empty((n, n))
        self._Gp = np.empty((n, n))
        self._G2p = np.empty((n, n))
        self._Kp = np.empty((n, n))
        self._A = np.empty((n, n))
        self._Z = np.empty((n, p))
        self._W = np.empty((n, p))
        self._tmp = np.empty((n, n))
        self._eye_idx = np.diag_indices(n)
        self._pending = None
        self.constraint_rejections = 0

    # -- pieces --------------------------------------------------------------

    @staticmethod
    def _parse(z):
        m2, xi2, psi2, c2, sigma, eta1 = np.exp(z[:6])
        lam = np.exp(z[6:])
        eta2 = eta1 * eta1 * math.sqrt(xi2) / m2
        eta3 = eta1 * eta1 * math.sqrt(psi2) / m2
        return m2, c2, sigma, eta1, eta2, eta3, lam

    def _weights_ok(self, eta1, eta2, eta3, c2) -> bool:
        return (
            eta1 * eta1 >= eta2 * eta2
            and eta3 * eta3 >= eta2 * eta2 / 2.0
            and c2 >= eta2 * eta2 / 2.0
        )

    def _build_grams(self, kappa, G, G2):
        np.multiply(self.X, kappa, out=self._Z)
        np.matmul(self._Z, self._Z.T, out=G)
        np.multiply(self.X2, kappa * kappa, out=self._W)
        np.matmul(self._W, self._W.T, out=G2)

    def _assemble(self, K, G, G2, eta1, eta2, eta3, c2):
        w2 = eta2 * eta2 / 2.0
        np.add(G, 1.0, out=K)
        np.multiply(K, K, out=K)
        K *= w2
        np.multiply(G2, eta3 * eta3 - w2, out=self._tmp)
        K += self._tmp
        np.multiply(G, eta1 * eta1 - eta2 * eta2, out=self._tmp)
        K += self._tmp
        K += c2 - w2

    def _loglik(self, K, sigma2) -> float:
        np.copyto(self._A, K)
        self._A[self._eye_idx] += sigma2
        scale = float(np.mean(np.diag(self._A)))
        L = None
        for delta in JITTER_LADDER:
            try:
                M = self._A if delta == 0.0 else self._A + delta * scale * np.eye(self.n)
                L = cholesky(M, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                continue
        if L is None:
            return -math.inf
        a = solve_triangular(L, self.Y, lower=True, check_finite=False)
        return (
            -0.5 * float(a @ a)
            - float(np.sum(np.log(np.diag(L))))
            - 0.5 * self.n * LOG_2PI
        )

    def _evaluate(self, z, level) -> float:
        m2, c2, sigma, eta1, eta2, eta3, lam = self._parse(z)
        if not self._weights_ok(eta1, eta2, eta3, c2):
            self.constraint_rejections += 1
            self._pending = None
            return -math.inf
        if level == "kappa":
            kappa = math.sqrt(m2) * lam / np.sqrt(m2 + (eta1 * lam) ** 2)
            self._build_grams(kappa, self._Gp, self._G2p)
            self._assemble(self._Kp, self._Gp, self._G2p, eta1, eta2, eta3, c2)
            K = self._Kp
        elif level == "weights":
            self._assemble(self._Kp, self._G, self._G2, eta1, eta2, eta3, c2)
            K = self._Kp
        else:
            K = self._K
        ll = self._loglik(K, sigma * sigma)
        if not np.isfinite(ll):
            self._pending = None
            return -math.inf
        self._pending = level
        return ll + skim.log_prior_unconstrained(z, self.config)

    # -- sampler protocol ------------------------------------------------------

    def reset(self, z) -> float:
        """Full evaluation that installs the caches for ``z``."""
        self._pending = None
        lp = self._evaluate(np.asarray(z, dtype=float), "kappa")
        if np.isfinite(lp):
            self.accept()
        return lp

    def propose(self, z, changed: int | None) -> float:
        level = "kappa" if changed is None else self._LEVELS.get(changed, "kappa")
        return self._evaluate(np.asarray(z, dtype=float), level)

    def accept(self):
        if self._pending == "kappa":
            self._G, self._Gp = self._Gp, self._G
            self._G2, self._G2p = self._G2p, self._G2
            self._K, self._Kp = self._Kp, self._K
        elif self._pending == "weights":
            self._K, self._Kp = self._Kp, self._K
        self._pending = None

    def reject(self):
        self._pending = None


class _CallableTarget:
    """Adapter giving plain log-density callables the evaluator protocol."""

    def __init__(self, fn):
        self.fn = fn

    def reset(self, z):
        return self.fn(z)

    def propose(self, z, changed):
        return self.fn(z)

    def accept(self):
        pass

    def reject(self):
        pass


# --------------------------------------------------------------------------
# samplers
# --------------------------------------------------------------------------


@dataclass
class SampleRun:
    z: np.ndarray
    log_post: np.ndarray
    accept_stats: np.ndarray
    scales: np.ndarray


class AdaptiveMetropolis:
    """Componentwise random-walk Metropolis.

    One iteration sweeps every coordinate with a Gaussian proposal;
    per-coordinate scales follow Robbins-Monro toward the target
    acceptance during warmup and are frozen afterwards.

    ``extra_coords``/``extra_repeats`` schedule additional sub-sweeps
    over a coordinate subset within each iteration (each single-site
    update leaves the target invariant, so repeating a block is a valid
    scan).  The chain driver uses this for the global scale
    hyperparameters, which carry most of the posterior curvature.
    """

    def __init__(self, target, dim: int, rng, target_accept: float = 0.44,
                 initial_scale: float = 0.5, extra_coords=(), extra_repeats: int = 0):
        self.target = target if hasattr(target, "propose") else _CallableTarget(target)
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.scales = np.full(dim, float(initial_scale))
        self.extra_coords = tuple(extra_coords)
        self.extra_repeats = int(extra_repeats)

    def run(self, z0, warmup: int, iterations: int) -> SampleRun:
        z = np.asarray(z0, dtype=float).copy()
        lp = self.target.reset(z)
        if not np.isfinite(lp):
            raise ValueError("initial state has zero posterior density")
        total = warmup + iterations
        kept_z = np.empty((iterations, self.dim))
        kept_lp = np.empty(iterations)
        kept_acc = np.empty(iterations)
        log_scales = np.log(self.scales)
        schedule = list(range(self.dim))
        for _ in range(self.extra_repeats):
            schedule += list(self.extra_coords)
        n_updates = len(schedule)
        for it in range(total):
            adapting = it < warmup
            gamma = min(0.25, 2.0 * (it + 1) ** -0.6) if adapting else 0.0
            accepted = 0
            steps = self.rng.standard_normal(n_updates)
            log_us = np.log(self.rng.random(n_updates))
            for k, d in enumerate(schedule):
                z_prop = z.copy()
                z_prop[d] += steps[k] * self.scales[d]
                lp_prop = self.target.propose(z_prop, d)
                if log_us[k] < lp_prop - lp:
                    z, lp = z_prop, lp_prop
                    self.target.accept()
                    acc = 1.0
                    accepted += 1
                else:
                    self.target.reject()
                    acc = 0.0
                if adapting:
                    log_scales[d] += gamma * (acc - self.target_accept)
                    self.scales[d] = math.exp(log_scales[d])
            if not adapting:
                k = it - warmup
                kept_z[k] = z
                kept_lp[k] = lp
                kept_acc[k] = accepted / n_updates
        return SampleRun(kept_z, kept_lp, kept_acc, self.scales.copy())


class DualAveragingHMC:
    """Fixed-length leapfrog HMC with dual-averaged step size.

    ``logdens_and_grad`` maps z to (log density, gradient).  The step
    size adapts toward ``target_accept`` during warmup (dual averaging)
    and is frozen afterwards.  Intended for small dimensions; the
    shrinkage-model wiring uses finite-difference gradients.
    """

    def __init__(self, logdens_and_grad, dim: int, rng, target_accept: float = 0.8,
                 leapfrog_steps: int = 20, initial_step: float = 0.1):
        self.f = logdens_and_grad
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.n_leapfrog = leapfrog_steps
        self.step = initial_step

    def run(self, z0, warmup: int, iterations: int) -> SampleRun:
        z = np.asarray(z0, dtype=float).copy()
        lp, grad = self.f(z)
        if not np.isfinite(lp):
            raise ValueError("initial state has zero posterior density")
        mu = math.log(10.0 * self.step)
        log_eps = math.log(self.step)
        log_eps_bar, h_bar = 0.0, 0.0
        gamma, t0, kappa = 0.05, 10.0, 0.75
        kept_z = np.empty((iterations, self.dim))
        kept_lp = np.empty(iterations)
        kept_acc = np.empty(iterations)
        for it in range(warmup + iterations):
            eps = math.exp(log_eps if it < warmup else log_eps_bar)
            mom = self.rng.standard_normal(self.dim)
            h0 = lp - 0.5 * float(mom @ mom)
            zq, gq = z.copy(), grad.copy()
            mom_q = mom + 0.5 * eps * gq
            lq = lp
            diverged = False
            for step_i in range(self.n_leapfrog):
                zq = zq + eps * mom_q
                lq, gq = self.f(zq)
                if not np.all(np.isfinite(gq)) or not np.isfinite(lq):
                    diverged = True
                    break
                full = 1.0 if step_i < self.n_leapfrog - 1 else 0.5
                mom_q = mom_q + full * eps * gq
            if diverged:
                alpha = 0.0
            else:
                h1 = lq - 0.5 * float(mom_q @ mom_q)
                alpha = min(1.0, math.exp(min(0.0, h1 - h0)))
            if self.rng.random() < alpha:
                z, lp, grad = zq, lq, gq
            if it < warmup:
                t = it + 1
                h_bar = (1 - 1 / (t + t0)) * h_bar + (self.target_accept - alpha) / (t + t0)
                log_eps = mu - math.sqrt(t) / gamma * h_bar
                eta = t ** -kappa
                log_eps_bar = eta * log_eps + (1 - eta) * log_eps_bar
            else:
                k = it - warmup
                kept_z[k] = z
                kept_lp[k] = lp
                kept_acc[k] = alpha
        return SampleRun(kept_z, kept_lp, kept_acc, np.array([math.exp(log_eps_bar)]))


def _fd_logdens_and_grad(fn, h: float = 1e-5):
    """Central finite-difference gradient wrapper for gradient-free targets."""

    def f(z):
        lp = fn(z)
        g = np.zeros_like(z)
        if not np.isfinite(lp):
            return lp, g
        for d in range(z.size):
            hd = h * (1.0 + abs(z[d]))
            zp = z.copy()
            zp[d] += hd
            zm = z.copy()
            zm[d] -= hd
            up, dn = fn(zp), fn(zm)
            if not (np.isfinite(up) and np.isfinite(dn)):
                return lp, np.full_like(z, np.nan)
            g[d] = (up - dn) / (2.0 * hd)
        return lp, g

    return f


# --------------------------------------------------------------------------
# chain driver
# --------------------------------------------------------------------------


def _initial_z(dataset: Dataset, config: SkimConfig, rng, target) -> np.ndarray:
    """Jittered start near unit scales with sigma at sd(Y), adjusted until
    the kernel-weight constraints hold (eta1 is shrunk geometrically)."""
    dim = config.p + 6
    center = np.zeros(dim)
    sd_y = max(float(np.std(dataset.Y)), 1e-3)
    center[4] = math.log(sd_y)
    center[5] = math.log(max(skim.sparsity_scale(config, sd_y), 1e-8))
    z0 = center + rng.uniform(-1.0, 1.0, dim)
    # eta3^2 >= eta2^2/2 reduces to psi2 >= xi2/2 regardless of eta1
    z0[2] = max(z0[2], z0[1] - math.log(2.0) + 0.05)
    for _ in range(200):
        if np.isfinite(target.reset(z0)):
            return z0
        z0[5] -= 0.7
    raise RuntimeError("could not find a valid initial state")


def _run_one_chain(dataset: Dataset, skim_config: SkimConfig,
                   sampler_config: SamplerConfig, chain_id: int) -> Trace:
    seed = (sampler_config.seed, chain_id)
    rng = np.random.default_rng(list(seed))
    with threadpool_limits(limits=1):
        evaluator = _SkimTarget(dataset, skim_config)
        z0 = _initial_z(dataset, skim_config, rng, evaluator)
        if sampler_config.algorithm == "adaptive-rwm":
            kernel = AdaptiveMetropolis(
                evaluator, skim_config.p + 6, rng,
                target_accept=sampler_config.resolved_target_accept,
                extra_coords=range(6), extra_repeats=4,
            )
        else:
            fn = lambda z: target_log_density(z, dataset, skim_config)
            kernel = DualAveragingHMC(
                _fd_logdens_and_grad(fn), skim_config.p + 6, rng,
                target_accept=sampler_config.resolved_target_accept,
            )
        run = kernel.run(z0, sampler_config.warmup, sampler_config.iterations)
    draws = [skim.constrain(row) for row in run.z]
    warnings = []
    if float(np.mean(run.accept_stats)) < 0.01:
        warnings.append("post-warmup acceptance below 1%: chain is not moving")
    rej = evaluator.constraint_rejections if isinstance(evaluator, _SkimTarget) else 0
    return Trace(
        chain_id=chain_id,
        seed=seed,
        z=run.z,
        log_post=run.log_post,
        accept_stats=run.accept_stats,
        draws=draws,
        constraint_rejections=rej,
        warnings=warnings,
    )


def run_chains(dataset: Dataset, skim_config: SkimConfig,
               sampler_config: SamplerConfig, threads: int = 1) -> list[Trace]:
    """Run independent seeded chains; RNG streams derive from
    (seed, chain_id), so results do not depend on scheduling."""
    ids = list(range(sampler_config.chains))
    if threads > 1 and len(ids) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(threads, len(ids)), mp_context=ctx) as pool:
            futures = [
                pool.submit(_run_one_chain, dataset, skim_config, sampler_config, c)
                for c in ids
            ]
            return [f.result() for f in futures]
    return [_run_one_chain(dataset, skim_config, sampler_config, c) for c in ids]


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def split_rhat_sequences(seqs) -> float:
    """Split-R-hat of scalar chains (rows). Each chain is halved; with
    within-sequence variance W and between-sequence variance B the
    statistic is sqrt((((n-1)/n) W + B/n) / W).

    Guards: W = B = 0 (identical constant chains) returns exactly 1.0;
    W = 0 with disagreeing constants returns +inf.
    """
    seqs = np.atleast_2d(np.asarray(seqs, dtype=float))
    m, n = seqs.shape
    if m < 2:
        raise ValueError("need at least 2 chains")
    half = n // 2
    if half < 2:
        raise ValueError("chains too short to split")
    split = np.concatenate([seqs[:, :half], seqs[:, half: 2 * half]], axis=0)
    w = float(np.mean(np.var(split, axis=1, ddof=1)))
    b = half * float(np.var(np.mean(split, axis=1), ddof=1))
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    var_plus = (half - 1) / half * w + b / half
    return math.sqrt(var_plus / w)


def split_rhat(traces, summary) -> float:
    """Split-R-hat of a scalar functional of the hyperparameter state."""
    if len(traces) < 2:
        raise ValueError("need at least 2 chains")
    seqs = np.array([[summary(s) for s in t.draws] for t in traces])
    return split_rhat_sequences(seqs)


def rhat_table(traces) -> dict:
    """Split-R-hat for every sampled coordinate (log scale) and log_post."""
    names = [f"log_{n}" for n in GLOBAL_NAMES]
    p = traces[0].z.shape[1] - 6
    names += [f"log_lambda_{i}" for i in range(1, p + 1)]
    table = {}
    for d, name in enumerate(names):
        table[name] = split_rhat_sequences(np.array([t.z[:, d] for t in traces]))
    table["log_post"] = split_rhat_sequences(np.array([t.log_post for t in traces]))
    return table


# --------------------------------------------------------------------------
# posterior summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectSummary:
    """Across-draw summary of one coefficient: mean of conditional means,
    mean of conditional SDs (the decision statistic), and the SD of the
    conditional means across draws (auxiliary spread, not used for
    selection)."""

    mean: float
    sd: float
    sd_across: float


def combine_conditionals(cond_means, cond_sds) -> EffectSummary:
    cond_means = np.asarray(cond_means, dtype=float)
    cond_sds = np.asarray(cond_sds, dtype=float)
    return EffectSummary(
        mean=float(np.mean(cond_means)),
        sd=float(np.mean(cond_sds)),
        sd_across=float(np.std(cond_means)),
    )


def posterior_summaries(traces, dataset: Dataset, effects) -> dict:
    """Per-effect summaries averaged over every stored draw.

    Each draw's kernel matrix is factorized exactly once and shared by
    all requested effects.
    """
    effects = tuple(effects)
    if not effects:
        return {}
    if not traces or not any(len(t) for t in traces):
        raise ValueError("no draws to summarize")
    for e in effects:
        e.index(dataset.p)  # range check
    means = []
    sds = []
    with threadpool_limits(limits=1):
        for trace in traces:
            for state in trace.draws:
                fit = GPFit.from_data(skim.to_kernel(state), dataset, state.sigma2)
                mu, var = fit.marginal_posteriors(effects)
                means.append(mu)
                sds.append(np.sqrt(var))
    means = np.asarray(means)
    sds = np.asarray(sds)
    return {
        e: combine_conditionals(means[:, k], sds[:, k]) for k, e in enumerate(effects)
    }
