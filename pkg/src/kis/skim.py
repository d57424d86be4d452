"""Hierarchical shrinkage prior over kernel hyperparameters.

The prior couples a global scale (half-Cauchy, centered on the expected
sparsity level) with per-variable local half-Cauchy scales whose effect
is truncated at a learned slab width, so that nonzero main effects
saturate at scale ``m``.  Interaction variances are products of the
per-variable shrinkage factors, which softly enforces strong hierarchy.

States are immutable values; the sampler works on the unconstrained
log-scale vector ``z = (log m^2, log xi^2, log psi^2, log c^2, log sigma,
log eta1, log lambda_1..p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import InteractionKernel, PriorDiag

__all__ = [
    "SkimConfig",
    "HyperState",
    "GLOBAL_NAMES",
    "sparsity_scale",
    "sample_prior",
    "unconstrain",
    "constrain",
    "log_prior_unconstrained",
    "to_kernel",
    "invgamma_logpdf",
    "half_cauchy_logpdf",
    "half_normal_logpdf",
]

GLOBAL_NAMES = ("m2", "xi2", "psi2", "c2", "sigma", "eta1")


@dataclass(frozen=True)
class SkimConfig:
    """Prior hyperparameters. Defaults: all inverse-gamma shapes/scales
    (2, 1), half-normal noise scale 5, expected sparsity 5."""

    p: int
    N: int
    s: float = 5.0
    alpha1: float = 2.0
    beta1: float = 1.0
    alpha2: float = 2.0
    beta2: float = 1.0
    alpha3: float = 2.0
    beta3: float = 1.0
    alpha4: float = 2.0
    beta4: float = 1.0
    alpha5: float = 5.0

    def __post_init__(self):
        if not 0 < self.s < self.p:
            raise ValueError(f"need 0 < s < p, got s={self.s}, p={self.p}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        params = (
            self.alpha1, self.beta1, self.alpha2, self.beta2, self.alpha3,
            self.beta3, self.alpha4, self.beta4, self.alpha5,
        )
        if any(v <= 0 for v in params):
            raise ValueError("all shape/scale hyperparameters must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "p", "N", "s", "alpha1", "beta1", "alpha2", "beta2",
            "alpha3", "beta3", "alpha4", "beta4", "alpha5",
        )}


def sparsity_scale(config: SkimConfig, sigma: float) -> float:
    """Global-shrinkage scale targeting ``s`` expected nonzero mains:
    (s / (p - s)) * sigma / sqrt(N)."""
    return config.s / (config.p - config.s) * sigma / math.sqrt(config.N)


@dataclass(frozen=True)
class HyperState:
    """One draw of the kernel hyperparameters.

    Stored fields are the sampled constrained values; the kernel-facing
    quantities (kappa, eta2, eta3) are derived:

        kappa_i = m lambda_i / sqrt(m^2 + eta1^2 lambda_i^2)
        eta2    = (eta1^2 / m^2) xi
        eta3    = (eta1^2 / m^2) psi
    """

    m2: float
    xi2: float
    psi2: float
    c2: float
    sigma: float
    eta1: float
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        vals = (self.m2, self.xi2, self.psi2, self.c2, self.sigma, self.eta1)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("hyperparameters must be finite and positive")
        if lam.ndim != 1 or lam.size < 1 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("lam must be a positive finite vector")
        object.__setattr__(self, "lam", lam)

    @property
    def p(self) -> int:
        return self.lam.size

    @property
    def m(self) -> float:
        return math.sqrt(self.m2)

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def kappa(self) -> np.ndarray:
        return self.m * self.lam / np.sqrt(self.m2 + self.eta1**2 * self.lam**2)

    @property
    def eta2(self) -> float:
        return self.eta1**2 / self.m2 * math.sqrt(self.xi2)

    @property
    def eta3(self) -> float:
        return self.eta1**2 / self.m2 * math.sqrt(self.psi2)

    def induced_diag(self) -> PriorDiag:
        """Coefficient prior variances: eta1^2 k_i^2 on mains, eta2^2 k_i^2
        k_j^2 on pairs, eta3^2 k_i^4 on quads, c^2 on the intercept."""
        k2 = self.kappa**2
        ii, jj = np.triu_indices(self.p, 1)
        return PriorDiag.build(
            self.p,
            intercept=self.c2,
            mains=self.eta1**2 * k2,
            pairs=self.eta2**2 * k2[ii] * k2[jj],
            quads=self.eta3**2 * k2 * k2,
        )

    def to_dict(self) -> dict:
        d = {name: float(getattr(self, name)) for name in GLOBAL_NAMES}
        d["lam"] = self.lam.tolist()
        return d


def unconstrain(state: HyperState) -> np.ndarray:
    """Log-transform a state to the sampler's working vector."""
    head = [math.log(getattr(state, name)) for name in GLOBAL_NAMES]
    return np.concatenate([head, np.log(state.lam)])


def constrain(z, p: int | None = None) -> HyperState:
    """Inverse of :func:`unconstrain`."""
    z = np.asarray(z, dtype=float)
    if p is not None and z.size != p + 6:
        raise ValueError(f"z must have length p + 6 = {p + 6}")
    if z.size < 7:
        raise ValueError("z must have length p + 6 with p >= 1")
    head = np.exp(z[:6])
    return HyperState(
        m2=head[0], xi2=head[1], psi2=head[2], c2=head[3],
        sigma=head[4], eta1=head[5], lam=np.exp(z[6:]),
    )


# --------------------------------------------------------------------------
# densities (closed forms; scipy.stats serves as the test oracle)
# --------------------------------------------------------------------------


def invgamma_logpdf(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


def half_cauchy_logpdf(x, scale: float):
    x = np.asarray(x, dtype=float)
    out = math.log(2.0 / math.pi) - math.log(scale) - np.log1p((x / scale) ** 2)
    return float(out) if out.ndim == 0 else out


def half_normal_logpdf(x: float, scale: float) -> float:
    if x < 0:
        return -math.inf
    return 0.5 * math.log(2.0 / math.pi) - math.log(scale) - x * x / (2.0 * scale * scale)


def sample_prior(config: SkimConfig, rng) -> HyperState:
    """Draw a state from the prior. ``rng`` is a seed or numpy Generator;
    the draw order is fixed, so equal seeds give identical states."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    def inv_gamma(a, b):
        return 1.0 / rng.gamma(a, 1.0 / b)

    m2 = inv_gamma(config.alpha1, config.beta1)
    xi2 = inv_gamma(config.alpha2, config.beta2)
    psi2 = inv_gamma(config.alpha4, config.beta4)
    c2 = inv_gamma(config.alpha3, config.beta3)
    sigma = abs(rng.normal(0.0, config.alpha5))
    phi = sparsity_scale(config, sigma)
    eta1 = phi * abs(rng.standard_cauchy())
    lam = np.abs(rng.standard_cauchy(config.p))
    return HyperState(m2=m2, xi2=xi2, psi2=psi2, c2=c2, sigma=sigma, eta1=eta1, lam=lam)


def log_prior_unconstrained(z, config: SkimConfig, grad: bool = False):
    """Log prior density of the unconstrained vector, including the
    exp-transform Jacobian; finite for all finite z.

    With ``grad=True`` also returns the analytic gradient (checked
    against central finite differences in the tests).
    """
    z = np.asarray(z, dtype=float)
    if z.size != config.p + 6:
        raise ValueError(f"z must have length p + 6 = {config.p + 6}")
    m2, xi2, psi2, c2, sigma, eta1 = np.exp(z[:6])
    lam = np.exp(z[6:])
    phi = sparsity_scale(config, sigma)

    ig_pairs = (
        (m2, config.alpha1, config.beta1),
        (xi2, config.alpha2, config.beta2),
        (psi2, config.alpha4, config.beta4),
        (c2, config.alpha3, config.beta3),
    )
    lp = sum(invgamma_logpdf(x, a, b) for x, a, b in ig_pairs)
    lp += half_normal_logpdf(sigma, config.alpha5)
    lp += half_cauchy_logpdf(eta1, phi)
    lp += float(np.sum(half_cauchy_logpdf(lam, 1.0)))
    lp += float(z.sum())  # log-Jacobian of the exp transform
    if not grad:
        return lp

    g = np.empty_like(z)
    g[0] = -config.alpha1 + config.beta1 / m2
    g[1] = -config.alpha2 + config.beta2 / xi2
    g[2] = -config.alpha4 + config.beta4 / psi2
    g[3] = -config.alpha3 + config.beta3 / c2
    u = (eta1 / phi) ** 2
    g[4] = 1.0 - sigma**2 / config.alpha5**2 - 1.0 + 2.0 * u / (1.0 + u)
    g[5] = 1.0 - 2.0 * u / (1.0 + u)
    lam2 = lam * lam
    g[6:] = 1.0 - 2.0 * lam2 / (1.0 + lam2)
    return lp, g


def to_kernel(tau: HyperState) -> InteractionKernel:
    """O(p) kernel of a hyperparameter state.

    Raises :class:`~kis.kernels.KernelConstraintError` when the implied
    component weights are negative (eta1^2 < eta2^2, eta3^2 < eta2^2/2,
    or c^2 < eta2^2/2); the sampler treats such states as rejected.
    """
    return kernels.skim_kernel(tau.eta1, tau.eta2, tau.eta3, tau.c2, tau.kappa)
