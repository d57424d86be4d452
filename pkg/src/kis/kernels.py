"""Two-way (and higher-order) interaction kernels.

Every kernel here is a weighted sum of polynomial kernels

    k_poly(x, y; c, d) = (x.y + c)^d

plus optional single-pair product terms, evaluated in O(p) per pair of
points.  Each such kernel is equivalent to a quadratic form of the
degree-2 feature map with a *diagonal* coefficient prior, and the
diagonal is available in closed form (:meth:`InteractionKernel.induced_diag`).

Kernels evaluate in O(1) at sparse unit-combination probe points
(``e_i``, ``-e_i``, ``e_i + e_j``, origin) given per-coordinate weights
precomputed at construction; this is what makes per-coefficient
posterior recovery cheap downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import EffectId, phi2_dim

__all__ = [
    "KernelConstraintError",
    "InfeasibleTargetError",
    "PriorDiag",
    "TwoWayKernelSpec",
    "InteractionKernel",
    "RWaySpec",
    "poly_kernel",
    "two_way_eval",
    "induced_prior_diag",
    "solve_spec_from_diag",
    "block_kernel",
    "block_kernel_eval",
    "skim_kernel",
    "skim_kernel_eval",
    "kernel_matrix",
    "cross_kernel_at_probes",
    "probe_unit",
    "probe_neg",
    "probe_sum",
    "probe_dense",
    "PROBE_ORIGIN",
    "r_way_eval",
    "poly_induced_prior",
]


class KernelConstraintError(ValueError):
    """A kernel-weight nonnegativity constraint is violated."""


class InfeasibleTargetError(ValueError):
    """No kernel of the requested family induces the target prior diagonal."""

    def __init__(self, message: str, equation: str = ""):
        super().__init__(message)
        self.equation = equation


# --------------------------------------------------------------------------
# prior diagonal
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorDiag:
    """Diagonal prior variances indexed by the canonical effect order."""

    p: int
    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.shape != (phi2_dim(self.p),):
            raise ValueError(
                f"variances must have length phi2_dim({self.p}) = {phi2_dim(self.p)}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("variances must be finite")
        if np.any(v < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "variances", v)

    @classmethod
    def build(cls, p, *, intercept, mains, pairs, quads) -> "PriorDiag":
        """Assemble from per-block values (scalars broadcast)."""
        n_pairs = p * (p - 1) // 2
        v = np.concatenate(
            [
                [float(intercept)],
                np.broadcast_to(np.asarray(mains, dtype=float), (p,)),
                np.broadcast_to(np.asarray(pairs, dtype=float), (n_pairs,)),
                np.broadcast_to(np.asarray(quads, dtype=float), (p,)),
            ]
        )
        return cls(p, v)

    def __getitem__(self, effect: EffectId) -> float:
        return float(self.variances[effect.index(self.p)])

    def __add__(self, other: "PriorDiag") -> "PriorDiag":
        if self.p != other.p:
            raise ValueError("dimension mismatch")
        return PriorDiag(self.p, self.variances + other.variances)

    @property
    def intercept(self) -> float:
        return float(self.variances[0])

    @property
    def mains(self) -> np.ndarray:
        return self.variances[1 : 1 + self.p]

    @property
    def pairs(self) -> np.ndarray:
        start = 1 + self.p
        return self.variances[start : start + self.p * (self.p - 1) // 2]

    @property
    def quads(self) -> np.ndarray:
        return self.variances[1 + self.p + self.p * (self.p - 1) // 2 :]


# --------------------------------------------------------------------------
# probes: sparse unit combinations, as tuples of (1-based index, value)
# --------------------------------------------------------------------------

PROBE_ORIGIN: tuple = ()


def probe_unit(i: int) -> tuple:
    return ((int(i), 1.0),)


def probe_neg(i: int) -> tuple:
    return ((int(i), -1.0),)


def probe_sum(i: int, j: int) -> tuple:
    if not i < j:
        raise ValueError("probe_sum needs i < j")
    return ((int(i), 1.0), (int(j), 1.0))


def probe_dense(probe, p: int) -> np.ndarray:
    """Dense vector for a sparse probe (reference/testing use)."""
    x = np.zeros(p)
    for i, v in probe:
        if not 1 <= i <= p:
            raise ValueError(f"probe index {i} out of range for p={p}")
        x[i - 1] += v
    return x


# --------------------------------------------------------------------------
# kernel engine
# --------------------------------------------------------------------------


class InteractionKernel:
    """Weighted sum of degree-2 polynomial components plus linear,
    quadratic-in-squares, constant, and single-pair parts:

        k(x, y) = sum_m w_m (sum_i q_mi x_i y_i + 1)^2
                  + sum_i lin_i x_i y_i + sum_i sq_i x_i^2 y_i^2
                  + sum_(i,j) nu_ij x_i x_j y_i y_j + const

    Generic two-way kernels use unit weights with q = lambda^2; the
    block/shrinkage kernels use one weighted component.  Immutable after
    construction; all evaluation methods are reentrant.
    """

    def __init__(self, weights, q, lin, sq, const, pair_terms=(), diag_override=None):
        self.weights = np.atleast_1d(np.asarray(weights, dtype=float))
        self.lin = np.asarray(lin, dtype=float)
        self.q = np.asarray(q, dtype=float).reshape(len(self.weights), self.lin.size)
        self.sq = np.asarray(sq, dtype=float)
        self.const = float(const)
        self.pair_terms = tuple(
            (int(i), int(j), float(nu)) for i, j, nu in pair_terms
        )
        p = self.lin.size
        if self.sq.size != p or (self.q.size and self.q.shape[1] != p):
            raise ValueError("component dimensions disagree")
        arrays = (self.weights, self.q, self.lin, self.sq)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(self.const):
            raise ValueError("kernel components must be finite")
        if any(np.any(a < 0) for a in arrays):
            raise KernelConstraintError("component weights must be nonnegative")
        for i, j, nu in self.pair_terms:
            if not 1 <= i < j <= p:
                raise ValueError(f"pair term ({i}, {j}) out of range")
            if nu < 0:
                raise KernelConstraintError("pair weights must be nonnegative")
        if self.weights.sum() + self.const < -1e-12:
            raise KernelConstraintError("induced intercept variance is negative")
        self._diag = diag_override
        # per-pair sums for O(1) probe lookups
        self._nu = {}
        for i, j, nu in self.pair_terms:
            self._nu[(i, j)] = self._nu.get((i, j), 0.0) + nu

    @property
    def p(self) -> int:
        return self.lin.size

    # -- dense evaluation ---------------------------------------------------

    def __call__(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != (self.p,) or y.shape != (self.p,):
            raise ValueError(f"inputs must have length p={self.p}")
        acc = self.const + float(self.lin @ (x * y)) + float(self.sq @ (x * x * y * y))
        if self.weights.size:
            s = self.q @ (x * y)
            acc += float(self.weights @ (s + 1.0) ** 2)
        for i, j, nu in self.pair_terms:
            acc += nu * x[i - 1] * x[j - 1] * y[i - 1] * y[j - 1]
        return acc

    def pairwise(self, X, Z=None) -> np.ndarray:
        """Kernel matrix between rows of X and Z (Z defaults to X)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=float))
        if X.shape[1] != self.p or Z.shape[1] != self.p:
            raise ValueError(f"inputs must have p={self.p} columns")
        K = np.full((X.shape[0], Z.shape[0]), self.const)
        K += (X * self.lin) @ Z.T
        K += (X * X * self.sq) @ (Z * Z).T
        for w, qm in zip(self.weights, self.q):
            S = (X * qm) @ Z.T
            S += 1.0
            K += w * S * S
        for i, j, nu in self.pair_terms:
            K += nu * np.outer(X[:, i - 1] * X[:, j - 1], Z[:, i - 1] * Z[:, j - 1])
        return K

    # -- sparse-probe evaluation (O(1) per entry in p) ----------------------

    def _probe_parts(self, probe):
        idx = np.array([i - 1 for i, _ in probe], dtype=int)
        vals = np.array([v for _, v in probe], dtype=float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.p):
            raise ValueError("probe index out of range")
        return idx, vals

    def probe_value(self, probe, x) -> float:
        """k(probe, x) touching only the probe's coordinates of x."""
        idx, vals = self._probe_parts(probe)
        x = np.asarray(x, dtype=float)
        xs = x[idx]
        acc = self.const
        acc += float((self.lin[idx] * vals) @ xs)
        acc += float((self.sq[idx] * vals * vals) @ (xs * xs))
        if self.weights.size:
            s = self.q[:, idx] @ (vals * xs) if idx.size else np.zeros(len(self.weights))
            acc += float(self.weights @ (s + 1.0) ** 2)
        acc += self._pair_probe_term(probe, dict(zip((i for i, _ in probe), xs)))
        return acc

    def _pair_probe_term(self, probe, xmap) -> float:
        if not self._nu:
            return 0.0
        acc = 0.0
        pmap = dict(probe)
        for (i, j), nu in self._nu.items():
            if i in pmap and j in pmap:
                acc += nu * pmap[i] * pmap[j] * xmap[i] * xmap[j]
        return acc

    def probe_cross(self, probes, X) -> np.ndarray:
        """Rows k(probe, x_n) for each probe; vectorized over observations."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((len(probes), X.shape[0]))
        for r, probe in enumerate(probes):
            idx, vals = self._probe_parts(probe)
            Xs = X[:, idx]
            row = np.full(X.shape[0], self.const)
            row += Xs @ (self.lin[idx] * vals)
            row += (Xs * Xs) @ (self.sq[idx] * vals * vals)
            if self.weights.size:
                S = (Xs * vals) @ self.q[:, idx].T + 1.0
                row += (S * S) @ self.weights
            if self._nu:
                pmap = dict(probe)
                for (i, j), nu in self._nu.items():
                    if i in pmap and j in pmap:
                        row += nu * pmap[i] * pmap[j] * X[:, i - 1] * X[:, j - 1]
            out[r] = row
        return out

    def probe_gram(self, probes) -> np.ndarray:
        """Kernel among probes; symmetric by construction."""
        n = len(probes)
        G = np.empty((n, n))
        for a in range(n):
            pa = dict(probes[a])
            for b in range(a, n):
                pb = dict(probes[b])
                s_lin = s_sq = 0.0
                s_poly = np.zeros(len(self.weights))
                for i, va in pa.items():
                    vb = pb.get(i)
                    if vb is not None:
                        prod = va * vb
                        s_lin += self.lin[i - 1] * prod
                        s_sq += self.sq[i - 1] * prod * prod
                        if self.weights.size:
                            s_poly += self.q[:, i - 1] * prod
                val = self.const + s_lin + s_sq
                if self.weights.size:
                    val += float(self.weights @ (s_poly + 1.0) ** 2)
                for (i, j), nu in self._nu.items():
                    if i in pa and j in pa and i in pb and j in pb:
                        val += nu * pa[i] * pa[j] * pb[i] * pb[j]
                G[a, b] = G[b, a] = val
        return G

    # -- induced prior ------------------------------------------------------

    def induced_diag(self) -> PriorDiag:
        """Diagonal prior variances this kernel puts on the degree-2 features."""
        if self._diag is not None:
            return self._diag
        p = self.p
        w = self.weights
        mains = self.lin + 2.0 * (w @ self.q if w.size else 0.0)
        quads = self.sq + (w @ (self.q * self.q) if w.size else 0.0)
        ii, jj = np.triu_indices(p, 1)
        pairs = 2.0 * ((self.q[:, ii] * self.q[:, jj]).T @ w if w.size else np.zeros(ii.size))
        for (i, j), nu in self._nu.items():
            pairs[EffectId.pair(i, j).index(p) - (1 + p)] += nu
        intercept = float(w.sum() + self.const)
        return PriorDiag.build(p, intercept=intercept, mains=mains, pairs=pairs, quads=quads)


# --------------------------------------------------------------------------
# generic two-way kernel specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoWayKernelSpec:
    """Parameters of a generic two-way interaction kernel.

    ``lambdas`` is (M1, p): per-coordinate scalings of the degree-2
    polynomial components.  ``pair_terms`` holds (i, j, nu) single-pair
    product terms with 1-based i < j.  ``alpha`` and ``psi`` scale the
    linear and squared-linear components, ``a_const`` is the constant
    offset of the linear polynomial kernel.
    """

    lambdas: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray
    a_const: float = 0.0
    pair_terms: tuple = ()

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        p = alpha.size
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1, p)
        terms = tuple((int(i), int(j), float(nu)) for i, j, nu in self.pair_terms)
        for arr, name in ((lam, "lambdas"), (alpha, "alpha"), (psi, "psi")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if np.any(arr < 0):
                raise ValueError(f"{name} must be entrywise nonnegative")
        for i, j, nu in terms:
            if not 1 <= i < j <= p:
                raise ValueError(f"pair term ({i}, {j}) needs 1 <= i < j <= p")
            if nu < 0:
                raise ValueError("nu must be nonnegative")
        if lam.shape[0] + self.a_const < -1e-12:
            raise ValueError("induced intercept variance M1 + A must be nonnegative")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "pair_terms", terms)
        object.__setattr__(self, "a_const", float(self.a_const))

    @property
    def p(self) -> int:
        return self.alpha.size

    @property
    def m1(self) -> int:
        return self.lambdas.shape[0]

    @property
    def m2(self) -> int:
        return len(self.pair_terms)

    def kernel(self) -> InteractionKernel:
        return InteractionKernel(
            weights=np.ones(self.m1),
            q=self.lambdas * self.lambdas,
            lin=self.alpha * self.alpha,
            sq=self.psi * self.psi,
            const=self.a_const,
            pair_terms=self.pair_terms,
        )

    def induced_diag(self) -> PriorDiag:
        """Closed-form diagonal: alpha_i^2 + 2 sum_m lambda_mi^2 on mains,
        2 sum_m (lambda_mi lambda_mj)^2 + nu_ij on pairs,
        psi_i^2 + sum_m lambda_mi^4 on quads, M1 + A on the intercept."""
        p = self.p
        lam2 = self.lambdas * self.lambdas
        mains = self.alpha**2 + 2.0 * lam2.sum(axis=0)
        quads = self.psi**2 + (lam2 * lam2).sum(axis=0)
        ii, jj = np.triu_indices(p, 1)
        pairs = 2.0 * (lam2[:, ii] * lam2[:, jj]).sum(axis=0)
        for i, j, nu in self.pair_terms:
            pairs[EffectId.pair(i, j).index(p) - (1 + p)] += nu
        return PriorDiag.build(
            p, intercept=self.m1 + self.a_const, mains=mains, pairs=pairs, quads=quads
        )

    def to_dict(self) -> dict:
        return {
            "m1": self.m1,
            "lambdas": self.lambdas.tolist(),
            "pair_terms": [[i, j, nu] for i, j, nu in self.pair_terms],
            "alpha": self.alpha.tolist(),
            "psi": self.psi.tolist(),
            "a_const": self.a_const,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TwoWayKernelSpec":
        alpha = np.asarray(d["alpha"], dtype=float)
        lam = np.asarray(d["lambdas"], dtype=float).reshape(int(d["m1"]), alpha.size)
        return cls(
            lambdas=lam,
            alpha=alpha,
            psi=np.asarray(d["psi"], dtype=float),
            a_const=float(d["a_const"]),
            pair_terms=tuple((int(i), int(j), float(nu)) for i, j, nu in d["pair_terms"]),
        )

    @classmethod
    def from_json(cls, s: str) -> "TwoWayKernelSpec":
        return cls.from_dict(json.loads(s))


# --------------------------------------------------------------------------
# spec-level operations
# --------------------------------------------------------------------------


def poly_kernel(x, y, c: float = 0.0, d: int = 1) -> float:
    """Polynomial kernel (x.y + c)^d."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if c < 0 or d < 1:
        raise ValueError("need c >= 0 and degree >= 1")
    return float((x @ y + c) ** d)


def two_way_eval(spec: TwoWayKernelSpec, x, y) -> float:
    """Direct evaluation of a generic two-way kernel in O((M1 + 1) p + M2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (spec.p,) or y.shape != (spec.p,):
        raise ValueError(f"inputs must have length p={spec.p}")
    lam2 = spec.lambdas * spec.lambdas
    acc = float(((lam2 @ (x * y) + 1.0) ** 2).sum())
    for i, j, nu in spec.pair_terms:
        acc += nu * x[i - 1] * x[j - 1] * y[i - 1] * y[j - 1]
    acc += float((spec.alpha * x) @ (spec.alpha * y)) + spec.a_const
    acc += float((spec.psi * x * x) @ (spec.psi * y * y))
    return acc


def induced_prior_diag(spec: TwoWayKernelSpec, p: int | None = None) -> PriorDiag:
    """Diagonal prior covariance induced by a two-way kernel."""
    if p is not None and p != spec.p:
        raise ValueError(f"spec has p={spec.p}, requested {p}")
    return spec.induced_diag()


def _uniform_value(arr, what: str, rtol=1e-9) -> float:
    arr = np.asarray(arr, dtype=float)
    if arr.size == 0:
        return 0.0
    v = float(arr[0])
    if not np.allclose(arr, v, rtol=rtol, atol=rtol * max(1.0, abs(v))):
        raise InfeasibleTargetError(
            f"{what} variances are not constant across the block", equation=what
        )
    return v


def solve_spec_from_diag(target: PriorDiag, family: str = "general") -> TwoWayKernelSpec:
    """Construct a two-way kernel inducing the target prior diagonal.

    ``block`` and ``skim-like`` use a single polynomial component
    (O(p) kernel); ``general`` accepts any diagonal at the price of one
    product term per nonzero pair variance.
    """
    p = target.p
    if family == "general":
        terms = []
        ii, jj = np.triu_indices(p, 1)
        for a, b, v in zip(ii, jj, target.pairs):
            if v > 0:
                terms.append((int(a) + 1, int(b) + 1, float(v)))
        return TwoWayKernelSpec(
            lambdas=np.zeros((0, p)),
            alpha=np.sqrt(target.mains),
            psi=np.sqrt(target.quads),
            a_const=target.intercept,
            pair_terms=tuple(terms),
        )

    if family == "block":
        v1 = _uniform_value(target.mains, "main")
        v2 = _uniform_value(target.pairs, "pair")
        v3 = _uniform_value(target.quads, "quad")
        if v1 == 0 and v2 == 0 and v3 == 0 and target.intercept == 0:
            return TwoWayKernelSpec(
                lambdas=np.zeros((0, p)), alpha=np.zeros(p), psi=np.zeros(p), a_const=0.0
            )
        lam_val = (v2 / 2.0) ** 0.25
        alpha2 = v1 - 2.0 * lam_val**2
        if alpha2 < 0:
            raise InfeasibleTargetError(
                f"main variance {v1} < 2*sum(lambda^2) = {2 * lam_val**2} "
                "forced by the pair variances",
                equation="main",
            )
        psi2 = v3 - lam_val**4
        if psi2 < 0:
            raise InfeasibleTargetError(
                f"quad variance {v3} < sum(lambda^4) = {lam_val**4} "
                "forced by the pair variances",
                equation="quad",
            )
        return TwoWayKernelSpec(
            lambdas=np.full((1, p), lam_val),
            alpha=np.full(p, np.sqrt(alpha2)),
            psi=np.full(p, np.sqrt(psi2)),
            a_const=target.intercept - 1.0,
        )

    if family == "skim-like":
        mains = target.mains
        quads = target.quads
        ii, jj = np.triu_indices(p, 1)
        prs = target.pairs
        # pair/main ratio eta2^2/eta1^4 must be shared by every pair
        w = 0.0
        denom = mains[ii] * mains[jj]
        live = denom > 0
        if np.any(live):
            ratios = prs[live] / denom[live]
            w = _uniform_value(ratios, "pair/main ratio")
        bad = (~live) & (prs > 0)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise InfeasibleTargetError(
                f"pair ({ii[k] + 1}, {jj[k] + 1}) has positive variance but a "
                "zero-variance main effect",
                equation="pair",
            )
        lam = (w / 2.0) ** 0.25 * np.sqrt(mains)
        alpha2 = mains - 2.0 * lam**2
        if np.any(alpha2 < -1e-12 * np.maximum(1.0, mains)):
            raise InfeasibleTargetError(
                "main variance < 2*sum(lambda^2) forced by the pair variances",
                equation="main",
            )
        psi2 = quads - lam**4
        if np.any(psi2 < -1e-12 * np.maximum(1.0, quads)):
            raise InfeasibleTargetError(
                "quad variance < sum(lambda^4) forced by the pair variances",
                equation="quad",
            )
        return TwoWayKernelSpec(
            lambdas=lam.reshape(1, p),
            alpha=np.sqrt(np.maximum(alpha2, 0.0)),
            psi=np.sqrt(np.maximum(psi2, 0.0)),
            a_const=target.intercept - 1.0,
        )

    raise ValueError(f"unknown family {family!r}")


# --------------------------------------------------------------------------
# block-degree and shrinkage kernels
# --------------------------------------------------------------------------


def _check_block_weights(eta1, eta2, eta3, c2):
    checks = [
        (eta1**2 - eta2**2, "eta1^2 >= eta2^2"),
        (eta3**2 - eta2**2 / 2.0, "eta3^2 >= eta2^2/2"),
        (c2 - eta2**2 / 2.0, "c^2 >= eta2^2/2"),
    ]
    for value, label in checks:
        if value < 0:
            raise KernelConstraintError(f"kernel weight constraint violated: {label}")


def block_kernel(eta1, eta2, eta3, c2, p: int) -> InteractionKernel:
    """Kernel giving every main effect variance eta1^2, every pair eta2^2,
    every quad eta3^2, and the intercept c^2."""
    _check_block_weights(eta1, eta2, eta3, c2)
    return skim_kernel(eta1, eta2, eta3, c2, np.ones(p))


def block_kernel_eval(eta, c2, x, y) -> float:
    eta1, eta2, eta3 = (float(v) for v in eta)
    return skim_kernel_eval_raw(eta1, eta2, eta3, float(c2), None, x, y)


def skim_kernel(eta1, eta2, eta3, c2, kappa) -> InteractionKernel:
    """Shrinkage kernel: the block kernel evaluated at kappa-scaled inputs.

    Induced variances are eta1^2 k_i^2 (mains), eta2^2 k_i^2 k_j^2
    (pairs), eta3^2 k_i^4 (quads) and c^2 (intercept); the reported
    diagonal uses those closed forms directly.
    """
    _check_block_weights(eta1, eta2, eta3, c2)
    kappa = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(kappa)) or np.any(kappa < 0):
        raise ValueError("kappa must be finite and nonnegative")
    p = kappa.size
    k2 = kappa * kappa
    ii, jj = np.triu_indices(p, 1)
    diag = PriorDiag.build(
        p,
        intercept=c2,
        mains=eta1**2 * k2,
        pairs=eta2**2 * k2[ii] * k2[jj],
        quads=eta3**2 * k2 * k2,
    )
    return InteractionKernel(
        weights=[eta2**2 / 2.0],
        q=k2.reshape(1, p),
        lin=(eta1**2 - eta2**2) * k2,
        sq=(eta3**2 - eta2**2 / 2.0) * k2 * k2,
        const=c2 - eta2**2 / 2.0,
        diag_override=diag,
    )


def skim_kernel_eval_raw(eta1, eta2, eta3, c2, kappa, x, y) -> float:
    """Scalar shrinkage-kernel evaluation; kappa=None means unscaled."""
    for v in (eta1, eta2, eta3, c2):
        if not np.isfinite(v):
            raise ValueError("hyperparameters must be finite")
    _check_block_weights(eta1, eta2, eta3, c2)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if kappa is not None:
        kappa = np.asarray(kappa, dtype=float)
        x = kappa * x
        y = kappa * y
    s = float(x @ y)
    return (
        eta2**2 / 2.0 * (s + 1.0) ** 2
        + (eta3**2 - eta2**2 / 2.0) * float((x * x) @ (y * y))
        + (eta1**2 - eta2**2) * s
        + c2
        - eta2**2 / 2.0
    )


def skim_kernel_eval(tau, x, y) -> float:
    """Evaluate the kernel of a shrinkage hyperparameter state at (x, y)."""
    return skim_kernel_eval_raw(
        tau.eta1, tau.eta2, tau.eta3, tau.c2, tau.kappa, x, y
    )


# --------------------------------------------------------------------------
# kernel matrices and probe evaluations
# --------------------------------------------------------------------------


def kernel_matrix(k, X) -> np.ndarray:
    """Symmetric kernel matrix over the rows of X.

    Uses the kernel's vectorized path when available, otherwise falls
    back to pairwise scalar evaluation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if hasattr(k, "pairwise"):
        K = k.pairwise(X)
    else:
        K = np.empty((n, n))
        for a in range(n):
            for b in range(a, n):
                K[a, b] = K[b, a] = k(X[a], X[b])
    if not np.all(np.isfinite(K)):
        raise ValueError("kernel matrix has non-finite entries")
    return 0.5 * (K + K.T)


def cross_kernel_at_probes(kernel: InteractionKernel, probes, X) -> np.ndarray:
    """Kernel between sparse unit-combination probes and the rows of X,
    each entry in O(1) given the kernel's precomputed coordinate weights."""
    return kernel.probe_cross(probes, X)


# --------------------------------------------------------------------------
# higher-order interaction kernels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RWaySpec:
    """Recursive degree-r interaction kernel (r >= 3).

    ``products`` holds (index tuple of length r, nu) monomial product
    terms; ``children`` holds (scaling vector, degree r-1 spec) pairs,
    bottoming out at a :class:`TwoWayKernelSpec`.  Constant offsets live
    in the base case only.
    """

    degree: int
    lambdas: np.ndarray
    products: tuple = ()
    children: tuple = ()

    def __post_init__(self):
        if self.degree < 3:
            raise ValueError("degree must be >= 3 (use TwoWayKernelSpec for r=2)")
        lam = np.atleast_2d(np.asarray(self.lambdas, dtype=float))
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambdas must be finite and nonnegative")
        p = lam.shape[1]
        prods = []
        for idx, nu in self.products:
            idx = tuple(int(i) for i in idx)
            if len(idx) != self.degree:
                raise ValueError("product terms must list exactly r indices")
            if any(not 1 <= i <= p for i in idx) or nu < 0:
                raise ValueError("invalid product term")
            prods.append((idx, float(nu)))
        kids = []
        for grad, sub in self.children:
            grad = np.asarray(grad, dtype=float)
            if grad.shape != (p,) or np.any(grad < 0):
                raise ValueError("child scaling must be a nonnegative length-p vector")
            sub_deg = 2 if isinstance(sub, TwoWayKernelSpec) else sub.degree
            if sub_deg != self.degree - 1:
                raise ValueError("child kernel must have degree r-1")
            if sub.p != p:
                raise ValueError("child dimension mismatch")
            kids.append((grad, sub))
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "products", tuple(prods))
        object.__setattr__(self, "children", tuple(kids))

    @property
    def p(self) -> int:
        return self.lambdas.shape[1]


def r_way_eval(spec, x, y) -> float:
    """Evaluate a degree-r interaction kernel (base case r=2)."""
    if isinstance(spec, TwoWayKernelSpec):
        return two_way_eval(spec, x, y)
    if not isinstance(spec, RWaySpec):
        raise TypeError("spec must be an RWaySpec or TwoWayKernelSpec")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam2 = spec.lambdas * spec.lambdas
    acc = float(((lam2 @ (x * y) + 1.0) ** spec.degree).sum())
    for idx, nu in spec.products:
        cols = [i - 1 for i in idx]
        acc += nu * float(np.prod(x[cols])) * float(np.prod(y[cols]))
    for grad, sub in spec.children:
        acc += r_way_eval(sub, grad * x, grad * y)
    return acc


def poly_induced_prior(c: float, p: int) -> PriorDiag:
    """Prior diagonal of the standard degree-2 polynomial kernel (x.y + c)^2:
    quads 1, pairs 2, mains 2c, intercept c^2."""
    if c < 0 or p < 1:
        raise ValueError("need c >= 0 and p >= 1")
    return PriorDiag.build(p, intercept=c * c, mains=2.0 * c, pairs=2.0, quads=1.0)
