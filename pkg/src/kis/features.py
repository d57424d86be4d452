"""Explicit interaction feature maps.

The degree-2 map lists, for an input ``x`` of dimension ``p``::

    [1, x_1, ..., x_p, x_1*x_2, ..., x_{p-1}*x_p, x_1^2, ..., x_p^2]

i.e. intercept, main effects, pairwise interactions in lexicographic
order, then quadratic effects.  Every other module indexes coefficients
against this canonical order.

These dense maps are reference machinery: they are cheap at small ``p``
and serve as brute-force checks for the kernel evaluators and posterior
recovery, which never materialize them in production paths.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EffectId",
    "effect_ids",
    "phi2_dim",
    "phi2_map",
    "phi2_design",
    "phi_r_dim",
    "phi_r_map",
    "monomial_exponents",
]

_KINDS = ("intercept", "main", "pair", "quad")


@dataclass(frozen=True, order=True)
class EffectId:
    """One coefficient of the degree-2 feature map.

    ``kind`` is one of ``intercept``, ``main``, ``pair``, ``quad``;
    indices are 1-based and pairs require ``i < j``.
    """

    kind: str
    i: int = 0
    j: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown effect kind {self.kind!r}")
        if self.kind == "intercept":
            if self.i or self.j:
                raise ValueError("intercept carries no indices")
        elif self.kind == "pair":
            if not 1 <= self.i < self.j:
                raise ValueError(f"pair indices need 1 <= i < j, got ({self.i}, {self.j})")
        else:
            if self.i < 1 or self.j:
                raise ValueError(f"{self.kind} effect needs a single index >= 1")

    @classmethod
    def intercept(cls) -> "EffectId":
        return cls("intercept")

    @classmethod
    def main(cls, i: int) -> "EffectId":
        return cls("main", i)

    @classmethod
    def pair(cls, i: int, j: int) -> "EffectId":
        return cls("pair", i, j)

    @classmethod
    def quad(cls, i: int) -> "EffectId":
        return cls("quad", i)

    def index(self, p: int) -> int:
        """Position of this effect in the canonical order for dimension ``p``."""
        if self.kind != "intercept" and not (1 <= self.i <= p and self.j <= p):
            raise ValueError(f"effect {self} out of range for p={p}")
        if self.kind == "intercept":
            return 0
        if self.kind == "main":
            return self.i
        if self.kind == "pair":
            i, j = self.i, self.j
            return 1 + p + (i - 1) * p - (i * (i - 1)) // 2 + (j - i - 1)
        return 1 + p + p * (p - 1) // 2 + (self.i - 1)

    def label(self) -> str:
        if self.kind == "intercept":
            return "1"
        if self.kind == "main":
            return f"x{self.i}"
        if self.kind == "pair":
            return f"x{self.i}*x{self.j}"
        return f"x{self.i}^2"


def effect_ids(p: int) -> list[EffectId]:
    """All effect ids for dimension ``p`` in canonical order."""
    if p < 1:
        raise ValueError("p must be >= 1")
    ids = [EffectId.intercept()]
    ids += [EffectId.main(i) for i in range(1, p + 1)]
    ids += [EffectId.pair(i, j) for i in range(1, p + 1) for j in range(i + 1, p + 1)]
    ids += [EffectId.quad(i) for i in range(1, p + 1)]
    return ids


def phi2_dim(p: int) -> int:
    """Length of the degree-2 feature map: ``1 + 2p + p(p-1)/2``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return 1 + 2 * p + p * (p - 1) // 2


def _check_finite(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(x))
        raise ValueError(f"{name} has non-finite entries at positions {bad.tolist()}")
    return x


def phi2_map(x) -> np.ndarray:
    """Degree-2 feature vector of ``x`` in canonical order."""
    x = _check_finite(np.atleast_1d(x), "x")
    if x.ndim != 1 or x.size < 1:
        raise ValueError("x must be a non-empty 1-d vector")
    p = x.size
    ii, jj = np.triu_indices(p, 1)
    return np.concatenate(([1.0], x, x[ii] * x[jj], x * x))


def phi2_design(X) -> np.ndarray:
    """Row-wise degree-2 features of a design matrix (N x phi2_dim(p)).

    Fills one preallocated output block by block; the pair block is the
    dominant O(N p^2) cost and is written exactly once.
    """
    X = _check_finite(np.atleast_2d(X), "X")
    n, p = X.shape
    out = np.empty((n, phi2_dim(p)))
    out[:, 0] = 1.0
    out[:, 1 : 1 + p] = X
    col = 1 + p
    for i in range(p - 1):  # pair block written once, no index temporaries
        width = p - i - 1
        np.multiply(X[:, i + 1 :], X[:, i : i + 1], out=out[:, col : col + width])
        col += width
    np.multiply(X, X, out=out[:, col:])
    return out


def monomial_exponents(p: int, r: int) -> list[tuple[int, ...]]:
    """Exponent vectors of all monomials of total degree <= r, constant first.

    Within each degree, variables are enumerated by
    ``combinations_with_replacement``, which fixes the canonical order of
    the degree-r map.
    """
    if p < 1 or r < 1:
        raise ValueError("p and r must be >= 1")
    out = [(0,) * p]
    for d in range(1, r + 1):
        for combo in itertools.combinations_with_replacement(range(p), d):
            e = [0] * p
            for v in combo:
                e[v] += 1
            out.append(tuple(e))
    return out


def phi_r_dim(p: int, r: int) -> int:
    """Number of monomials of degree <= r in p variables (incl. constant)."""
    return len(monomial_exponents(p, r))


def phi_r_map(x, r: int) -> np.ndarray:
    """All monomials of ``x`` up to total degree ``r``, constant included.

    For ``r = 2`` the entries coincide with :func:`phi2_map` up to the
    canonical reordering.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    x = _check_finite(np.atleast_1d(x), "x")
    p = x.size
    exps = monomial_exponents(p, r)
    powers = np.vstack([x ** k for k in range(r + 1)])  # (r+1, p)
    return np.array([np.prod(powers[list(e), range(p)]) for e in exps])
