"""Sparse precision builders for structured random effects.

Every builder returns a :class:`SparsePrecision`, which carries the
matrix together with its rank deficiency and the log pseudo-determinant
so that improper (intrinsic) priors can be normalised consistently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# scale_precision works on a dense copy; spline grids are far smaller
MAX_DENSE_SCALE = 500


@dataclass(frozen=True)
class SparsePrecision:
    """Symmetric nonnegative-definite precision in CSR form.

    ``log_det_constant`` is the log of the product of the nonzero
    eigenvalues of ``matrix``; ``null_space`` (n x rank_deficiency,
    orthonormal columns) is kept for intrinsic models.
    """

    matrix: sp.csr_array
    rank_deficiency: int = 0
    log_det_constant: float = 0.0
    null_space: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self, c: float) -> "SparsePrecision":
        n = self.dimension - self.rank_deficiency
        return SparsePrecision(
            sp.csr_array(self.matrix * c),
            self.rank_deficiency,
            self.log_det_constant + n * math.log(c),
            self.null_space,
        )


@dataclass(frozen=True)
class PriorSpec:
    """Prior on one hyperparameter.

    kinds: ``pc_prec`` (u, alpha) with P(tau^-1/2 > u) = alpha;
    ``gaussian_on_scaled_log`` (scale, tau0) for scale*ln(param) ~ N(0, 1/tau0);
    ``normal`` (mean, prec) on the internal (unconstrained) scale;
    ``fixed`` (value) on the natural scale.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind == "pc_prec":
            if not p.get("u", 0) > 0:
                raise DomainError("pc_prec requires u > 0")
            if not 0 < p.get("alpha", -1) < 1:
                raise DomainError("pc_prec requires 0 < alpha < 1")
        elif self.kind == "gaussian_on_scaled_log":
            if not p.get("tau0", 0) > 0 or p.get("scale", 0) == 0:
                raise DomainError("gaussian_on_scaled_log requires tau0 > 0 and scale != 0")
        elif self.kind == "normal":
            if not p.get("prec", 0) > 0:
                raise DomainError("normal prior requires prec > 0")
        elif self.kind == "fixed":
            if "value" not in p:
                raise DomainError("fixed prior requires a value")
        else:
            raise DomainError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def pc_prec(cls, u=1.0, alpha=0.01):
        return cls("pc_prec", {"u": float(u), "alpha": float(alpha)})

    @classmethod
    def fixed(cls, value):
        return cls("fixed", {"value": float(value)})


EFFECT_KINDS = ("iid", "iid2d", "rw2")


@dataclass(frozen=True)
class EffectSpec:
    kind: str
    size: int
    hyper_prior: Mapping[str, PriorSpec] = field(default_factory=dict)
    scale_model: bool = True

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise DomainError(f"unknown effect kind {self.kind!r}")
        if self.size < 1:
            raise DomainError("effect size must be >= 1")
        if self.kind == "rw2" and self.size < 3:
            raise DomainError("rw2 requires size >= 3")

    @property
    def dimension(self) -> int:
        return 2 * self.size if self.kind == "iid2d" else self.size


def _orthonormal(v):
    q, _ = np.linalg.qr(v)
    return q


def rw2_precision(n: int) -> SparsePrecision:
    """Second-order random walk structure D'D on n equally spaced nodes."""
    if n < 3:
        raise DomainError(f"rw2 requires n >= 3, got {n}")
    D = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csr")
    Q = sp.csr_array(D.T @ D)
    Q.sum_duplicates()
    Q.sort_indices()
    t = np.arange(1.0, n + 1.0)
    null = _orthonormal(np.column_stack([np.ones(n), t - t.mean()]))
    # product of nonzero eigenvalues of the rw2 structure matrix
    log_pdet = math.log(n * n * (n * n - 1) / 12.0)
    return SparsePrecision(Q, 2, log_pdet, null)


def _null_space(Qd, rank_deficiency):
    w, v = np.linalg.eigh(Qd)
    scale = max(1.0, float(np.abs(w).max()))
    if w[0] < -1e-8 * scale:
        raise NumericalError(f"precision is indefinite (smallest eigenvalue {w[0]:.3g})")
    return w, v[:, :rank_deficiency]


def scale_precision(Q: SparsePrecision) -> SparsePrecision:
    """Rescale so the constrained generalised inverse has geometric-mean
    marginal variance 1.
    """
    n, r = Q.dimension, Q.rank_deficiency
    if r not in (0, 1, 2):
        raise DomainError("scale_precision supports rank deficiency 0, 1 or 2")
    if n > MAX_DENSE_SCALE:
        raise DomainError(f"scale_precision is limited to n <= {MAX_DENSE_SCALE}")
    Qd = Q.toarray()
    w, v = _null_space(Qd, r)
    if r and w[r] <= 1e-10 * max(1.0, w[-1]):
        raise NumericalError("rank deficiency larger than declared")
    V = Q.null_space if Q.null_space is not None else v
    if r:
        Sigma = np.linalg.inv(Qd + V @ V.T) - V @ V.T
    else:
        Sigma = np.linalg.inv(Qd)
    d = np.diag(Sigma)
    if np.any(d <= 0):
        raise NumericalError("nonpositive marginal variance in generalised inverse")
    c = math.exp(float(np.mean(np.log(d))))
    out = Q.scaled(c)
    return SparsePrecision(out.matrix, r, out.log_det_constant, V if r else None)


def iid_precision(n: int, tau: float = 1.0) -> SparsePrecision:
    if n < 1:
        raise DomainError("iid requires n >= 1")
    if not tau > 0:
        raise DomainError(f"iid precision must be > 0, got {tau}")
    return SparsePrecision(sp.csr_array(sp.identity(n, format="csr") * tau), 0, n * math.log(tau))


def iid2d_block(tau_v: float, tau_w: float, rho: float) -> np.ndarray:
    """Inverse of [[1/tau_v, rho], [rho, 1/tau_w]] (rho is the covariance)."""
    if not (tau_v > 0 and tau_w > 0):
        raise DomainError("iid2d precisions must be > 0")
    det = 1.0 / (tau_v * tau_w) - rho * rho
    if not det > 0:
        raise DomainError("iid2d covariance is not positive definite")
    return np.array([[1.0 / tau_w, -rho], [-rho, 1.0 / tau_v]]) / det


def iid2d_precision(n_pairs: int, tau_v: float, tau_w: float, rho: float) -> SparsePrecision:
    """Block-diagonal precision of n_pairs (intercept, slope) pairs, interleaved."""
    if n_pairs < 1:
        raise DomainError("iid2d requires n_pairs >= 1")
    B = iid2d_block(tau_v, tau_w, rho)
    Q = sp.csr_array(sp.kron(sp.identity(n_pairs, format="csr"), sp.csr_array(B), format="csr"))
    sign, logdet = np.linalg.slogdet(B)
    return SparsePrecision(Q, 0, n_pairs * float(logdet))


def bin_covariate(values, n_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width binning on [min, max]; bins are half-open, the last closed.

    Returns 1-based bin indices and the increasing bin midpoints.
    """
    x = np.asarray(values, dtype=float)
    if n_groups < 2:
        raise DomainError("n_groups must be >= 2")
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise DomainError("cannot bin a constant covariate (zero-width range)")
    width = (hi - lo) / n_groups
    idx = np.floor((x - lo) / width).astype(np.int64) + 1
    np.clip(idx, 1, n_groups, out=idx)
    mids = lo + (np.arange(n_groups) + 0.5) * width
    return idx, mids


def gmrf_log_density(x, Q: SparsePrecision, tau: float = 1.0) -> float:
    """Log density of x under precision tau*Q; null directions carry no normaliser."""
    x = np.asarray(x, dtype=float)
    if x.shape != (Q.dimension,):
        raise DomainError(f"x has shape {x.shape}, precision has dimension {Q.dimension}")
    if not tau > 0:
        raise DomainError("tau must be > 0")
    n_eff = Q.dimension - Q.rank_deficiency
    quad = float(x @ (Q.matrix @ x))
    return 0.5 * n_eff * (math.log(tau) - LOG_2PI) + 0.5 * Q.log_det_constant - 0.5 * tau * quad
