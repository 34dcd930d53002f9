"""Exact probabilistic primitives.

Gaussian and Gaussian-mixture containers, the standard-normal CDF, truncated
and rectified Gaussian moments in one dimension, symmetric eigendecomposition
with degeneracy handling, the closed-form 2-Wasserstein distance between
Gaussians, and mixture second moments.

All values are immutable after construction and safe to share across threads.
Covariances may be stored full (2-d array) or diagonal (1-d variance vector);
degenerate (rank-deficient) covariances are first-class citizens because the
propagation pipeline produces them routinely, e.g. for duplicated input
points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .config import TOL
from .errors import NegligibleMassCell, NumericalError, ParseError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal with full or diagonal covariance.

    ``cov`` is a 1-d variance vector (diagonal variant) or a full symmetric
    positive-semidefinite matrix.  Symmetry is required within a relative
    tolerance and then enforced exactly; tiny negative variances are clipped
    to zero.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _readonly(np.atleast_1d(self.mean))
        cov = np.array(self.cov, dtype=float)
        if mean.ndim != 1:
            raise ParseError("mean must be a vector")
        n = mean.shape[0]
        if cov.ndim == 1:
            if cov.shape[0] != n:
                raise ParseError("variance vector length does not match mean")
            scale = float(np.max(cov, initial=0.0))
            floor = -TOL.eig_clip_rtol * max(scale, 1.0)
            if np.any(cov < floor):
                raise ParseError("negative variance beyond tolerance")
            cov = np.maximum(cov, 0.0)
        elif cov.ndim == 2:
            if cov.shape != (n, n):
                raise ParseError("covariance shape does not match mean")
            asym = float(np.max(np.abs(cov - cov.T), initial=0.0))
            scale = float(np.max(np.abs(cov), initial=0.0))
            if asym > TOL.cov_symmetry_rtol * max(scale, 1.0):
                raise ParseError("covariance is not symmetric within tolerance")
            cov = 0.5 * (cov + cov.T)
        else:
            raise ParseError("cov must be a variance vector or a square matrix")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _readonly(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.cov.ndim == 1

    def diag_var(self) -> np.ndarray:
        """Variance vector (the covariance diagonal)."""
        return self.cov if self.is_diagonal else np.diag(self.cov).copy()

    def full_cov(self) -> np.ndarray:
        return np.diag(self.cov) if self.is_diagonal else np.array(self.cov)

    def cov_trace(self) -> float:
        return float(np.sum(self.cov) if self.is_diagonal else np.trace(self.cov))

    def eigen(self, degeneracy_threshold: float = TOL.eig_clip_rtol) -> "EigenBasis":
        if self.is_diagonal:
            order = np.argsort(-self.cov, kind="stable")
            lam = self.cov[order]
            vecs = np.zeros((self.dim, self.dim))
            vecs[order, np.arange(self.dim)] = 1.0
            lam_max = float(lam[0]) if self.dim else 0.0
            rank = int(np.sum(lam > degeneracy_threshold * lam_max))
            return EigenBasis(lam, vecs, rank)
        return symmetric_eig(self.cov, degeneracy_threshold)

    def factor(self) -> np.ndarray:
        """Matrix ``F`` with ``cov = F F^T`` (columns span the support)."""
        if self.is_diagonal:
            return np.diag(np.sqrt(self.cov))
        basis = self.eigen()
        keep = basis.eigenvalues > 0.0
        return basis.eigenvectors[:, keep] * np.sqrt(basis.eigenvalues[keep])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.is_diagonal:
            z = rng.standard_normal((n, self.dim))
            return self.mean + z * np.sqrt(self.cov)
        f = self.factor()
        z = rng.standard_normal((n, f.shape[1]))
        return self.mean + z @ f.T

    def to_dict(self) -> dict:
        cov = {"diag": self.cov.tolist()} if self.is_diagonal \
            else {"full": self.cov.tolist()}
        return {"mean": self.mean.tolist(), "cov": cov}

    @staticmethod
    def from_dict(d: dict) -> "Gaussian":
        try:
            cov = d["cov"]
            if "diag" in cov:
                return Gaussian(np.asarray(d["mean"], dtype=float),
                                np.asarray(cov["diag"], dtype=float))
            return Gaussian(np.asarray(d["mean"], dtype=float),
                            np.asarray(cov["full"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed Gaussian object: {exc}") from exc


@dataclass(frozen=True)
class GaussianMixture:
    """Simplex-weighted list of Gaussians of a common dimension.

    Weights must be nonnegative and sum to 1 within tolerance; they are
    renormalized by their exact sum on construction.
    """

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if len(comps) == 0:
            raise ParseError("mixture needs at least one component")
        if w.shape[0] != len(comps):
            raise ParseError("weight count does not match component count")
        if np.any(w < -TOL.simplex_atol):
            raise ParseError("negative mixture weight")
        w = np.maximum(w, 0.0)
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise ParseError(f"mixture weights sum to {total}, not 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ParseError("mixture components have mismatched dimensions")
        object.__setattr__(self, "weights", _readonly(w / total))
        object.__setattr__(self, "components", comps)

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def mean(self) -> np.ndarray:
        means = np.stack([c.mean for c in self.components])
        return self.weights @ means

    def full_cov(self) -> np.ndarray:
        m_bar = self.mean()
        out = np.zeros((self.dim, self.dim))
        for w, c in zip(self.weights, self.components):
            d = c.mean - m_bar
            out += w * (c.full_cov() + np.outer(d, d))
        return 0.5 * (out + out.T)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.size, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.size):
            take = idx == k
            if np.any(take):
                out[take] = self.components[k].sample(int(take.sum()), rng)
        return out

    def sample_stratified(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Sample with per-component counts pinned to ``n * weights``.

        Largest-remainder rounding makes the component proportions
        deterministic, removing the multinomial imbalance noise that
        dominates empirical W2 estimates between well-separated modes; the
        sampler remains consistent for the mixture distribution.  Rows are
        shuffled so the output carries no component grouping.
        """
        target = n * self.weights
        counts = np.floor(target).astype(int)
        short = n - int(counts.sum())
        if short > 0:
            order = np.argsort(-(target - counts), kind="stable")
            counts[order[:short]] += 1
        parts = [comp.sample(int(c), rng)
                 for c, comp in zip(counts, self.components) if c > 0]
        return rng.permutation(np.concatenate(parts, axis=0), axis=0)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @staticmethod
    def from_dict(d: dict) -> "GaussianMixture":
        try:
            comps = tuple(Gaussian.from_dict(c) for c in d["components"])
            return GaussianMixture(np.asarray(d["weights"], dtype=float), comps)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed mixture object: {exc}") from exc


def as_mixture(g) -> GaussianMixture:
    """Wrap a single Gaussian as a one-component mixture; pass mixtures through."""
    if isinstance(g, GaussianMixture):
        return g
    return GaussianMixture(np.array([1.0]), (g,))


@dataclass(frozen=True)
class TruncatedMoments1D:
    """Mass, conditional mean and conditional variance of a truncated normal."""

    mass: float
    mean: float
    variance: float


@dataclass(frozen=True)
class EigenBasis:
    """Sorted eigendecomposition of a symmetric PSD matrix.

    Eigenvalues are nonincreasing with negatives (within tolerance) clipped
    to zero; ``rank`` counts eigenvalues above the degeneracy threshold.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _readonly(self.eigenvectors))


# ---------------------------------------------------------------------------
# scalar normal machinery
# ---------------------------------------------------------------------------

def std_normal_cdf(x):
    """Standard normal CDF.  Accepts scalars or arrays; saturates at 0/1."""
    out = ndtr(x)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def _std_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def _std_trunc_core(a, b):
    """Vectorized (mass, mean, variance) of N(0,1) truncated to [a, b].

    ``a``/``b`` may contain ``-inf``/``+inf``.  Inputs must satisfy a < b
    elementwise.  No mass floor is applied here.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # complement form keeps precision in the right tail
    mass = np.where(a > 0.0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    pa = _std_pdf(a)
    pb = _std_pdf(b)
    with np.errstate(invalid="ignore"):
        apa = np.where(np.isinf(a), 0.0, a * pa)
        bpb = np.where(np.isinf(b), 0.0, b * pb)
    safe = np.where(mass > 0.0, mass, 1.0)
    ratio = (pa - pb) / safe
    mean = np.where(mass > 0.0, ratio, 0.5 * (np.clip(a, -1e308, 1e308)
                                              + np.clip(b, -1e308, 1e308)))
    var = 1.0 + (apa - bpb) / safe - ratio * ratio
    var = np.where(mass > 0.0, np.maximum(var, 0.0), 0.0)
    return mass, mean, var


def standard_truncated_moments(lo, hi):
    """Vectorized (mass, mean, variance) of N(0,1) truncated to ``[lo, hi]``.

    Accepts arrays of any matching shape; bounds may be ``±inf``.  Entries
    whose mass underflows to zero get mean/variance ``0`` instead of NaN and
    are reported with mass ``0`` — callers decide how to treat empty cells.
    """
    mass, mean, var = _std_trunc_core(lo, hi)
    mass = np.maximum(mass, 0.0)
    empty = ~(mass > 0.0)
    if np.any(empty):
        mean = np.where(empty, 0.0, mean)
        var = np.where(empty, 0.0, var)
        mass = np.where(empty, 0.0, mass)
    return mass, mean, var


def truncated_moments_1d(mu: float, var: float, lo: float, hi: float) -> TruncatedMoments1D:
    """Closed-form moments of N(mu, var) conditioned on [lo, hi].

    ``lo``/``hi`` may be ``-inf``/``+inf``; the untruncated case returns
    ``(1, mu, var)`` exactly.  Cells whose mass falls below the configured
    floor raise :class:`NegligibleMassCell` so callers can drop them.
    """
    if not var > 0.0:
        raise ParseError("var must be positive")
    if not lo < hi:
        raise ParseError("need lo < hi")
    if math.isinf(lo) and lo < 0 and math.isinf(hi):
        return TruncatedMoments1D(1.0, float(mu), float(var))
    s = math.sqrt(var)
    a = (lo - mu) / s
    b = (hi - mu) / s
    mass, mean, v = _std_trunc_core(a, b)
    mass = float(mass)
    if mass < TOL.negligible_mass:
        raise NegligibleMassCell(f"truncation cell [{lo}, {hi}] has mass {mass}")
    return TruncatedMoments1D(mass, float(mu + s * mean), float(var * v))


def rectified_moments_1d(mu: float, var: float, lo: float, hi: float):
    """First and second moment of ``min(max(Z, lo), hi)`` for Z ~ N(mu, var).

    Combines boundary atoms at ``lo`` and ``hi`` with the truncated moments
    of the interior.  Bounds may be infinite, in which case the corresponding
    atom vanishes.  Returns ``(first_moment, second_moment)``.
    """
    if not var > 0.0:
        raise ParseError("var must be positive")
    if not lo < hi:
        raise ParseError("need lo < hi")
    s = math.sqrt(var)
    p_lo = float(ndtr((lo - mu) / s)) if math.isfinite(lo) else 0.0
    p_hi = float(ndtr(-(hi - mu) / s)) if math.isfinite(hi) else 0.0
    m1 = (lo * p_lo if p_lo else 0.0) + (hi * p_hi if p_hi else 0.0)
    m2 = (lo * lo * p_lo if p_lo else 0.0) + (hi * hi * p_hi if p_hi else 0.0)
    try:
        interior = truncated_moments_1d(mu, var, lo, hi)
    except NegligibleMassCell:
        return m1, m2
    m1 += interior.mass * interior.mean
    m2 += interior.mass * (interior.variance + interior.mean ** 2)
    return m1, m2


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _symmetric_blocks(a: np.ndarray):
    """Index groups of the connected components of the sparsity pattern.

    A union-find over nonzero off-diagonal entries; exact zeros produced by
    mean-field propagation make large covariances block-diagonal, which turns
    one O(n^3) eigendecomposition into many small ones.
    """
    n = a.shape[0]
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows, cols = np.nonzero(a)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i >= j:
            continue
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    groups = {}
    for i, r in enumerate(roots.tolist()):
        groups.setdefault(r, []).append(i)
    return [np.array(groups[r]) for r in sorted(groups)]


def symmetric_eig(cov: np.ndarray, degeneracy_threshold: float = TOL.eig_clip_rtol) -> EigenBasis:
    """Eigendecomposition of a symmetric matrix with PSD clipping.

    Eigenvalues are returned nonincreasing.  Negative eigenvalues within
    ``degeneracy_threshold * scale`` of zero are clipped to 0; anything more
    negative raises :class:`NumericalError` with the matrix attached.  The
    rank counts eigenvalues above ``degeneracy_threshold * lambda_max``.
    """
    a = np.asarray(cov, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParseError("expected a square matrix")
    n = a.shape[0]
    asym = float(np.max(np.abs(a - a.T), initial=0.0))
    scale0 = float(np.max(np.abs(a), initial=0.0))
    if asym > TOL.cov_symmetry_rtol * max(scale0, 1.0):
        raise ParseError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    lam = np.empty(n)
    vecs = np.zeros((n, n))
    try:
        blocks = _symmetric_blocks(a)
        for idx in blocks:
            sub = a[np.ix_(idx, idx)]
            w, v = np.linalg.eigh(sub)
            lam[idx] = w
            vecs[np.ix_(idx, idx)] = v
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}", payload=a) from exc
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    vecs = vecs[:, order]
    scale = float(np.max(np.abs(lam), initial=0.0))
    if np.any(lam < -degeneracy_threshold * scale):
        raise NumericalError("matrix has a negative eigenvalue beyond tolerance",
                             payload=a)
    lam = np.maximum(lam, 0.0)
    lam_max = float(lam[0]) if n else 0.0
    rank = int(np.sum(lam > degeneracy_threshold * lam_max))
    return EigenBasis(lam, vecs, rank)


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via clipped eigendecomposition."""
    basis = symmetric_eig(cov)
    root = (basis.eigenvectors * np.sqrt(basis.eigenvalues)) @ basis.eigenvectors.T
    return 0.5 * (root + root.T)


# ---------------------------------------------------------------------------
# Wasserstein and moments
# ---------------------------------------------------------------------------

def gaussian_w2(a: Gaussian, b: Gaussian) -> float:
    """Closed-form 2-Wasserstein distance between Gaussians.

    ``W2^2 = |m_a - m_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.
    Diagonal pairs use the commuting shortcut.  Degenerate covariances are
    fine; a covariance that is not PSD within tolerance raises
    :class:`NumericalError`.
    """
    if a.dim != b.dim:
        raise ParseError("dimension mismatch")
    if (a.is_diagonal == b.is_diagonal and np.array_equal(a.mean, b.mean)
            and np.array_equal(a.cov, b.cov)):
        return 0.0
    dm2 = float(np.sum(np.square(a.mean - b.mean)))
    if a.is_diagonal and b.is_diagonal:
        tr = float(np.sum(np.square(np.sqrt(a.cov) - np.sqrt(b.cov))))
    else:
        sa = psd_sqrt(a.full_cov())
        inner = sa @ b.full_cov() @ sa
        cross = psd_sqrt(0.5 * (inner + inner.T))
        tr = a.cov_trace() + b.cov_trace() - 2.0 * float(np.trace(cross))
    return math.sqrt(max(dm2 + tr, 0.0))


def mixture_second_moment(g) -> float:
    """``E[|z|^2]`` of a Gaussian mixture: sum of pi_i (|m_i|^2 + tr S_i)."""
    g = as_mixture(g)
    total = 0.0
    for w, c in zip(g.weights, g.components):
        total += float(w) * (float(np.sum(np.square(c.mean))) + c.cov_trace())
    return total
