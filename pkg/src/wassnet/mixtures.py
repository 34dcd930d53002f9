"""Compression of Gaussian mixtures and of dropout-induced discrete mixtures.

Gaussian mixtures are reduced by seeded k-means++ / Lloyd clustering of the
component means followed by per-cluster moment matching, certified by the
mixture-level transport bound.  Dropout layers turn an atom set into a
mixture of masked copies; that mixture is expanded explicitly on a chosen
subset of mask dimensions and the discarded mask randomness is charged with
a closed-form W2 bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TOL
from .errors import ParseError
from .stats import Gaussian, GaussianMixture, _readonly
from .transport import mw2

__all__ = [
    "DiscreteDistribution",
    "CompressionResult",
    "BernoulliMixture",
    "compress_gmm",
    "expand_dropout",
    "compress_dropout",
    "mixture_from_atoms",
]


def mixture_from_atoms(atoms) -> GaussianMixture:
    """Zero-covariance Gaussian mixture with one component per atom."""
    zero = np.zeros(atoms.dim)
    return GaussianMixture(atoms.weights,
                           tuple(Gaussian(loc, zero)
                                 for loc in atoms.locations))


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution: atom locations and simplex weights."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if loc.ndim != 2 or loc.shape[0] < 1:
            raise ParseError("locations must be a nonempty (N, d) array")
        if not np.all(np.isfinite(loc)):
            raise ParseError("atom locations must be finite")
        if w.shape[0] != loc.shape[0]:
            raise ParseError("weight count does not match atom count")
        if np.any(w < -TOL.simplex_atol):
            raise ParseError("negative atom weight")
        w = np.maximum(w, 0.0)
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise ParseError(f"atom weights sum to {total}, not 1")
        object.__setattr__(self, "locations", _readonly(loc))
        object.__setattr__(self, "weights", _readonly(w / total))

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def second_moment(self) -> float:
        """``E[|z|^2]`` of the atom distribution."""
        return float(self.weights @ np.sum(np.square(self.locations), axis=1))

    def to_dict(self) -> dict:
        return {"locations": self.locations.tolist(),
                "weights": self.weights.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "DiscreteDistribution":
        try:
            return DiscreteDistribution(
                np.asarray(d["locations"], dtype=float),
                np.asarray(d["weights"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed discrete distribution: {exc}") from exc


@dataclass(frozen=True)
class CompressionResult:
    """A reduced mixture, its certified W2 bound, and the cluster map."""

    compressed: GaussianMixture
    w2_bound: float
    cluster_assignment: np.ndarray

    def __post_init__(self):
        assign = np.array(self.cluster_assignment, dtype=int)
        if assign.ndim != 1:
            raise ParseError("cluster assignment must map component to cluster")
        if not (np.isfinite(self.w2_bound) and self.w2_bound >= 0.0):
            raise ParseError("w2 bound must be a finite nonnegative real")
        assign.setflags(write=False)
        object.__setattr__(self, "w2_bound", float(self.w2_bound))
        object.__setattr__(self, "cluster_assignment", assign)


def _sq_dists(points, centers):
    d2 = (np.sum(points * points, axis=1)[:, None]
          + np.sum(centers * centers, axis=1)[None, :]
          - 2.0 * points @ centers.T)
    return np.maximum(d2, 0.0)


def _kmeanspp_centers(means, weights, m, rng):
    """Seeded k-means++ over component means, weighted by mixture mass.

    Centers are drawn sequentially from one stream, so runs with the same
    seed and growing ``m`` share their center prefix (nested initialization).
    """
    idx = int(rng.choice(means.shape[0], p=weights))
    centers = [means[idx]]
    d2 = np.sum(np.square(means - centers[0]), axis=1)
    for _ in range(1, m):
        scores = weights * d2
        total = float(scores.sum())
        if total <= 0.0:
            idx = int(rng.choice(means.shape[0], p=weights))
        else:
            idx = int(rng.choice(means.shape[0], p=scores / total))
        centers.append(means[idx])
        d2 = np.minimum(d2, np.sum(np.square(means - centers[-1]), axis=1))
    return np.stack(centers)


def _lloyd_assign(means, weights, centers, max_iters):
    """Mass-weighted Lloyd iterations; returns the final assignment.

    An empty cluster is re-seeded at the component mean farthest from its
    own centroid (deterministic: stable sort, lowest index on ties); when
    duplicate means leave nothing to re-seed with, the cluster stays empty
    and is dropped by the caller.
    """
    n, m = means.shape[0], centers.shape[0]
    prev = None
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iters):
        d2 = _sq_dists(means, centers)
        assign = np.argmin(d2, axis=1)
        for j in range(m):
            if np.any(assign == j):
                continue
            own = d2[np.arange(n), assign]
            order = np.argsort(-own, kind="stable")
            pick = next((int(i) for i in order if own[i] > 0.0), None)
            if pick is None:
                continue
            centers[j] = means[pick]
            d2[:, j] = np.sum(np.square(means - centers[j]), axis=1)
            assign = np.argmin(d2, axis=1)
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        for j in range(m):
            member = assign == j
            if np.any(member):
                w = weights[member]
                centers[j] = (w @ means[member]) / float(w.sum())
    return assign


def _moment_matched(mixture, assign, cluster_ids):
    """Replace each cluster by the Gaussian matching its mass, mean, cov."""
    comps = []
    masses = []
    means = np.stack([c.mean for c in mixture.components])
    for j in cluster_ids:
        member = np.flatnonzero(assign == j)
        w = mixture.weights[member]
        mass = float(w.sum())
        if member.size == 1:
            comps.append(mixture.components[int(member[0])])
            masses.append(mass)
            continue
        mu = (w @ means[member]) / mass
        cov = np.zeros((mixture.dim, mixture.dim))
        for i in member:
            d = means[i] - mu
            cov += mixture.weights[i] * (
                mixture.components[i].full_cov() + np.outer(d, d))
        comps.append(Gaussian(mu, cov / mass))
        masses.append(mass)
    return GaussianMixture(np.asarray(masses), tuple(comps))


def compress_gmm(g, m: int, seed: int) -> CompressionResult:
    """Reduce a Gaussian mixture to at most ``m`` components.

    Mixtures already within the budget are returned unchanged with bound 0.
    Otherwise the component means are clustered by seeded k-means++ followed
    by mass-weighted Lloyd iterations (converged assignments or 200 rounds),
    each cluster is replaced by its moment-matched Gaussian, and the returned
    bound is the mixture-level transport bound between input and result.
    """
    if not isinstance(g, GaussianMixture):
        g = GaussianMixture(np.array([1.0]), (g,))
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise ParseError("target size must be a positive integer")
    if g.size <= m:
        return CompressionResult(g, 0.0, np.arange(g.size))
    means = np.stack([c.mean for c in g.components])
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(means, g.weights, int(m), rng)
    assign = _lloyd_assign(means, g.weights, centers, TOL.lloyd_max_iters)
    cluster_ids = [j for j in range(int(m)) if np.any(assign == j)]
    relabel = {j: k for k, j in enumerate(cluster_ids)}
    compact = np.array([relabel[j] for j in assign], dtype=int)
    compressed = _moment_matched(g, assign, cluster_ids)
    bound, _ = mw2(g, compressed)
    return CompressionResult(compressed, bound, compact)


@dataclass(frozen=True)
class BernoulliMixture:
    """Atom set under an independent keep/drop mask on selected dimensions.

    Each base atom spawns masked copies: every dimension in ``active_dims``
    is kept with probability ``keep_prob`` (independently) and zeroed
    otherwise, while all remaining dimensions are always kept.  With
    ``blocks > 1`` an atom stacks that many equal-length segments and one
    shared mask is applied to every segment, so the mask length is
    ``dim / blocks``.  The implied support size is ``N * 2^len(active_dims)``.
    """

    base: DiscreteDistribution
    keep_prob: float
    active_dims: tuple
    blocks: int = 1

    def __post_init__(self):
        if not (0.0 <= self.keep_prob <= 1.0):
            raise ParseError("keep probability must lie in [0, 1]")
        if not (isinstance(self.blocks, (int, np.integer)) and self.blocks >= 1):
            raise ParseError("blocks must be a positive integer")
        if self.base.dim % self.blocks != 0:
            raise ParseError("atom dimension is not divisible by blocks")
        n = self.base.dim // self.blocks
        dims = tuple(sorted(int(d) for d in self.active_dims))
        if len(set(dims)) != len(dims):
            raise ParseError("active dimensions must be distinct")
        if dims and not (0 <= dims[0] and dims[-1] < n):
            raise ParseError(f"active dimensions must lie in [0, {n})")
        object.__setattr__(self, "keep_prob", float(self.keep_prob))
        object.__setattr__(self, "active_dims", dims)
        object.__setattr__(self, "blocks", int(self.blocks))

    @property
    def mask_dim(self) -> int:
        """Number of maskable dimensions per block."""
        return self.base.dim // self.blocks

    @property
    def support_size(self) -> int:
        return self.base.size * (2 ** len(self.active_dims))

    def expand(self) -> DiscreteDistribution:
        """Explicit atom set over all mask outcomes on the active dimensions.

        Outcome weights are the Bernoulli products
        ``keep_prob^kept * (1-keep_prob)^dropped``; exactly-zero outcomes
        (keep probability 0 or 1) are omitted.
        """
        k = len(self.active_dims)
        theta = self.keep_prob
        if k == 0:
            return self.base
        bits = np.array(np.meshgrid(*([np.array([0.0, 1.0])] * k),
                                    indexing="ij")).reshape(k, -1).T
        kept = bits.sum(axis=1)
        mask_w = theta ** kept * (1.0 - theta) ** (k - kept)
        masks = np.ones((bits.shape[0], self.mask_dim))
        masks[:, list(self.active_dims)] = bits
        masks = np.tile(masks, (1, self.blocks))
        locations = (self.base.locations[:, None, :] * masks[None, :, :])
        weights = self.base.weights[:, None] * mask_w[None, :]
        locations = locations.reshape(-1, self.base.dim)
        weights = weights.reshape(-1)
        keep = weights > 0.0
        return DiscreteDistribution(locations[keep], weights[keep])


def expand_dropout(base: DiscreteDistribution, theta: float,
                   dim_cap: int = TOL.dropout_expand_cap,
                   blocks: int = 1) -> DiscreteDistribution:
    """Apply an independent keep/drop mask to every atom, fully expanded.

    Every maskable dimension is active, so each atom spawns ``2^n`` masked
    copies (``n = dim / blocks``); expansions beyond ``dim_cap`` outcomes
    per atom are rejected with advice to use :func:`compress_dropout`.
    """
    if not isinstance(base, DiscreteDistribution):
        raise ParseError("base must be a DiscreteDistribution")
    if blocks < 1 or base.dim % blocks != 0:
        raise ParseError("atom dimension is not divisible by blocks")
    n = base.dim // blocks
    if 2 ** n > dim_cap:
        raise ParseError(
            f"full mask expansion has 2^{n} outcomes per atom, above the cap "
            f"{dim_cap}; use compress_dropout for a bounded-size result")
    mixture = BernoulliMixture(base, theta, tuple(range(n)), blocks)
    return mixture.expand()


def compress_dropout(base: DiscreteDistribution, theta: float, m: int,
                     blocks: int = 1):
    """Keep mask randomness only on the ``log2(m)`` heaviest dimensions.

    Dimensions are ranked by the mass-weighted squared magnitude of the atom
    coordinates (summed over blocks); the rest are forced to "keep".  Returns
    ``(compressed, w2_bound)`` where the bound charges the discarded mask
    randomness: ``bound^2 = (1-theta) * sum_j pi_j * sum_{d inactive}
    c_{j,d}^2``.
    """
    if not isinstance(base, DiscreteDistribution):
        raise ParseError("base must be a DiscreteDistribution")
    if blocks < 1 or base.dim % blocks != 0:
        raise ParseError("atom dimension is not divisible by blocks")
    n = base.dim // blocks
    if not (isinstance(m, (int, np.integer)) and m >= 1):
        raise ParseError("target support factor must be a positive integer")
    k = int(m).bit_length() - 1
    if 2 ** k != int(m):
        raise ParseError("target support factor must be a power of two")
    if k > n:
        raise ParseError(
            f"target support factor 2^{k} exceeds the 2^{n} mask outcomes")
    sq = np.square(base.locations).reshape(base.size, blocks, n)
    scores = base.weights @ sq.sum(axis=1)
    order = np.argsort(-scores, kind="stable")
    active = tuple(sorted(int(d) for d in order[:k]))
    inactive = [d for d in range(n) if d not in active]
    mixture = BernoulliMixture(base, theta, active, blocks)
    discarded = float(base.weights @ sq[:, :, inactive].sum(axis=(1, 2))) \
        if inactive else 0.0
    bound = math.sqrt((1.0 - float(theta)) * discarded)
    return mixture.expand(), bound
