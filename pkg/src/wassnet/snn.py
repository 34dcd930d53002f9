"""Stochastic-network models, certified mixture propagation, and sampling.

A network is an ordered list of layers (stochastic/deterministic linear,
elementwise activation, dropout).  ``propagate`` pushes a finite input set
through the network, maintaining either an exact atom set or a Gaussian
mixture, and accumulates a ledger whose final entry certifies the
2-Wasserstein distance between the true output distribution and the returned
approximation.  ``sample_network`` draws exact Monte Carlo realizations for
cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TOL
from .errors import ParseError
from .mixtures import (DiscreteDistribution, compress_dropout, compress_gmm)
from .quantizer import (QuantizerTable, activation_signature_w2_bound,
                        signature_of_mixture)
from .stats import Gaussian, GaussianMixture, _readonly

__all__ = [
    "StochasticLinear",
    "DeterministicLinear",
    "Dropout",
    "Activation",
    "SnnModel",
    "PropagationConfig",
    "LedgerRecord",
    "BoundLedger",
    "expected_spectral_bound",
    "push_point_through_stochastic_linear",
    "propagate",
    "sample_network",
]

_ACTIVATION_KINDS = ("relu", "tanh")


@dataclass(frozen=True)
class StochasticLinear:
    """Affine layer with independent Gaussian weights and biases (mean field).

    With ``ntk_scaling`` the layer computes ``(W z + b) / sqrt(n_in)``;
    otherwise ``W z + b``.
    """

    weight_mean: np.ndarray
    weight_var: np.ndarray
    bias_mean: np.ndarray
    bias_var: np.ndarray
    ntk_scaling: bool = False

    def __post_init__(self):
        wm = np.atleast_2d(np.asarray(self.weight_mean, dtype=float))
        wv = np.atleast_2d(np.asarray(self.weight_var, dtype=float))
        bm = np.atleast_1d(np.asarray(self.bias_mean, dtype=float))
        bv = np.atleast_1d(np.asarray(self.bias_var, dtype=float))
        if wm.ndim != 2 or wm.shape != wv.shape:
            raise ParseError("weight mean and variance shapes must match")
        if bm.shape != (wm.shape[0],) or bv.shape != (wm.shape[0],):
            raise ParseError("bias vectors must have one entry per output")
        if not (np.all(np.isfinite(wm)) and np.all(np.isfinite(wv))
                and np.all(np.isfinite(bm)) and np.all(np.isfinite(bv))):
            raise ParseError("layer parameters must be finite")
        if np.any(wv < 0.0) or np.any(bv < 0.0):
            raise ParseError("variances must be nonnegative")
        object.__setattr__(self, "weight_mean", _readonly(wm))
        object.__setattr__(self, "weight_var", _readonly(wv))
        object.__setattr__(self, "bias_mean", _readonly(bm))
        object.__setattr__(self, "bias_var", _readonly(bv))
        object.__setattr__(self, "ntk_scaling", bool(self.ntk_scaling))

    @property
    def n_in(self) -> int:
        return self.weight_mean.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight_mean.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.n_in) if self.ntk_scaling else 1.0


@dataclass(frozen=True)
class DeterministicLinear:
    """Plain affine layer ``z -> W z + b``."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        b = np.atleast_1d(np.asarray(self.bias, dtype=float))
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ParseError("weight must be (n_out, n_in) with matching bias")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ParseError("layer parameters must be finite")
        object.__setattr__(self, "weight", _readonly(w))
        object.__setattr__(self, "bias", _readonly(b))

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Dropout:
    """Independent keep/drop mask; each neuron is kept with ``keep_prob``."""

    keep_prob: float

    def __post_init__(self):
        if not (0.0 < self.keep_prob <= 1.0):
            raise ParseError("keep probability must lie in (0, 1]")
        object.__setattr__(self, "keep_prob", float(self.keep_prob))


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity; both supported kinds are 1-Lipschitz."""

    kind: str

    def __post_init__(self):
        if self.kind not in _ACTIVATION_KINDS:
            raise ParseError(
                f"unknown activation {self.kind!r}; "
                f"supported: {', '.join(_ACTIVATION_KINDS)}")

    @property
    def lipschitz(self) -> float:
        return 1.0

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)


def _is_linear(layer) -> bool:
    return isinstance(layer, (StochasticLinear, DeterministicLinear))


@dataclass(frozen=True)
class SnnModel:
    """Ordered layer list with chained dimensions and a linear final layer."""

    input_dim: int
    layers: tuple

    def __post_init__(self):
        if not (isinstance(self.input_dim, (int, np.integer))
                and self.input_dim >= 1):
            raise ParseError("input dimension must be a positive integer")
        layers = tuple(self.layers)
        if not any(_is_linear(l) for l in layers):
            raise ParseError("model needs at least one linear layer")
        if not _is_linear(layers[-1]):
            raise ParseError("the final layer must be linear")
        cur = int(self.input_dim)
        prev_was_activation = False
        for layer in layers:
            if isinstance(layer, Activation):
                if prev_was_activation:
                    raise ParseError("activation layers must not be adjacent")
                prev_was_activation = True
                continue
            prev_was_activation = False
            if _is_linear(layer):
                if layer.n_in != cur:
                    raise ParseError(
                        f"layer expects {layer.n_in} inputs but receives {cur}")
                cur = layer.n_out
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "layers", layers)

    @property
    def output_dim(self) -> int:
        for layer in reversed(self.layers):
            if _is_linear(layer):
                return layer.n_out
        raise ParseError("model has no linear layer")

    def to_dict(self) -> dict:
        out = []
        for layer in self.layers:
            if isinstance(layer, StochasticLinear):
                out.append({
                    "type": "stochastic_linear",
                    "weight_mean": layer.weight_mean.tolist(),
                    "weight_var": layer.weight_var.tolist(),
                    "bias_mean": layer.bias_mean.tolist(),
                    "bias_var": layer.bias_var.tolist(),
                    "ntk": layer.ntk_scaling,
                })
            elif isinstance(layer, DeterministicLinear):
                out.append({
                    "type": "linear",
                    "weight": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                })
            elif isinstance(layer, Activation):
                out.append({"type": "activation", "kind": layer.kind})
            else:
                out.append({"type": "dropout", "keep_prob": layer.keep_prob})
        return {"input_dim": self.input_dim, "layers": out}

    @staticmethod
    def from_dict(d: dict) -> "SnnModel":
        try:
            layers = []
            for spec in d["layers"]:
                kind = spec["type"]
                if kind == "stochastic_linear":
                    layers.append(StochasticLinear(
                        np.asarray(spec["weight_mean"], dtype=float),
                        np.asarray(spec["weight_var"], dtype=float),
                        np.asarray(spec["bias_mean"], dtype=float),
                        np.asarray(spec["bias_var"], dtype=float),
                        bool(spec.get("ntk", False))))
                elif kind == "linear":
                    layers.append(DeterministicLinear(
                        np.asarray(spec["weight"], dtype=float),
                        np.asarray(spec["bias"], dtype=float)))
                elif kind == "activation":
                    layers.append(Activation(spec["kind"]))
                elif kind == "dropout":
                    layers.append(Dropout(float(spec["keep_prob"])))
                else:
                    raise ParseError(f"unknown layer type {kind!r}")
            return SnnModel(int(d["input_dim"]), tuple(layers))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model object: {exc}") from exc


@dataclass(frozen=True)
class PropagationConfig:
    """Approximation knobs for :func:`propagate`.

    ``signature_budget`` caps the grid size per mixture component;
    ``compression_size`` is the mixture size after each compression step.
    """

    table: QuantizerTable
    signature_budget: int = 10
    compression_size: int = 5
    seed: int = 0
    activation_refinement: bool = True

    def __post_init__(self):
        if not isinstance(self.table, QuantizerTable):
            raise ParseError("config needs a quantizer table")
        if not (isinstance(self.signature_budget, (int, np.integer))
                and self.signature_budget >= 1):
            raise ParseError("signature budget must be a positive integer")
        if not (isinstance(self.compression_size, (int, np.integer))
                and self.compression_size >= 1):
            raise ParseError("compression size must be a positive integer")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise ParseError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class LedgerRecord:
    """Per-linear-layer bound terms and the accumulated certified distance."""

    k: int
    spectral_term: float
    signature_term: float
    compression_term: float
    lipschitz: float
    accumulated: float

    def __post_init__(self):
        vals = (self.spectral_term, self.signature_term,
                self.compression_term, self.lipschitz, self.accumulated)
        if not all(np.isfinite(v) and v >= 0.0 for v in vals):
            raise ParseError("ledger terms must be finite and nonnegative")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "spectral_term": self.spectral_term,
            "signature_term": self.signature_term,
            "compression_term": self.compression_term,
            "lipschitz": self.lipschitz,
            "accumulated": self.accumulated,
        }


@dataclass(frozen=True)
class BoundLedger:
    """Certified error recursion across the linear layers of one propagation.

    The accumulated column satisfies, exactly and auditable by replay,
    ``acc_k = spectral_k * (lipschitz_k * acc_{k-1} + lipschitz_k *
    compression_k + signature_k)`` with ``acc_0 = 0``.
    """

    records: tuple
    input_set_size: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.input_set_size < 1:
            raise ParseError("input-set size must be positive")

    @property
    def final_bound(self) -> float:
        return self.records[-1].accumulated if self.records else 0.0

    def audit(self) -> float:
        """Replay the recursion; raise if any stored value deviates."""
        acc = 0.0
        for rec in self.records:
            acc = rec.spectral_term * (rec.lipschitz * acc
                                       + rec.lipschitz * rec.compression_term
                                       + rec.signature_term)
            if acc != rec.accumulated:
                raise ParseError(
                    f"ledger record k={rec.k} does not reproduce the "
                    f"recursion: {acc} != {rec.accumulated}")
        return acc

    def to_dict(self) -> dict:
        return {
            "input_set_size": self.input_set_size,
            "final_bound": self.final_bound,
            "records": [r.to_dict() for r in self.records],
        }

    @staticmethod
    def from_dict(d: dict) -> "BoundLedger":
        try:
            recs = tuple(LedgerRecord(
                int(r["k"]), float(r["spectral_term"]),
                float(r["signature_term"]), float(r["compression_term"]),
                float(r["lipschitz"]), float(r["accumulated"]))
                for r in d["records"])
            return BoundLedger(recs, int(d["input_set_size"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed ledger object: {exc}") from exc


def expected_spectral_bound(layer, d: int) -> float:
    """Upper bound on ``sqrt(D) * E[||W||^2]^(1/2)`` of the layer map.

    The root expected squared spectral norm is bounded by the Frobenius norm
    of the standard deviations plus the spectral norm of the mean (a
    translation argument); the ``sqrt(D)`` factor extends the bound to a
    weight matrix shared across a stacked input set of size ``D``.
    """
    if d < 1:
        raise ParseError("input-set size must be positive")
    if isinstance(layer, DeterministicLinear):
        return math.sqrt(d) * float(np.linalg.norm(layer.weight, 2))
    if not isinstance(layer, StochasticLinear):
        raise ParseError("spectral bounds apply to linear layers")
    s = layer.scale
    frob = math.sqrt(float(np.sum(layer.weight_var)))
    spec = float(np.linalg.norm(layer.weight_mean, 2))
    return math.sqrt(d) * (s * frob + s * spec)


def push_point_through_stochastic_linear(point, layer: StochasticLinear,
                                         d: int = 1) -> Gaussian:
    """Exact output Gaussian of a stochastic affine layer at a stacked point.

    ``point`` stacks ``d`` input blocks (block-major).  One weight draw is
    shared by all blocks, so outputs of the same neuron correlate across
    blocks: ``cov[(a,i),(b,i)] = s^2 (sum_j var_ij x_aj x_bj + bias_var_i)``
    while different neurons are independent (mean-field).  ``d = 1`` returns
    a diagonal Gaussian.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    if not isinstance(layer, StochasticLinear):
        raise ParseError("expected a stochastic linear layer")
    if d < 1 or point.shape[0] != d * layer.n_in:
        raise ParseError(
            f"point has {point.shape[0]} entries, expected {d} blocks "
            f"of {layer.n_in}")
    s = layer.scale
    blocks = point.reshape(d, layer.n_in)
    mean = s * (blocks @ layer.weight_mean.T + layer.bias_mean)
    if d == 1:
        var = s * s * (np.square(blocks[0]) @ layer.weight_var.T
                       + layer.bias_var)
        return Gaussian(mean.reshape(-1), var)
    # per-neuron block covariance: x_a diag(v_i) x_b^T + bias_var_i
    n_out = layer.n_out
    cross = np.einsum("aj,ij,bj->iab", blocks, layer.weight_var, blocks)
    cov = np.zeros((d * n_out, d * n_out))
    a_idx = np.repeat(np.arange(d), d)
    b_idx = np.tile(np.arange(d), d)
    for i in range(n_out):
        cov[a_idx * n_out + i, b_idx * n_out + i] = \
            s * s * (cross[i, a_idx, b_idx] + layer.bias_var[i])
    return Gaussian(mean.reshape(-1), 0.5 * (cov + cov.T))


def _atoms_through_deterministic(atoms: DiscreteDistribution,
                                 layer: DeterministicLinear,
                                 d: int) -> DiscreteDistribution:
    blocks = atoms.locations.reshape(atoms.size, d, layer.n_in)
    out = blocks @ layer.weight.T + layer.bias
    return DiscreteDistribution(out.reshape(atoms.size, d * layer.n_out),
                                atoms.weights)


def _gaussian_through_deterministic(g: Gaussian, layer: DeterministicLinear,
                                    d: int) -> Gaussian:
    w = np.kron(np.eye(d), layer.weight)
    mean = w @ g.mean + np.tile(layer.bias, d)
    cov = w @ g.full_cov() @ w.T
    return Gaussian(mean, 0.5 * (cov + cov.T))


def _block_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence((int(seed), int(k))).generate_state(1)[0])


def propagate(model: SnnModel, points, cfg: PropagationConfig):
    """Push a finite input set through the network with a certified ledger.

    Returns ``(approximation, ledger)`` where the approximation is a
    GaussianMixture (stochastic output layer) or a DiscreteDistribution
    (deterministic/dropout-only path), over the stacked block-major output
    space of all input points.  The ledger's final bound certifies the
    2-Wasserstein distance to the network's true output distribution.

    The first linear layer maps the deterministic input exactly.  Before any
    later stochastic linear, activation, or dropout layer acting on a
    mixture, the mixture is compressed (transport-bounded) and replaced by
    its signature atoms (quantization-bounded, activation-aware); dropout
    support growth beyond ``2^ceil(log2(compression_size))`` outcomes is
    truncated with its closed-form bound.  All bounds compose through the
    ledger recursion; both supported activations (and the identity) have
    Lipschitz constant 1, which is what lets dropout- and compression-errors
    share one ledger slot.
    """
    if not isinstance(model, SnnModel):
        raise ParseError("propagate expects an SnnModel")
    if not isinstance(cfg, PropagationConfig):
        raise ParseError("propagate expects a PropagationConfig")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != model.input_dim:
        raise ParseError(
            f"points must be (D, {model.input_dim}); got {pts.shape}")
    d = pts.shape[0]

    atoms = DiscreteDistribution(pts.reshape(1, -1), np.array([1.0]))
    mixture = None  # exactly one of atoms/mixture is the live state
    acc = 0.0
    pending_compression = 0.0
    pending_signature = 0.0
    block_lipschitz = 1.0
    records = []
    k = 0

    def reduce_to_atoms(activation_kind=None):
        """Compress the mixture and replace it by signature atoms."""
        nonlocal mixture, atoms, pending_compression, pending_signature
        res = compress_gmm(mixture, cfg.compression_size,
                           _block_seed(cfg.seed, k))
        predicted = res.compressed.size * cfg.signature_budget
        if predicted > TOL.atom_cap:
            raise ParseError(
                f"signature would hold up to {predicted} atoms, above the cap "
                f"{TOL.atom_cap}; lower the signature budget or the "
                "compression size")
        sig, plain_bound = signature_of_mixture(
            res.compressed, cfg.signature_budget, cfg.table)
        if activation_kind is not None and cfg.activation_refinement:
            delta = activation_signature_w2_bound(sig, activation_kind,
                                                  res.compressed)
        else:
            delta = plain_bound
        pending_compression += res.w2_bound
        pending_signature += delta
        atoms = DiscreteDistribution(sig.locations, sig.weights)
        mixture = None

    for layer in model.layers:
        if isinstance(layer, Activation):
            if mixture is not None:
                reduce_to_atoms(layer.kind)
            block_lipschitz = layer.lipschitz
            blocks = atoms.locations  # elementwise, blocks need no reshaping
            atoms = DiscreteDistribution(layer.apply(blocks), atoms.weights)
        elif isinstance(layer, Dropout):
            if mixture is not None:
                reduce_to_atoms()
            n = atoms.dim // d
            mask_budget = 2 ** min(
                n, max(0, int(math.ceil(math.log2(cfg.compression_size)))))
            if atoms.size * mask_budget > TOL.atom_cap:
                raise ParseError(
                    f"dropout expansion would hold {atoms.size * mask_budget} "
                    f"atoms, above the cap {TOL.atom_cap}; lower the "
                    "signature budget or the compression size")
            atoms, drop_bound = compress_dropout(
                atoms, layer.keep_prob, mask_budget, blocks=d)
            pending_compression += drop_bound
        elif isinstance(layer, DeterministicLinear):
            k += 1
            spectral = expected_spectral_bound(layer, d)
            if mixture is not None:
                comps = tuple(_gaussian_through_deterministic(g, layer, d)
                              for g in mixture.components)
                mixture = GaussianMixture(mixture.weights, comps)
            else:
                atoms = _atoms_through_deterministic(atoms, layer, d)
            acc = spectral * (block_lipschitz * acc
                              + block_lipschitz * pending_compression
                              + pending_signature)
            records.append(LedgerRecord(k, spectral, pending_signature,
                                        pending_compression, block_lipschitz,
                                        acc))
            pending_compression = pending_signature = 0.0
            block_lipschitz = 1.0
        else:  # StochasticLinear
            k += 1
            spectral = expected_spectral_bound(layer, d)
            if mixture is not None:
                reduce_to_atoms()
            comps = tuple(
                push_point_through_stochastic_linear(loc, layer, d)
                for loc in atoms.locations)
            mixture = GaussianMixture(atoms.weights, comps)
            atoms = None
            acc = spectral * (block_lipschitz * acc
                              + block_lipschitz * pending_compression
                              + pending_signature)
            records.append(LedgerRecord(k, spectral, pending_signature,
                                        pending_compression, block_lipschitz,
                                        acc))
            pending_compression = pending_signature = 0.0
            block_lipschitz = 1.0

    ledger = BoundLedger(tuple(records), d)
    return (mixture if mixture is not None else atoms), ledger


def sample_network(model: SnnModel, points, n_samples: int, seed: int):
    """Joint Monte Carlo draws of the network output over the input set.

    Each sample draws one weight realization per layer (shared by all input
    points) and one dropout mask per dropout layer, from an independent
    substream derived from ``(seed, sample index)``; rows are the stacked
    block-major outputs.
    """
    if not isinstance(model, SnnModel):
        raise ParseError("sample_network expects an SnnModel")
    if not (isinstance(n_samples, (int, np.integer)) and n_samples >= 1):
        raise ParseError("sample count must be a positive integer")
    if not (isinstance(seed, (int, np.integer)) and seed >= 0):
        raise ParseError("seed must be a nonnegative integer")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != model.input_dim:
        raise ParseError(
            f"points must be (D, {model.input_dim}); got {pts.shape}")
    d = pts.shape[0]
    out = np.empty((int(n_samples), d * model.output_dim))
    children = np.random.SeedSequence(int(seed)).spawn(int(n_samples))
    for row, child in enumerate(children):
        rng = np.random.default_rng(child)
        z = pts
        for layer in model.layers:
            if isinstance(layer, StochasticLinear):
                w = layer.weight_mean + np.sqrt(layer.weight_var) \
                    * rng.standard_normal(layer.weight_mean.shape)
                b = layer.bias_mean + np.sqrt(layer.bias_var) \
                    * rng.standard_normal(layer.bias_mean.shape)
                z = layer.scale * (z @ w.T + b)
            elif isinstance(layer, DeterministicLinear):
                z = z @ layer.weight.T + layer.bias
            elif isinstance(layer, Activation):
                z = layer.apply(z)
            else:
                mask = rng.random(z.shape[1]) < layer.keep_prob
                z = z * mask
        out[row] = z.reshape(-1)
    return out
