"""Layered nonlinear Gaussian belief network model state and densities.

Units take values in (-1, 1): a unit's activation is its bias plus the
masked weighted sum of its parents' values, Gaussian noise with per-unit
precision is added, and the sigmoid maps the result into the open interval.
Small precision gives effectively binary units, large precision nearly
deterministic ones.

This module provides:
- the sigmoid pair and the unit log density (with the change-of-variables
  Jacobian), plus its conditional mean by Gauss-Hermite quadrature;
- the model state aggregate: realized structure, per-layer parameters,
  per-datum unit states, data, and hyperparameters;
- activations, the joint log density over realized units and parameters,
  ancestral (fantasy) sampling, and pruning of units with no directed path
  to the visibles;
- a full prior draw used to initialize MCMC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from cibpnet.data_io import Dataset
from cibpnet.prior import EdgeMatrix, HyperParameters, IbpParams, sample_cibp

# Stored unit values are clamped this far inside the open interval so the
# sigmoid inverse stays finite.
UNIT_MARGIN = 1e-12

LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(x):
    """Sigmoid onto (-1, 1): 2 / (1 + e^x) - 1, decreasing and odd."""
    return -np.tanh(0.5 * np.asarray(x, dtype=np.float64))


def sigmoid_inverse(u):
    """Inverse sigmoid ln((1-u)/(1+u)); rejects values outside (-1, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if u.size and np.max(np.abs(u)) >= 1.0:
        raise ValueError("sigmoid_inverse requires |u| < 1")
    return -2.0 * np.arctanh(u)


def clamp_unit(u):
    """Clamp values into the stored open-interval range."""
    return np.clip(u, -1.0 + UNIT_MARGIN, 1.0 - UNIT_MARGIN)


def unit_log_density(u, y, nu):
    """Log density of a unit value given activation y and precision nu.

    Gaussian log density of the inverse-sigmoid value around y, plus the
    Jacobian term -ln((1-u^2)/2); (1-u^2)/2 is the absolute sigmoid slope at
    the matching pre-sigmoid point.
    """
    u = np.asarray(u, dtype=np.float64)
    nu_arr = np.asarray(nu, dtype=np.float64)
    if nu_arr.size and np.min(nu_arr) <= 0:
        raise ValueError("precision must be positive")
    s = sigmoid_inverse(u)
    return (
        -0.5 * nu_arr * (s - y) ** 2
        + 0.5 * (np.log(nu_arr) - LOG_2PI)
        - np.log((1.0 - u * u) / 2.0)
    )


@lru_cache(maxsize=8)
def _hermgauss(n: int):
    t, w = np.polynomial.hermite.hermgauss(n)
    return t, w / math.sqrt(math.pi)


def unit_conditional_mean(y, nu, n_nodes: int = 40):
    """E[u | y, nu] by Gauss-Hermite quadrature over the pre-sigmoid noise."""
    t, w = _hermgauss(n_nodes)
    y = np.asarray(y, dtype=np.float64)
    scale = np.sqrt(2.0 / np.asarray(nu, dtype=np.float64))
    x = y[..., None] + scale[..., None] * t
    return sigmoid(x) @ w


@dataclass
class PriorParams:
    """Per-layer prior parameters for weights, biases, and precisions."""

    weight_mean: float = 0.0
    weight_precision: float = 1.0
    bias_mean: float = 0.0
    bias_precision: float = 1.0
    precision_shape: float = 1.0
    precision_rate: float = 1.0

    def __post_init__(self):
        for name in ("weight_precision", "bias_precision", "precision_shape", "precision_rate"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.weight_mean,
            self.weight_precision,
            self.bias_mean,
            self.bias_precision,
            self.precision_shape,
            self.precision_rate,
        )


@dataclass
class LayerParams:
    """Weights into the layer below, plus per-unit biases and precisions.

    ``weights`` pairs with the edge matrix one index shallower and is None
    for the visible layer.  Weight entries off the edge set are kept at 0.
    """

    weights: np.ndarray | None
    biases: np.ndarray
    precisions: np.ndarray
    priors: PriorParams

    def copy(self) -> "LayerParams":
        return LayerParams(
            None if self.weights is None else self.weights.copy(),
            self.biases.copy(),
            self.precisions.copy(),
            PriorParams(*self.priors.as_tuple()),
        )


class NetworkStructure:
    """Finite realized prefix of the layered edge-matrix cascade.

    ``matrices[i]`` connects layer i+1 (columns, parents) to layer i (rows,
    children); rows of each matrix equal the width of the layer below.
    """

    def __init__(self, visible_width: int, matrices: list[EdgeMatrix]):
        if visible_width < 1:
            raise ValueError("visible width must be >= 1")
        self.visible_width = visible_width
        self.matrices = matrices

    @property
    def depth(self) -> int:
        return len(self.matrices)

    def width(self, m: int) -> int:
        if m == 0:
            return self.visible_width
        return self.matrices[m - 1].cols

    @property
    def widths(self) -> list[int]:
        return [self.width(m) for m in range(self.depth + 1)]

    def validate(self) -> None:
        prev = self.visible_width
        for i, em in enumerate(self.matrices):
            if em.rows != prev:
                raise ValueError(
                    f"matrix {i} has {em.rows} rows but layer {i} has {prev} units"
                )
            if not em.is_compact():
                raise ValueError(f"matrix {i} has empty columns")
            prev = em.cols
        if self.matrices and self.matrices[-1].cols == 0:
            raise ValueError("trailing empty layer; prune before validating")

    def copy(self) -> "NetworkStructure":
        return NetworkStructure(self.visible_width, [m.copy() for m in self.matrices])


class UnitStates:
    """Per-datum unit values for every realized layer.

    ``values[m]`` has shape (N, width(m)).  Layer 0 mirrors the observations
    except at masked-off entries, where it holds the current samples.
    """

    def __init__(self, values: list[np.ndarray]):
        self.values = values

    @property
    def n(self) -> int:
        return self.values[0].shape[0]

    def copy(self) -> "UnitStates":
        return UnitStates([v.copy() for v in self.values])

    def validate(self) -> None:
        for m, v in enumerate(self.values):
            if v.size and np.max(np.abs(v)) >= 1.0:
                raise ValueError(f"layer {m} states leave the open interval")


@dataclass
class ModelState:
    """Aggregate sampler state: structure, parameters, unit states, data."""

    structure: NetworkStructure
    layers: list[LayerParams]
    states: UnitStates
    data: Dataset
    hypers: HyperParameters

    @property
    def depth(self) -> int:
        return self.structure.depth

    @property
    def n_data(self) -> int:
        return self.data.n

    def width(self, m: int) -> int:
        return self.structure.width(m)

    def copy(self) -> "ModelState":
        # the dataset itself is immutable by convention and is shared
        return ModelState(
            self.structure.copy(),
            [lp.copy() for lp in self.layers],
            self.states.copy(),
            self.data,
            self.hypers.copy(),
        )

    def validate(self) -> None:
        self.structure.validate()
        d = self.depth
        if self.data.width != self.structure.visible_width:
            raise ValueError("data width does not match visible width")
        if len(self.layers) != d + 1:
            raise ValueError(f"{len(self.layers)} layer blocks for depth {d}")
        if len(self.states.values) != d + 1:
            raise ValueError(f"{len(self.states.values)} state layers for depth {d}")
        if len(self.hypers.alphas) != d + 1:
            raise ValueError(
                f"{len(self.hypers.alphas)} hyper depths for {d + 1} restaurants"
            )
        n = self.n_data
        for m in range(d + 1):
            k = self.width(m)
            lp = self.layers[m]
            if lp.biases.shape != (k,) or lp.precisions.shape != (k,):
                raise ValueError(f"layer {m} parameter shapes do not match width {k}")
            if lp.precisions.size and lp.precisions.min() <= 0:
                raise ValueError(f"layer {m} has non-positive precisions")
            if m == 0:
                if lp.weights is not None:
                    raise ValueError("visible layer cannot carry weights")
            else:
                want = (self.width(m - 1), k)
                if lp.weights is None or lp.weights.shape != want:
                    raise ValueError(f"layer {m} weights must have shape {want}")
                off = lp.weights[self.structure.matrices[m - 1].z == 0]
                if off.size and np.any(off != 0.0):
                    raise ValueError(f"layer {m} has weights off the edge set")
            if self.states.values[m].shape != (n, k):
                raise ValueError(f"layer {m} states must have shape {(n, k)}")
        self.states.validate()
        obs_mask = self.data.masks if self.data.masks is not None else np.ones(
            self.data.observations.shape, dtype=bool
        )
        if not np.array_equal(
            self.states.values[0][obs_mask], self.data.observations[obs_mask]
        ):
            raise ValueError("observed entries of layer 0 diverge from the data")


def layer_activations(state: ModelState, m: int) -> np.ndarray:
    """Activations y for every unit of layer m and every datum, shape (N, K).

    The deepest realized layer has no realized parents, so its activation is
    the bias alone; the same holds automatically for any parentless unit.
    """
    lp = state.layers[m]
    if m == state.depth:
        return np.tile(lp.biases, (state.n_data, 1))
    wz = state.layers[m + 1].weights * state.structure.matrices[m].z
    return state.states.values[m + 1] @ wz.T + lp.biases


def unit_activation(state: ModelState, m: int, k: int) -> np.ndarray:
    """Activation column for unit k of layer m over all data, shape (N,)."""
    lp = state.layers[m]
    if m == state.depth:
        return np.full(state.n_data, lp.biases[k])
    w = state.layers[m + 1].weights[k]
    z = state.structure.matrices[m].z[k]
    return state.states.values[m + 1] @ (w * z) + lp.biases[k]


def activation(
    structure: NetworkStructure,
    layers: list[LayerParams],
    states: UnitStates,
    m: int,
    n: int,
) -> np.ndarray:
    """Activation vector y for layer m and datum n."""
    if not (0 <= m <= structure.depth):
        raise ValueError(f"layer {m} outside realized depth {structure.depth}")
    if not (0 <= n < states.n):
        raise ValueError(f"datum {n} outside 0..{states.n - 1}")
    lp = layers[m]
    if m == structure.depth:
        return lp.biases.copy()
    wz = layers[m + 1].weights * structure.matrices[m].z
    return wz @ states.values[m + 1][n] + lp.biases


def normal_logpdf(x, mean, precision):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (np.log(precision) - LOG_2PI) - 0.5 * precision * (x - mean) ** 2


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=np.float64)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def _normal_gamma_logpdf(mean, precision, h: HyperParameters) -> float:
    return float(
        gamma_logpdf(precision, h.ng_shape, h.ng_rate)
        + normal_logpdf(mean, h.ng_mean, h.ng_precision * precision)
    )


def joint_log_density(state: ModelState) -> float:
    """Log density of unit states and parameters for the realized network.

    Sums the unit densities over every layer and datum, the Gaussian priors
    on weights and biases, the gamma priors on precisions, and the global
    normal-gamma / gamma hyperprior factors over each layer's prior
    parameters.  Structure probabilities and the priors on the IBP
    hyperparameters are bookkept by the structure moves and are not included.
    """
    state.validate()
    total = 0.0
    h = state.hypers
    for m in range(state.depth + 1):
        lp = state.layers[m]
        y = layer_activations(state, m)
        total += float(np.sum(unit_log_density(state.states.values[m], y, lp.precisions)))
        pr = lp.priors
        if m >= 1:
            z = state.structure.matrices[m - 1].z
            w = lp.weights[z == 1]
            total += float(np.sum(normal_logpdf(w, pr.weight_mean, pr.weight_precision)))
        total += float(np.sum(normal_logpdf(lp.biases, pr.bias_mean, pr.bias_precision)))
        total += float(
            np.sum(gamma_logpdf(lp.precisions, pr.precision_shape, pr.precision_rate))
        )
        total += _normal_gamma_logpdf(pr.weight_mean, pr.weight_precision, h)
        total += _normal_gamma_logpdf(pr.bias_mean, pr.bias_precision, h)
        total += float(gamma_logpdf(pr.precision_shape, *h.shape_hyper))
        total += float(gamma_logpdf(pr.precision_rate, *h.rate_hyper))
    return total


def ancestral_sample(
    structure: NetworkStructure,
    layers: list[LayerParams],
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one visible vector top-down through the realized network."""
    u = None
    for m in range(structure.depth, -1, -1):
        lp = layers[m]
        y = lp.biases.astype(np.float64, copy=True)
        if m < structure.depth:
            wz = layers[m + 1].weights * structure.matrices[m].z
            y += wz @ u
        noise = rng.standard_normal(y.shape[0]) / np.sqrt(lp.precisions)
        u = clamp_unit(sigmoid(y + noise))
    return u


def ancestral_masks(structure: NetworkStructure) -> list[np.ndarray]:
    """Per-layer boolean masks of units with a directed path to a visible."""
    masks = [np.ones(structure.visible_width, dtype=bool)]
    for i, em in enumerate(structure.matrices):
        below = masks[i]
        if em.cols == 0:
            masks.append(np.zeros(0, dtype=bool))
            continue
        masks.append(em.z[below].sum(axis=0) > 0)
    return masks


def prune_non_ancestors(state: ModelState) -> ModelState:
    """Drop units with no directed path to the visibles, in place.

    Removes their parameters, states, and deeper parent chains, then trims
    trailing empty layers and the hyperparameter lists.  The visible-data
    terms of the joint density are unchanged; only the discarded units'
    self-contained factors are dropped.
    """
    masks = ancestral_masks(state.structure)
    if not all(m.all() for m in masks):
        for i, em in enumerate(state.structure.matrices):
            em.z = em.z[np.ix_(masks[i], masks[i + 1])]
        for m in range(1, state.depth + 1):
            lp = state.layers[m]
            lp.weights = lp.weights[np.ix_(masks[m - 1], masks[m])]
            lp.biases = lp.biases[masks[m]]
            lp.precisions = lp.precisions[masks[m]]
            state.states.values[m] = state.states.values[m][:, masks[m]]
    while state.depth > 0 and state.structure.matrices[-1].cols == 0:
        state.structure.matrices.pop()
        state.layers.pop()
        state.states.values.pop()
    state.hypers.truncate_depth(state.depth + 1)
    return state


def positive_gamma(rng: np.random.Generator, shape: float, rate: float, size=None):
    """Gamma draw floored at the smallest normal double.

    Small shapes can underflow to exactly zero, which would make precisions
    and prior parameters invalid; the floor is hit with probability far below
    anything observable.
    """
    draw = rng.gamma(shape, 1.0 / rate, size)
    return np.maximum(draw, np.finfo(np.float64).tiny)


def _draw_prior_params(h: HyperParameters, rng: np.random.Generator) -> PriorParams:
    rho_w = float(positive_gamma(rng, h.ng_shape, h.ng_rate))
    mu_w = rng.normal(h.ng_mean, 1.0 / math.sqrt(h.ng_precision * rho_w))
    rho_g = float(positive_gamma(rng, h.ng_shape, h.ng_rate))
    mu_g = rng.normal(h.ng_mean, 1.0 / math.sqrt(h.ng_precision * rho_g))
    a = float(positive_gamma(rng, h.shape_hyper[0], h.shape_hyper[1]))
    b = float(positive_gamma(rng, h.rate_hyper[0], h.rate_hyper[1]))
    return PriorParams(mu_w, rho_w, mu_g, rho_g, a, b)


def sample_states_from_prior(state: ModelState, rng: np.random.Generator) -> None:
    """Draw all hidden states top-down from the prior, in place.

    Layer 0 keeps the observed data; masked-off entries are drawn from their
    activation distribution given the sampled hidden layers.
    """
    n = state.n_data
    for m in range(state.depth, 0, -1):
        lp = state.layers[m]
        y = layer_activations(state, m)
        noise = rng.standard_normal((n, y.shape[1])) / np.sqrt(lp.precisions)
        state.states.values[m] = clamp_unit(sigmoid(y + noise))
    vis = state.data.observations.copy()
    if state.data.masks is not None and not state.data.masks.all():
        lp = state.layers[0]
        y = layer_activations(state, 0)
        noise = rng.standard_normal(vis.shape) / np.sqrt(lp.precisions)
        draw = clamp_unit(sigmoid(y + noise))
        vis[~state.data.masks] = draw[~state.data.masks]
    state.states.values[0] = vis


def init_from_prior(
    data: Dataset,
    alpha0: float,
    beta0: float,
    rng: np.random.Generator,
    depth_cap: int = 1000,
    **hyper_kwargs,
) -> ModelState:
    """Full prior draw of structure, parameters, and states for a dataset."""
    cs = sample_cibp(data.width, IbpParams(alpha0, beta0), depth_cap, rng)
    if cs.truncated:
        raise RuntimeError(f"prior structure draw hit the depth cap {depth_cap}")
    matrices = [m for m in cs.matrices if m.cols > 0]
    structure = NetworkStructure(data.width, matrices)
    depth = structure.depth
    hypers = HyperParameters.constant(alpha0, beta0, depth + 1, **hyper_kwargs)
    layers = []
    for m in range(depth + 1):
        k = structure.width(m)
        pr = _draw_prior_params(hypers, rng)
        weights = None
        if m >= 1:
            z = matrices[m - 1].z
            weights = np.where(
                z == 1,
                rng.normal(pr.weight_mean, 1.0 / math.sqrt(pr.weight_precision), z.shape),
                0.0,
            )
        biases = rng.normal(pr.bias_mean, 1.0 / math.sqrt(pr.bias_precision), k)
        precisions = positive_gamma(rng, pr.precision_shape, pr.precision_rate, k)
        layers.append(LayerParams(weights, biases, precisions, pr))
    values = [np.zeros((data.n, structure.width(m))) for m in range(depth + 1)]
    state = ModelState(structure, layers, UnitStates(values), data, hypers)
    sample_states_from_prior(state, rng)
    return state
