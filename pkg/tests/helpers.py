"""Shared toy-model builders and quadrature oracles for the test suite."""

import math

import numpy as np

from cibpnet.data_io import Dataset
from cibpnet.nlgbn import (
    LayerParams,
    ModelState,
    NetworkStructure,
    PriorParams,
    UnitStates,
    clamp_unit,
    unit_log_density,
)
from cibpnet.prior import EdgeMatrix, HyperParameters


def chain_state(
    x_value=0.35,
    n_replicas=1,
    w=1.4,
    bias0=0.2,
    nu0=4.0,
    bias1=-0.3,
    nu1=1.5,
    h_init=0.0,
    alpha=1.0,
    beta=1.0,
    priors0=None,
    priors1=None,
):
    """One visible unit under one hidden unit, with replicated data rows.

    Replicas share all parameters, so every row is an independent copy of
    the same two-unit conditional; pooling rows gives cheap long-run samples.
    """
    obs = np.full((n_replicas, 1), x_value)
    data = Dataset(obs)
    structure = NetworkStructure(1, [EdgeMatrix(np.array([[1]], dtype=np.uint8))])
    layers = [
        LayerParams(None, np.array([bias0]), np.array([nu0]), priors0 or PriorParams()),
        LayerParams(
            np.array([[w]]), np.array([bias1]), np.array([nu1]), priors1 or PriorParams()
        ),
    ]
    values = [obs.copy(), np.full((n_replicas, 1), h_init)]
    hypers = HyperParameters.constant(alpha, beta, 2)
    return ModelState(structure, layers, UnitStates(values), data, hypers)


def empty_data_state(k0=1, alpha=1.0, beta=1.0, bias=0.0, nu=1.0):
    """Visible-only state with no data rows, for flat-likelihood runs."""
    data = Dataset(np.zeros((0, k0)))
    structure = NetworkStructure(k0, [])
    layers = [
        LayerParams(None, np.full(k0, bias), np.full(k0, nu), PriorParams())
    ]
    values = [np.zeros((0, k0))]
    hypers = HyperParameters.constant(alpha, beta, 1)
    return ModelState(structure, layers, UnitStates(values), data, hypers)


def hidden_conditional_grid(state, x_value, n_grid=20001):
    """Unnormalized log conditional of the hidden unit on a dense grid."""
    u = np.linspace(-1 + 1e-9, 1 - 1e-9, n_grid)
    lp1 = unit_log_density(u, state.layers[1].biases[0], state.layers[1].precisions[0])
    w = state.layers[1].weights[0, 0]
    y0 = state.layers[0].biases[0] + w * u
    lp0 = unit_log_density(x_value, y0, state.layers[0].precisions[0])
    return u, lp1 + lp0


def binned_probs_from_grid(u, logp, n_bins=50):
    """Normalize a dense log-density grid and integrate it over equal bins."""
    p = np.exp(logp - logp.max())
    p /= np.trapezoid(p, u)
    edges = np.linspace(-1, 1, n_bins + 1)
    probs = np.empty(n_bins)
    for b in range(n_bins):
        sel = (u >= edges[b]) & (u <= edges[b + 1])
        probs[b] = np.trapezoid(p[sel], u[sel])
    return probs / probs.sum()


def total_variation(samples, probs, n_bins=50):
    counts = np.histogram(samples, bins=np.linspace(-1, 1, n_bins + 1))[0]
    emp = counts / counts.sum()
    return 0.5 * float(np.abs(emp - probs).sum())


def binned_tv_general(samples, probs, edges):
    counts = np.histogram(samples, bins=edges)[0]
    emp = counts / counts.sum()
    return 0.5 * float(np.abs(emp - probs).sum())


def grid_posterior_moments(grid, logp):
    """Mean and variance of a density known up to a constant on a grid."""
    p = np.exp(logp - logp.max())
    z = np.trapezoid(p, grid)
    mean = np.trapezoid(grid * p, grid) / z
    var = np.trapezoid((grid - mean) ** 2 * p, grid) / z
    return float(mean), float(var)
