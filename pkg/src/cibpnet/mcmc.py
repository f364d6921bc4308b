"""Posterior sampling for cascade-structured belief networks.

One sweep composes, in order: multiple-try Metropolis updates of every
hidden unit state (and of masked-off visible entries), the two-phase
structure sampler for every unit (shared-parent Gibbs flips, then a
birth/death proposal for singleton parents), Gibbs updates of weights,
biases, and precisions, conjugate and random-walk updates of the per-layer
prior parameters, random-walk moves on the per-depth IBP hyperparameters,
and a final prune of units with no path to the visibles.

Structure-move bookkeeping keeps the state compact at all times: an
accepted death removes the orphaned parent chain immediately, so restaurant
counts never include disconnected units and the birth and death proposals
are exact reverses of each other.  Both acceptance ratios carry a single
factor of the singleton count, which makes the flat-likelihood equilibrium
of a unit's singleton-parent count exactly Poisson; see the detailed-balance
and prior-recovery tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from cibpnet.nlgbn import (
    LayerParams,
    ModelState,
    PriorParams,
    _draw_prior_params,
    clamp_unit,
    joint_log_density,
    positive_gamma,
    prune_non_ancestors,
    sigmoid,
    sigmoid_inverse,
    unit_activation,
)
from cibpnet.prior import EdgeMatrix, IbpParams, ibp_log_prob


@dataclass
class MoveFlags:
    """Per-family switches; disabled families are skipped by the sweep."""

    hidden: bool = True
    weights: bool = True
    biases: bool = True
    precisions: bool = True
    structure_shared: bool = True
    structure_singleton: bool = True
    layer_priors: bool = True
    cibp_hypers: bool = True


@dataclass
class SweepConfig:
    mtm_candidates: int = 5
    moves: MoveFlags = field(default_factory=MoveFlags)
    singleton_proposal_prob: float = 0.5
    hyper_step_size: float = 0.2
    seed: int = 0
    max_depth: int = 1000
    max_width: int | None = None

    def __post_init__(self):
        if self.mtm_candidates < 1:
            raise ValueError("mtm_candidates must be >= 1")
        if not (0.0 <= self.singleton_proposal_prob <= 1.0):
            raise ValueError("singleton_proposal_prob must be a probability")
        if not (self.hyper_step_size > 0):
            raise ValueError("hyper_step_size must be positive")


@dataclass
class SweepStats:
    mtm_accepted: int = 0
    mtm_proposed: int = 0
    birth_accepted: int = 0
    birth_proposed: int = 0
    death_accepted: int = 0
    death_proposed: int = 0
    hyper_accepted: int = 0
    hyper_proposed: int = 0
    joint_before: float = 0.0
    joint_after: float = 0.0

    @staticmethod
    def _rate(a: int, p: int) -> float:
        return a / p if p else 0.0

    @property
    def mtm_rate(self) -> float:
        return self._rate(self.mtm_accepted, self.mtm_proposed)

    @property
    def birth_rate(self) -> float:
        return self._rate(self.birth_accepted, self.birth_proposed)

    @property
    def death_rate(self) -> float:
        return self._rate(self.death_accepted, self.death_proposed)

    @property
    def hyper_rate(self) -> float:
        return self._rate(self.hyper_accepted, self.hyper_proposed)


# ---------------------------------------------------------------------------
# hidden states: independence-chain multiple-try Metropolis


def sample_hidden_states(
    state: ModelState,
    m: int,
    k: int,
    config: SweepConfig,
    rng: np.random.Generator,
    rows: np.ndarray | None = None,
) -> tuple[int, int]:
    """Multiple-try update of unit (m, k) for the given data rows.

    Candidates are drawn from the unit's activation distribution and weighted
    by the likelihood of its children; selection reuses the unselected
    candidates as the reference set of the independence-chain multiple-try
    rule.  With no children all weights tie, the move always accepts, and the
    result is an exact draw from the activation distribution.  Returns
    (accepted, proposed) counts.
    """
    vals = state.states.values[m]
    if rows is None:
        rows = np.arange(state.n_data)
    n_rows = rows.shape[0]
    if n_rows == 0:
        return 0, 0
    nu = state.layers[m].precisions[k]
    y = unit_activation(state, m, k)[rows]
    u_cur = vals[rows, k]
    n_cand = config.mtm_candidates
    x = y[:, None] + rng.standard_normal((n_rows, n_cand)) / math.sqrt(nu)
    cand = clamp_unit(sigmoid(x))
    child_idx = (
        np.nonzero(state.structure.matrices[m - 1].z[:, k])[0]
        if m >= 1
        else np.empty(0, dtype=int)
    )
    if child_idx.size == 0:
        vals[rows, k] = cand[:, 0]
        return n_rows, n_rows
    w_ck = state.layers[m].weights[child_idx, k]
    nu_c = state.layers[m - 1].precisions[child_idx]
    s_c = sigmoid_inverse(state.states.values[m - 1][rows][:, child_idx])
    wz = state.layers[m].weights[child_idx, :] * state.structure.matrices[m - 1].z[
        child_idx, :
    ]
    y_c = state.states.values[m][rows] @ wz.T + state.layers[m - 1].biases[child_idx]
    cav = y_c - u_cur[:, None] * w_ck[None, :]
    resid = s_c[:, None, :] - cav[:, None, :] - cand[:, :, None] * w_ck[None, None, :]
    lw = -0.5 * np.sum(nu_c * resid * resid, axis=2)
    resid_cur = s_c - cav - u_cur[:, None] * w_ck[None, :]
    lw_cur = -0.5 * np.sum(nu_c * resid_cur * resid_cur, axis=1)
    gumbel = rng.gumbel(size=(n_rows, n_cand))
    pick = np.argmax(lw + gumbel, axis=1)
    lw_pick = lw[np.arange(n_rows), pick]
    mx = np.maximum(lw.max(axis=1), lw_cur)
    expsum = np.sum(np.exp(lw - mx[:, None]), axis=1)
    with np.errstate(divide="ignore"):
        log_num = np.log(expsum)
        log_den = np.log(expsum - np.exp(lw_pick - mx) + np.exp(lw_cur - mx))
    accept = np.log(rng.random(n_rows)) < log_num - log_den
    vals[rows[accept], k] = cand[np.arange(n_rows), pick][accept]
    return int(accept.sum()), n_rows


def sample_hidden_state(
    state: ModelState, n: int, m: int, k: int, config: SweepConfig, rng: np.random.Generator
) -> float:
    """Single-datum wrapper around :func:`sample_hidden_states`."""
    sample_hidden_states(state, m, k, config, rng, rows=np.array([n]))
    return float(state.states.values[m][n, k])


# ---------------------------------------------------------------------------
# Gibbs updates for weights, biases, precisions


def gibbs_weight(
    state: ModelState, m: int, k: int, kp: int, rng: np.random.Generator
) -> float:
    """Gibbs draw of the weight on edge (m, k, kp); the edge must exist."""
    em = state.structure.matrices[m - 1]
    if em.z[k, kp] != 1:
        raise ValueError(f"no edge from parent {kp} of layer {m} to child {k}")
    pr = state.layers[m].priors
    nu_child = state.layers[m - 1].precisions[k]
    u_par = state.states.values[m][:, kp]
    s_child = sigmoid_inverse(state.states.values[m - 1][:, k])
    w_cur = state.layers[m].weights[k, kp]
    xi = unit_activation(state, m - 1, k) - w_cur * u_par
    rho_post = pr.weight_precision + nu_child * float(np.sum(u_par * u_par))
    mu_post = (
        pr.weight_precision * pr.weight_mean
        + nu_child * float(np.sum(u_par * (s_child - xi)))
    ) / rho_post
    w_new = rng.normal(mu_post, 1.0 / math.sqrt(rho_post))
    state.layers[m].weights[k, kp] = w_new
    return float(w_new)


def gibbs_bias(state: ModelState, m: int, k: int, rng: np.random.Generator) -> float:
    """Gibbs draw of the bias of unit (m, k)."""
    pr = state.layers[m].priors
    nu = state.layers[m].precisions[k]
    chi = unit_activation(state, m, k) - state.layers[m].biases[k]
    s = sigmoid_inverse(state.states.values[m][:, k])
    rho_post = pr.bias_precision + state.n_data * nu
    mu_post = (pr.bias_precision * pr.bias_mean + nu * float(np.sum(s - chi))) / rho_post
    b_new = rng.normal(mu_post, 1.0 / math.sqrt(rho_post))
    state.layers[m].biases[k] = b_new
    return float(b_new)


def gibbs_precision(state: ModelState, m: int, k: int, rng: np.random.Generator) -> float:
    """Gibbs draw of the precision of unit (m, k) from its gamma conditional."""
    pr = state.layers[m].priors
    y = unit_activation(state, m, k)
    s = sigmoid_inverse(state.states.values[m][:, k])
    shape = pr.precision_shape + state.n_data / 2.0
    rate = pr.precision_rate + 0.5 * float(np.sum((s - y) ** 2))
    nu_new = float(positive_gamma(rng, shape, rate))
    state.layers[m].precisions[k] = nu_new
    return nu_new


# ---------------------------------------------------------------------------
# structure phase one: shared parents


def shared_parent_probability(
    eta_minus: int, k_m: int, beta: float, loglik_ratio: float
) -> float:
    """Bernoulli probability of an edge to a non-singleton candidate parent.

    Prior weight eta_minus / (k_m + beta - 1) against its complement, tilted
    by the child's data log-likelihood ratio for edge present vs absent.
    """
    p1 = eta_minus / (k_m + beta - 1.0)
    with np.errstate(divide="ignore"):
        logit = math.log(p1) - (math.log1p(-p1) if p1 < 1.0 else -math.inf)
    logit += loglik_ratio
    if logit >= 0:
        return 1.0 / (1.0 + math.exp(-logit))
    return math.exp(logit) / (1.0 + math.exp(logit))


def sample_shared_parents(
    state: ModelState, m: int, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Resample unit (m, k)'s edges to every non-singleton candidate parent.

    Candidates with other children keep or gain the edge with the conditional
    Bernoulli probability; a newly created edge draws its weight from the
    layer prior first, which makes the flip an exact Gibbs step.  Singleton
    parents are left to the birth/death phase.  Returns the updated row.
    """
    if m >= state.depth:
        return np.zeros(0, dtype=np.uint8)
    em = state.structure.matrices[m]
    z = em.z
    weights = state.layers[m + 1].weights
    eta_minus = em.column_sums() - z[k, :]
    beta = state.hypers.betas[m]
    k_m = state.width(m)
    nu = state.layers[m].precisions[k]
    s = sigmoid_inverse(state.states.values[m][:, k])
    y = unit_activation(state, m, k)
    pr_up = state.layers[m + 1].priors
    for kp in range(z.shape[1]):
        if eta_minus[kp] == 0:
            continue
        u_par = state.states.values[m + 1][:, kp]
        if z[k, kp]:
            w_kp = weights[k, kp]
            y_cav = y - w_kp * u_par
        else:
            w_kp = rng.normal(
                pr_up.weight_mean, 1.0 / math.sqrt(pr_up.weight_precision)
            )
            y_cav = y
        ll1 = -0.5 * nu * float(np.sum((s - y_cav - w_kp * u_par) ** 2))
        ll0 = -0.5 * nu * float(np.sum((s - y_cav) ** 2))
        p_edge = shared_parent_probability(int(eta_minus[kp]), k_m, beta, ll1 - ll0)
        if rng.random() < p_edge:
            z[k, kp] = 1
            weights[k, kp] = w_kp
            y = y_cav + w_kp * u_par
        else:
            z[k, kp] = 0
            weights[k, kp] = 0.0
            y = y_cav
    return z[k, :].copy()


# ---------------------------------------------------------------------------
# structure phase two: singleton birth/death


class _ProposalBlocked(Exception):
    """Birth proposal would exceed a configured depth or width cap."""


def singleton_birth_log_ratio(
    k_circ: int, k_m: int, alpha: float, beta: float, loglik_ratio: float
) -> float:
    """Log acceptance ratio for inserting a singleton parent.

    The prior part is the conditional Poisson rate of the unit's singleton
    count, alpha*beta / (beta + k_m - 1), over one plus the current count:
    the uniform-selection factor of the reverse death appears once.  Paired
    with :func:`singleton_death_log_ratio` this gives exact reciprocity and
    the Poisson equilibrium over singleton counts.
    """
    return (
        math.log(alpha * beta)
        - math.log(k_circ + 1.0)
        - math.log(beta + k_m - 1.0)
        + loglik_ratio
    )


def singleton_death_log_ratio(
    k_circ: int, k_m: int, alpha: float, beta: float, loglik_ratio: float
) -> float:
    """Log acceptance ratio for removing one of k_circ singleton parents."""
    return (
        math.log(float(k_circ))
        + math.log(beta + k_m - 1.0)
        - math.log(alpha * beta)
        + loglik_ratio
    )


def _shape_snapshot(state: ModelState) -> dict:
    return {
        "n_matrices": len(state.structure.matrices),
        "mats": [(em, em.z) for em in state.structure.matrices],
        "n_layers": len(state.layers),
        "layers": [
            (lp, lp.weights, lp.biases, lp.precisions) for lp in state.layers
        ],
        "states": list(state.states.values),
        "n_hypers": len(state.hypers.alphas),
    }


def _shape_restore(state: ModelState, snap: dict) -> None:
    del state.structure.matrices[snap["n_matrices"]:]
    for em, z in snap["mats"]:
        em.z = z
    del state.layers[snap["n_layers"]:]
    for lp, w, b, p in snap["layers"]:
        lp.weights, lp.biases, lp.precisions = w, b, p
    state.states.values = list(snap["states"])
    state.hypers.truncate_depth(snap["n_hypers"])


def _append_unit(
    state: ModelState,
    layer: int,
    child_row: int,
    config: SweepConfig,
    rng: np.random.Generator,
    new_units: list[tuple[int, int]],
) -> int:
    """Append one unit to ``layer`` with a single child edge, prior draws for
    its weight, bias, and precision, and a recursively sampled parent row.

    All array changes replace the arrays, so a shape snapshot taken before
    the proposal restores the previous state exactly.
    """
    if layer > config.max_depth:
        raise _ProposalBlocked
    if layer == state.depth + 1:
        # new deepest layer: empty edge matrix, fresh parameter block, and
        # hyperparameters covering the new boundary restaurant
        below = state.width(layer - 1)
        state.structure.matrices.append(
            EdgeMatrix(np.zeros((below, 0), dtype=np.uint8))
        )
        pr_new = _draw_prior_params(state.hypers, rng)
        state.layers.append(
            LayerParams(np.zeros((below, 0)), np.zeros(0), np.zeros(0), pr_new)
        )
        state.states.values.append(np.zeros((state.n_data, 0)))
        state.hypers.ensure_depth(
            state.depth + 1, rng, from_prior=config.moves.cibp_hypers
        )
    if config.max_width is not None and state.width(layer) + 1 > config.max_width:
        raise _ProposalBlocked
    em = state.structure.matrices[layer - 1]
    lp = state.layers[layer]
    j = em.cols
    col = np.zeros((em.rows, 1), dtype=np.uint8)
    col[child_row, 0] = 1
    em.z = np.hstack([em.z, col])
    w_col = np.zeros((em.rows, 1))
    w_col[child_row, 0] = rng.normal(
        lp.priors.weight_mean, 1.0 / math.sqrt(lp.priors.weight_precision)
    )
    lp.weights = np.hstack([lp.weights, w_col])
    lp.biases = np.append(
        lp.biases,
        rng.normal(lp.priors.bias_mean, 1.0 / math.sqrt(lp.priors.bias_precision)),
    )
    lp.precisions = np.append(
        lp.precisions,
        positive_gamma(rng, lp.priors.precision_shape, lp.priors.precision_rate),
    )
    state.states.values[layer] = np.hstack(
        [state.states.values[layer], np.zeros((state.n_data, 1))]
    )
    new_units.append((layer, j))
    # the new unit is a fresh customer in the next restaurant up
    alpha_l = state.hypers.alphas[layer]
    beta_l = state.hypers.betas[layer]
    n_customers = state.width(layer)
    denom = n_customers + beta_l - 1.0
    if layer < state.depth:
        em_up = state.structure.matrices[layer]
        lp_up = state.layers[layer + 1]
        eta = em_up.column_sums()
        em_up.z = np.vstack([em_up.z, np.zeros((1, em_up.cols), dtype=np.uint8)])
        lp_up.weights = np.vstack([lp_up.weights, np.zeros((1, em_up.cols))])
        taste = rng.random(eta.shape[0]) < eta / denom
        for c in np.nonzero(taste)[0]:
            em_up.z[j, c] = 1
            lp_up.weights[j, c] = rng.normal(
                lp_up.priors.weight_mean, 1.0 / math.sqrt(lp_up.priors.weight_precision)
            )
    n_new = int(rng.poisson(alpha_l * beta_l / denom))
    for _ in range(n_new):
        _append_unit(state, layer + 1, j, config, rng, new_units)
    return j


def _singleton_columns(state: ModelState, m: int, k: int) -> np.ndarray:
    """Columns of the parent matrix whose only child is unit (m, k)."""
    if m >= state.depth:
        return np.empty(0, dtype=int)
    em = state.structure.matrices[m]
    sums = em.column_sums()
    return np.nonzero((sums == 1) & (em.z[k, :] == 1))[0]


def sample_singleton_parents(
    state: ModelState,
    m: int,
    k: int,
    config: SweepConfig,
    rng: np.random.Generator,
    stats: SweepStats | None = None,
) -> None:
    """Birth/death Metropolis-Hastings move on unit (m, k)'s singleton parents.

    A birth draws a whole new parent unit from the cascade prior (weight,
    bias, precision, deeper connections, and its unit states top-down) and is
    accepted with probability alpha*beta / ((K+1)(beta + K_m - 1)) times the
    child's likelihood ratio, K being the current singleton count.  A death
    removes the edge to a uniformly chosen singleton and prunes the orphaned
    chain immediately, keeping the state compact.  The two moves are exact
    reverses, giving the non-truncated equilibrium over structures.
    """
    stats = stats if stats is not None else SweepStats()
    k_circ = _singleton_columns(state, m, k).shape[0]
    alpha_m = state.hypers.alphas[m]
    beta_m = state.hypers.betas[m]
    k_m = state.width(m)
    nu = state.layers[m].precisions[k]
    s = sigmoid_inverse(state.states.values[m][:, k])
    if rng.random() < config.singleton_proposal_prob:
        stats.birth_proposed += 1
        y_old = unit_activation(state, m, k)
        snap = _shape_snapshot(state)
        new_units: list[tuple[int, int]] = []
        try:
            j = _append_unit(state, m + 1, k, config, rng, new_units)
        except _ProposalBlocked:
            _shape_restore(state, snap)
            return
        for layer, idx in sorted(new_units, key=lambda t: -t[0]):
            y_new_unit = unit_activation(state, layer, idx)
            noise = rng.standard_normal(state.n_data) / math.sqrt(
                state.layers[layer].precisions[idx]
            )
            state.states.values[layer][:, idx] = clamp_unit(sigmoid(y_new_unit + noise))
        w_new = state.layers[m + 1].weights[k, j]
        u_new = state.states.values[m + 1][:, j]
        y_new = y_old + w_new * u_new
        llr = -0.5 * nu * float(np.sum((s - y_new) ** 2 - (s - y_old) ** 2))
        log_a = singleton_birth_log_ratio(k_circ, k_m, alpha_m, beta_m, llr)
        if math.log(rng.random()) < log_a:
            stats.birth_accepted += 1
        else:
            _shape_restore(state, snap)
    else:
        if k_circ == 0:
            return
        stats.death_proposed += 1
        cols = _singleton_columns(state, m, k)
        j = int(cols[rng.integers(cols.shape[0])])
        w_j = state.layers[m + 1].weights[k, j]
        u_j = state.states.values[m + 1][:, j]
        y_old = unit_activation(state, m, k)
        y_new = y_old - w_j * u_j
        llr = -0.5 * nu * float(np.sum((s - y_new) ** 2 - (s - y_old) ** 2))
        log_a = singleton_death_log_ratio(k_circ, k_m, alpha_m, beta_m, llr)
        if math.log(rng.random()) < log_a:
            stats.death_accepted += 1
            state.structure.matrices[m].z[k, j] = 0
            state.layers[m + 1].weights[k, j] = 0.0
            prune_non_ancestors(state)


# ---------------------------------------------------------------------------
# layer prior parameters and IBP hyperparameters


def _normal_gamma_update(
    xs: np.ndarray, state: ModelState, rng: np.random.Generator
) -> tuple[float, float]:
    h = state.hypers
    n = xs.size
    mean = float(xs.mean()) if n else 0.0
    ss = float(np.sum((xs - mean) ** 2)) if n else 0.0
    kn = h.ng_precision + n
    mun = (h.ng_precision * h.ng_mean + n * mean) / kn
    an = h.ng_shape + n / 2.0
    bn = h.ng_rate + 0.5 * ss + 0.5 * h.ng_precision * n * (mean - h.ng_mean) ** 2 / kn
    rho = float(positive_gamma(rng, an, bn))
    mu = rng.normal(mun, 1.0 / math.sqrt(kn * rho))
    return float(mu), rho


def sample_layer_prior_params(
    state: ModelState, m: int, rng: np.random.Generator, step: float = 0.3
) -> PriorParams:
    """Resample layer m's prior parameters under the global hyperpriors.

    Weight and bias blocks are conjugate normal-gamma updates; the gamma
    shape over precisions moves by log-space random walk and the rate by its
    conjugate gamma conditional.  With no weights present the weight block
    reduces to a hyperprior draw.
    """
    lp = state.layers[m]
    h = state.hypers
    if m >= 1:
        w_data = lp.weights[state.structure.matrices[m - 1].z == 1]
    else:
        w_data = np.empty(0)
    mu_w, rho_w = _normal_gamma_update(w_data, state, rng)
    mu_g, rho_g = _normal_gamma_update(lp.biases, state, rng)
    nus = lp.precisions
    n_units = nus.size
    sum_log = float(np.sum(np.log(nus))) if n_units else 0.0
    sum_nu = float(np.sum(nus)) if n_units else 0.0
    a = lp.priors.precision_shape
    b = lp.priors.precision_rate

    def shape_log_target(a_val: float) -> float:
        lt = (h.shape_hyper[0] - 1.0) * math.log(a_val) - h.shape_hyper[1] * a_val
        lt += n_units * (a_val * math.log(b) - float(gammaln(a_val)))
        lt += (a_val - 1.0) * sum_log
        return lt

    a_prop = a * math.exp(step * rng.standard_normal())
    log_r = shape_log_target(a_prop) - shape_log_target(a) + math.log(a_prop / a)
    if math.log(rng.random()) < log_r:
        a = a_prop
    b = float(positive_gamma(rng, h.rate_hyper[0] + n_units * a, h.rate_hyper[1] + sum_nu))
    lp.priors = PriorParams(mu_w, rho_w, mu_g, rho_g, a, b)
    return lp.priors


def sample_cibp_hypers(
    state: ModelState, config: SweepConfig, rng: np.random.Generator
) -> tuple[int, int]:
    """Log-space random-walk moves on every realized restaurant's (alpha, beta).

    The likelihood is the restaurant-replay probability of the matrix at that
    depth; the boundary restaurant past the deepest layer uses the empty
    matrix, i.e. the cascade's termination factor.  Proposals beyond the
    configured caps are rejected outright.  Returns (accepted, proposed).
    """
    h = state.hypers
    accepted = proposed = 0
    for i in range(state.depth + 1):
        if i < state.depth:
            em = state.structure.matrices[i].left_ordered()
        else:
            em = EdgeMatrix(np.zeros((state.width(state.depth), 0), dtype=np.uint8))
        ll = ibp_log_prob(em, IbpParams(h.alphas[i], h.betas[i]), reorder=False)
        for which in ("alpha", "beta"):
            proposed += 1
            cur = h.alphas[i] if which == "alpha" else h.betas[i]
            cap = h.alpha_max if which == "alpha" else h.beta_max
            prop = cur * math.exp(config.hyper_step_size * rng.standard_normal())
            if prop > cap:
                continue
            if which == "alpha":
                cand = IbpParams(prop, h.betas[i])
            else:
                cand = IbpParams(h.alphas[i], prop)
            ll_new = ibp_log_prob(em, cand, reorder=False)
            log_r = (
                ll_new
                - ll
                - h.prior_rate * (prop - cur)
                + math.log(prop / cur)
            )
            if math.log(rng.random()) < log_r:
                if which == "alpha":
                    h.alphas[i] = prop
                else:
                    h.betas[i] = prop
                ll = ll_new
                accepted += 1
    return accepted, proposed


# ---------------------------------------------------------------------------
# the full sweep


def _missing_columns(state: ModelState) -> list[tuple[int, np.ndarray]]:
    if state.data.masks is None or state.data.masks.all():
        return []
    out = []
    for k in range(state.width(0)):
        rows = np.nonzero(~state.data.masks[:, k])[0]
        if rows.size:
            out.append((k, rows))
    return out


def hidden_pass(
    state: ModelState, config: SweepConfig, rng: np.random.Generator
) -> tuple[int, int]:
    """Multiple-try updates of every hidden unit and masked visible entry."""
    acc = prop = 0
    for m in range(1, state.depth + 1):
        for k in range(state.width(m)):
            a, p = sample_hidden_states(state, m, k, config, rng)
            acc += a
            prop += p
    for k, rows in _missing_columns(state):
        a, p = sample_hidden_states(state, 0, k, config, rng, rows=rows)
        acc += a
        prop += p
    return acc, prop


def sweep(
    state: ModelState, config: SweepConfig, rng: np.random.Generator
) -> tuple[ModelState, SweepStats]:
    """One full pass over all move families, with rollback on failure.

    Order: hidden states (all data, all units, plus masked-off visible
    entries), the two structure phases per layer and unit from the visibles
    upward, weights, biases, precisions, per-layer prior parameters, IBP
    hyperparameters, and a final prune.  The joint log density must be finite
    before and after; any exception restores the state to its sweep-start
    snapshot and re-raises.
    """
    backup = state.copy()
    try:
        stats = SweepStats()
        stats.joint_before = joint_log_density(state)
        if not math.isfinite(stats.joint_before):
            raise RuntimeError(f"joint log density not finite: {stats.joint_before}")
        mv = config.moves
        if mv.hidden:
            a, p = hidden_pass(state, config, rng)
            stats.mtm_accepted += a
            stats.mtm_proposed += p
        if mv.structure_shared or mv.structure_singleton:
            m = 0
            while m <= state.depth:
                for k in range(state.width(m)):
                    if mv.structure_shared:
                        sample_shared_parents(state, m, k, rng)
                    if mv.structure_singleton:
                        sample_singleton_parents(state, m, k, config, rng, stats)
                m += 1
        if mv.weights:
            for m in range(1, state.depth + 1):
                for k, kp in np.argwhere(state.structure.matrices[m - 1].z == 1):
                    gibbs_weight(state, m, int(k), int(kp), rng)
        if mv.biases:
            for m in range(state.depth + 1):
                for k in range(state.width(m)):
                    gibbs_bias(state, m, k, rng)
        if mv.precisions:
            for m in range(state.depth + 1):
                for k in range(state.width(m)):
                    gibbs_precision(state, m, k, rng)
        if mv.layer_priors:
            for m in range(state.depth + 1):
                sample_layer_prior_params(state, m, rng)
        if mv.cibp_hypers:
            a, p = sample_cibp_hypers(state, config, rng)
            stats.hyper_accepted += a
            stats.hyper_proposed += p
        prune_non_ancestors(state)
        stats.joint_after = joint_log_density(state)
        if not math.isfinite(stats.joint_after):
            raise RuntimeError(f"joint log density not finite: {stats.joint_after}")
        return state, stats
    except Exception:
        state.structure = backup.structure
        state.layers = backup.layers
        state.states = backup.states
        state.hypers = backup.hypers
        raise


def progress_line(sweep_index: int, state: ModelState, stats: SweepStats) -> str:
    """Tab-separated progress record for one sweep.

    Columns: sweep index, joint log density, active depth, all layer widths,
    alpha and beta of the first restaurant, then the multiple-try, birth,
    death, and hyperparameter acceptance rates.
    """
    cols = [str(sweep_index), format(stats.joint_after, ".10g"), str(state.depth)]
    cols += [str(w) for w in state.structure.widths]
    cols += [format(state.hypers.alphas[0], ".10g"), format(state.hypers.betas[0], ".10g")]
    cols += [
        format(r, ".6f")
        for r in (stats.mtm_rate, stats.birth_rate, stats.death_rate, stats.hyper_rate)
    ]
    return "\t".join(cols)
