"""Two-parameter Indian buffet process and its cascading extension.

This module provides:
- Restaurant-process sampling of two-parameter IBP edge matrices and of the
  cascading IBP (CIBP), in which the dishes of each restaurant become the
  customers of the next, yielding layered directed structures of unbounded
  depth.
- The Markov chain on layer widths induced by the cascade: its Poisson
  transition rate, trace simulation, and the drift of the identity Lyapunov
  function (negative drift above a finite width certifies almost-sure
  absorption at width zero).
- Exact log-probability of an edge matrix under the restaurant construction,
  used as the structure likelihood for hyperparameter inference.
- Depth-indexed hyperparameter containers with light-tailed, capped priors.
- A plain-text adjacency format for structure samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class IbpParams:
    """Two-parameter IBP: alpha controls dishes per customer, beta sparsity."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive, got {self.beta}")


class EdgeMatrix:
    """Binary edge matrix between two adjacent layers.

    Rows index child units (the layer below, the restaurant's customers),
    columns index parent units (dishes).  A compact matrix has no all-zero
    columns; sampling produces compact matrices in creation order.
    """

    def __init__(self, z: np.ndarray):
        z = np.asarray(z, dtype=np.uint8)
        if z.ndim != 2:
            raise ValueError(f"edge matrix must be 2-D, got shape {z.shape}")
        if z.size and z.max() > 1:
            raise ValueError("edge matrix entries must be 0 or 1")
        self.z = z

    @property
    def rows(self) -> int:
        return self.z.shape[0]

    @property
    def cols(self) -> int:
        return self.z.shape[1]

    @property
    def active_columns(self) -> int:
        """Number of columns with at least one entry."""
        if self.z.size == 0:
            return 0
        return int(np.count_nonzero(self.z.sum(axis=0)))

    @property
    def entries(self) -> list[tuple[int, int]]:
        """All (child, parent) index pairs with an edge."""
        rr, cc = np.nonzero(self.z)
        return list(zip(rr.tolist(), cc.tolist()))

    def column_sums(self) -> np.ndarray:
        return self.z.sum(axis=0, dtype=np.int64)

    def row_sums(self) -> np.ndarray:
        return self.z.sum(axis=1, dtype=np.int64)

    def is_compact(self) -> bool:
        """True iff every stored column is nonzero."""
        return self.active_columns == self.cols

    def left_ordered(self) -> "EdgeMatrix":
        """Canonical form: columns sorted by first-tasting customer.

        Ties keep their current relative order, so matrices built by the
        restaurant process are returned unchanged.
        """
        if self.cols == 0:
            return EdgeMatrix(self.z.copy())
        first = np.argmax(self.z, axis=0).astype(np.int64)
        first[self.column_sums() == 0] = self.rows  # empty columns sort last
        order = np.argsort(first, kind="stable")
        return EdgeMatrix(self.z[:, order].copy())

    def copy(self) -> "EdgeMatrix":
        return EdgeMatrix(self.z.copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeMatrix) and self.z.shape == other.z.shape and bool(
            np.array_equal(self.z, other.z)
        )

    def __repr__(self) -> str:
        return f"EdgeMatrix({self.rows}x{self.cols}, {int(self.z.sum())} edges)"


@dataclass
class WidthTrace:
    """Realized path of the layer-width Markov chain."""

    widths: list[int]
    absorbed: bool

    def __post_init__(self):
        seen_zero = False
        for w in self.widths:
            if w < 0:
                raise ValueError("widths must be nonnegative")
            if seen_zero and w != 0:
                raise ValueError("width 0 is absorbing; positive width after 0")
            seen_zero = seen_zero or w == 0


@dataclass
class CibpSample:
    """Sequence of edge matrices drawn from the cascade.

    The terminating all-empty matrix is included when the recursion absorbs;
    ``truncated`` is True iff the depth cap was hit before absorption.
    """

    matrices: list[EdgeMatrix]
    truncated: bool

    @property
    def widths(self) -> list[int]:
        """Layer widths K0, K1, ... for every sampled matrix."""
        if not self.matrices:
            return []
        return [self.matrices[0].rows] + [m.active_columns for m in self.matrices]

    @property
    def depth(self) -> int:
        """Number of layers with at least one unit beyond the visibles."""
        return sum(1 for m in self.matrices if m.active_columns > 0)


@dataclass
class HyperParameters:
    """Depth-indexed IBP parameters plus global hyperprior settings.

    ``alphas[i]`` and ``betas[i]`` govern the restaurant that connects layer
    i+1 (dishes) to layer i (customers).  The lists always cover the boundary
    restaurant one past the deepest realized matrix, so the termination factor
    of the cascade has its own parameters.

    The prior on each alpha and beta is exponential with rate ``prior_rate``,
    truncated at the finite caps ``alpha_max`` and ``beta_max``.  The
    normal-gamma and gamma settings are the global hyperpriors tying the
    per-layer weight, bias, and precision prior parameters together.
    """

    alphas: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)
    alpha_max: float = 20.0
    beta_max: float = 20.0
    prior_rate: float = 1.0
    ng_mean: float = 0.0
    ng_precision: float = 1.0
    ng_shape: float = 1.0
    ng_rate: float = 1.0
    shape_hyper: tuple[float, float] = (1.0, 1.0)
    rate_hyper: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if len(self.alphas) != len(self.betas):
            raise ValueError("alphas and betas must have equal length")
        for a, b in zip(self.alphas, self.betas):
            if not (0 < a <= self.alpha_max):
                raise ValueError(f"alpha {a} outside (0, {self.alpha_max}]")
            if not (0 < b <= self.beta_max):
                raise ValueError(f"beta {b} outside (0, {self.beta_max}]")

    def params(self, i: int) -> IbpParams:
        return IbpParams(self.alphas[i], self.betas[i])

    def sample_prior(self, rng: np.random.Generator, cap: float) -> float:
        """Draw from the truncated exponential hyperprior by inversion."""
        u = rng.random()
        # CDF of Exp(rate) truncated to (0, cap]
        c = -math.expm1(-self.prior_rate * cap)
        return -math.log1p(-u * c) / self.prior_rate

    def ensure_depth(
        self, n: int, rng: np.random.Generator, from_prior: bool = True
    ) -> None:
        """Extend the per-depth lists to cover restaurants 0..n-1.

        With ``from_prior`` the new depths are drawn from the truncated
        exponential hyperprior (the correct treatment when the
        hyperparameters are sampled variables); otherwise the final entry is
        repeated, the configuration semantics used when they are held fixed.
        """
        if not from_prior and not self.alphas and n > 0:
            raise ValueError("cannot extend empty hyperparameter lists by repetition")
        while len(self.alphas) < n:
            if from_prior:
                self.alphas.append(self.sample_prior(rng, self.alpha_max))
                self.betas.append(self.sample_prior(rng, self.beta_max))
            else:
                self.alphas.append(self.alphas[-1])
                self.betas.append(self.betas[-1])

    def truncate_depth(self, n: int) -> None:
        del self.alphas[n:]
        del self.betas[n:]

    def copy(self) -> "HyperParameters":
        return HyperParameters(
            alphas=list(self.alphas),
            betas=list(self.betas),
            alpha_max=self.alpha_max,
            beta_max=self.beta_max,
            prior_rate=self.prior_rate,
            ng_mean=self.ng_mean,
            ng_precision=self.ng_precision,
            ng_shape=self.ng_shape,
            ng_rate=self.ng_rate,
            shape_hyper=self.shape_hyper,
            rate_hyper=self.rate_hyper,
        )

    @classmethod
    def constant(cls, alpha: float, beta: float, depth: int, **kwargs) -> "HyperParameters":
        return cls(alphas=[alpha] * depth, betas=[beta] * depth, **kwargs)


def poisson_rate(k: int, params: IbpParams) -> float:
    """Mean number of dishes created by k customers.

    Direct summation of alpha * sum_{j=1..k} beta / (j + beta - 1); exact in
    double precision at the widths this library works with.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if k == 0:
        return 0.0
    j = np.arange(1, k + 1, dtype=np.float64)
    return float(params.alpha * np.sum(params.beta / (j + params.beta - 1.0)))


def drift(k: int, params: IbpParams) -> float:
    """Expected one-step change of the layer width at current width k.

    Uses the identity Lyapunov function, so the drift is the Poisson rate
    minus k.  Width zero is absorbing and is rejected here.
    """
    if k < 1:
        raise ValueError(f"drift requires k >= 1, got {k}")
    return poisson_rate(k, params) - k


def expected_out_degree(k: int, beta: float) -> float:
    """Expected children per parent when k customers share the restaurant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (beta > 0):
        raise ValueError(f"beta must be positive, got {beta}")
    j = np.arange(1, k + 1, dtype=np.float64)
    return float(k / np.sum(beta / (beta + j - 1.0)))


def sample_ibp_row(
    eta: np.ndarray, customer: int, params: IbpParams, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Draw one customer's row given existing dish popularities.

    ``eta`` holds per-dish counts of previous tasters and ``customer`` is the
    1-indexed arrival position.  Returns the boolean taste vector over
    existing dishes and the number of newly created dishes.
    """
    if customer < 1:
        raise ValueError("customer index is 1-based")
    denom = customer + params.beta - 1.0
    eta = np.asarray(eta, dtype=np.float64)
    taste = rng.random(eta.shape[0]) < eta / denom
    n_new = int(rng.poisson(params.alpha * params.beta / denom))
    return taste, n_new


def sample_ibp(customers: int, params: IbpParams, rng: np.random.Generator) -> EdgeMatrix:
    """Draw an edge matrix from the two-parameter IBP restaurant process.

    Customer j tastes existing dish k with probability eta_k / (j + beta - 1)
    and then creates Poisson(alpha * beta / (j + beta - 1)) new dishes.
    Columns come out in creation order, which is the canonical left order.
    """
    if customers < 1:
        raise ValueError(f"customers must be >= 1, got {customers}")
    col_rows: list[list[int]] = []
    eta: list[int] = []
    for j in range(1, customers + 1):
        if eta:
            taste, n_new = sample_ibp_row(np.array(eta, dtype=np.float64), j, params, rng)
            for k in np.nonzero(taste)[0]:
                col_rows[k].append(j - 1)
                eta[k] += 1
        else:
            _, n_new = sample_ibp_row(np.empty(0), j, params, rng)
        for _ in range(n_new):
            col_rows.append([j - 1])
            eta.append(1)
    z = np.zeros((customers, len(col_rows)), dtype=np.uint8)
    for k, rows_k in enumerate(col_rows):
        z[rows_k, k] = 1
    return EdgeMatrix(z)


def sample_cibp(
    visible: int,
    hypers: IbpParams | list[IbpParams],
    depth_cap: int,
    rng: np.random.Generator,
) -> CibpSample:
    """Draw a cascade of edge matrices until absorption or the depth cap.

    ``hypers`` is either a single parameter pair used at every depth or a
    per-depth sequence; a sequence shorter than the realized depth is extended
    by repeating its final element.  The result is flagged truncated when the
    cap is reached with the last layer still populated, never silently.
    """
    if visible < 1:
        raise ValueError(f"visible width must be >= 1, got {visible}")
    if depth_cap < 1:
        raise ValueError(f"depth_cap must be >= 1, got {depth_cap}")
    if isinstance(hypers, IbpParams):
        seq = [hypers]
    else:
        seq = list(hypers)
        if not seq:
            raise ValueError("hypers sequence must be nonempty")
    matrices: list[EdgeMatrix] = []
    k = visible
    while True:
        if len(matrices) >= depth_cap:
            return CibpSample(matrices, truncated=True)
        p = seq[min(len(matrices), len(seq) - 1)]
        m = sample_ibp(k, p, rng)
        matrices.append(m)
        k = m.active_columns
        if k == 0:
            return CibpSample(matrices, truncated=False)


def simulate_width_chain(
    k0: int, params: IbpParams, max_steps: int, rng: np.random.Generator
) -> WidthTrace:
    """Simulate the width Markov chain K -> Poisson(rate(K)) from k0."""
    if k0 < 0:
        raise ValueError(f"k0 must be nonnegative, got {k0}")
    widths = [int(k0)]
    while widths[-1] > 0 and len(widths) - 1 < max_steps:
        widths.append(int(rng.poisson(poisson_rate(widths[-1], params))))
    return WidthTrace(widths, absorbed=widths[-1] == 0)


def ibp_log_prob(matrix: EdgeMatrix, params: IbpParams, reorder: bool = True) -> float:
    """Log-probability of an edge matrix under the restaurant construction.

    Replays the process in left (creation) order: per customer, a Poisson
    term for the dishes it creates and a Bernoulli term for every previously
    created dish.  An empty matrix with j rows is the event that all j
    customers created nothing; all-zero columns are outside the support.

    Column-order conventions only shift this by a constant in (alpha, beta),
    so it serves directly as the structure likelihood for hyperparameter
    moves.
    """
    em = matrix.left_ordered() if reorder else matrix
    z = em.z
    rows, cols = z.shape
    if rows < 1:
        raise ValueError("matrix must have at least one customer row")
    if cols and (z.sum(axis=0) == 0).any():
        raise ValueError("all-zero columns are outside the IBP support")
    first = np.argmax(z, axis=0) if cols else np.empty(0, dtype=int)
    alpha, beta = params.alpha, params.beta
    lp = 0.0
    eta = np.zeros(cols, dtype=np.float64)
    for j in range(1, rows + 1):
        denom = j + beta - 1.0
        lam = alpha * beta / denom
        existing = np.nonzero(first < j - 1)[0]
        if existing.size:
            p = eta[existing] / denom
            taken = z[j - 1, existing].astype(bool)
            with np.errstate(divide="ignore"):
                lp += float(np.sum(np.where(taken, np.log(p), np.log1p(-p))))
        created = np.nonzero(first == j - 1)[0]
        d = created.size
        lp += d * math.log(lam) - lam - float(gammaln(d + 1))
        eta[existing] += z[j - 1, existing]
        eta[created] = 1.0
    return lp


def structure_to_text(matrices: list[EdgeMatrix], visible: int) -> str:
    """Serialize a matrix cascade as header plus one line per edge.

    Header: ``layers L widths K0 K1 ...``.  Edge lines are ``m child parent``
    with m the 1-based matrix index connecting layer m parents to layer m-1
    children.
    """
    widths = [visible] + [m.cols for m in matrices]
    lines = ["layers %d widths %s" % (len(matrices), " ".join(str(w) for w in widths))]
    for i, m in enumerate(matrices):
        if m.rows != widths[i]:
            raise ValueError(f"matrix {i} has {m.rows} rows, expected {widths[i]}")
        for child, parent in m.entries:
            lines.append(f"{i + 1} {child} {parent}")
    return "\n".join(lines) + "\n"


def structure_from_text(text: str) -> tuple[list[EdgeMatrix], int]:
    """Parse the adjacency format written by :func:`structure_to_text`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty structure file")
    head = lines[0].split()
    if len(head) < 3 or head[0] != "layers" or head[2] != "widths":
        raise ValueError(f"bad structure header: {lines[0]!r}")
    n_layers = int(head[1])
    widths = [int(w) for w in head[3:]]
    if len(widths) != n_layers + 1:
        raise ValueError(f"header lists {len(widths)} widths for {n_layers} layers")
    mats = [np.zeros((widths[i], widths[i + 1]), dtype=np.uint8) for i in range(n_layers)]
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise ValueError(f"bad edge line: {ln!r}")
        m, child, parent = (int(p) for p in parts)
        if not (1 <= m <= n_layers):
            raise ValueError(f"edge refers to layer {m} outside 1..{n_layers}")
        mats[m - 1][child, parent] = 1
    return [EdgeMatrix(z) for z in mats], widths[0]
