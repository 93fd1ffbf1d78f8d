"""Single-mixture learning by minimizing the regularized composite transportation
distance between the empirical measure and the mixture.

The alternation is: (1) closed-form relaxed transport plan (row-wise softmax of
the negative log-likelihood cost at temperature lam) whose column sums give the
mixture weights, and (2) atom updates solving the stationarity condition
grad A(theta_j) = sum_i (pi_ij / omega_j) T(X_i).  Each sweep cannot increase
the regularized objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import expfam, ot
from .expfam import FamilySpec
from .ot import CostMatrix, Mixture, TransportPlan

logger = logging.getLogger(__name__)

#: weights below this are treated as empty clusters
EMPTY_WEIGHT_EPS = 1e-8

RANDOM_POINTS = "random_points"


@dataclass
class MixtureFitConfig:
    """Hyperparameters for a single-mixture fit.

    Attributes:
      n_components: maximum number of mixture components K.
      lam: entropic penalty lambda > 0.
      max_iter: maximum outer sweeps.
      tol: relative objective-change stopping tolerance (0 disables early stop).
      seed: RNG seed for initialization.
      init: a Mixture to start from, or None for K random data points.
      reseed_empty: reseed atoms whose weight collapses below EMPTY_WEIGHT_EPS.
    """

    n_components: int
    lam: float
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    init: Mixture | None = None
    reseed_empty: bool = True

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


def nll_cost_matrix(spec: FamilySpec, data, atoms: np.ndarray) -> CostMatrix:
    """(n, K) cost matrix with entries -log f(X_i | theta_j)."""
    return CostMatrix(
        -expfam.log_density_matrix(spec, data, atoms), kind=ot.NEG_LOG_LIKELIHOOD
    )


def update_plan_and_weights(M, n: int, lam: float):
    """Relaxed plan (rows sum to 1/n) and its column sums as mixture weights."""
    plan = ot.relaxed_row_plan(M, n, lam)
    weights = plan.values.sum(axis=0)
    return plan, weights


def init_atoms_from_points(
    spec: FamilySpec, data, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Atoms located at K distinct data points (categorical points are
    eps-smoothed one-hot means)."""
    n = len(data)
    if n < k:
        raise ValueError(f"cannot draw {k} distinct points from {n} observations")
    idx = rng.choice(n, size=k, replace=False)
    stats = expfam.sufficient_statistics(spec, data)[idx]
    return expfam.mean_to_natural(spec, _smooth_means(spec, stats))


def _smooth_means(spec: FamilySpec, means: np.ndarray) -> np.ndarray:
    if spec.kind == expfam.CATEGORICAL:
        means = np.clip(means, expfam.CATEGORICAL_EPS, None)
        means = means / means.sum(axis=-1, keepdims=True)
    return means


def update_atoms(
    spec: FamilySpec,
    stats: np.ndarray,
    plan: TransportPlan,
    weights: np.ndarray,
    data=None,
    rng: np.random.Generator | None = None,
    reseed_empty: bool = True,
) -> np.ndarray:
    """Solve the atom stationarity equations given a plan and weights.

    ``stats`` are the stacked sufficient statistics T(X_i).  Empty clusters
    (weight < EMPTY_WEIGHT_EPS) are reseeded to a random data point when
    requested, otherwise left at the mean implied by their residual mass.
    """
    empty = weights < EMPTY_WEIGHT_EPS
    if np.any(empty) and not reseed_empty:
        raise RuntimeError(
            f"{int(empty.sum())} empty cluster(s) with reseeding disabled"
        )
    safe_w = np.where(empty, 1.0, weights)
    means = (plan.values.T @ stats) / safe_w[:, None]
    atoms = expfam.mean_to_natural(spec, _smooth_means(spec, means))
    if np.any(empty):
        if rng is None or data is None:
            raise RuntimeError("reseeding requires data and an RNG")
        logger.info("reseeding %d empty cluster(s)", int(empty.sum()))
        idx = rng.choice(len(data), size=int(empty.sum()), replace=False)
        repl = expfam.mean_to_natural(
            spec, _smooth_means(spec, expfam.sufficient_statistics(spec, data)[idx])
        )
        atoms[empty] = repl
    return atoms


def mixture_objective(data, mixture: Mixture, lam: float) -> float:
    """<pi, M> - lam H(pi) evaluated at the closed-form relaxed plan, where the
    inner infimum over row-constrained plans is attained."""
    M = nll_cost_matrix(mixture.spec, data, mixture.atoms)
    plan = ot.relaxed_row_plan(M, len(data), lam)
    return objective_at_plan(M, plan, lam)


def objective_at_plan(M, plan: TransportPlan, lam: float) -> float:
    Mv = M.values if isinstance(M, CostMatrix) else np.asarray(M, dtype=float)
    return float(np.sum(plan.values * Mv) - lam * ot.entropy(plan))


def fit_mixture(data, spec: FamilySpec, config: MixtureFitConfig):
    """Alternating minimization of the regularized composite distance.

    Returns:
      (Mixture, trace) where trace holds one objective value per sweep and is
      non-increasing up to floating-point slack.
    """
    n = len(data)
    k = config.n_components
    if n < k:
        logger.warning("fitting %d components to only %d points", k, n)
    rng = np.random.default_rng(config.seed)
    stats = expfam.sufficient_statistics(spec, data)
    if config.init is not None:
        atoms = np.array(config.init.atoms, dtype=float)
        if atoms.shape != (k, spec.dim):
            raise ValueError("provided init does not match (K, dim)")
    else:
        atoms = init_atoms_from_points(spec, data, k, rng)

    trace: list[float] = []
    weights = np.full(k, 1.0 / k)
    for _ in range(config.max_iter):
        M = nll_cost_matrix(spec, data, atoms)
        plan, weights = update_plan_and_weights(M, n, config.lam)
        atoms = update_atoms(
            spec, stats, plan, weights,
            data=data, rng=rng, reseed_empty=config.reseed_empty,
        )
        M = nll_cost_matrix(spec, data, atoms)
        value = objective_at_plan(M, plan, config.lam)
        if not np.isfinite(value):
            raise FloatingPointError("mixture objective became non-finite")
        if (
            trace
            and config.tol > 0
            and abs(trace[-1] - value) <= config.tol * max(1.0, abs(trace[-1]))
        ):
            trace.append(value)
            break
        trace.append(value)
    return Mixture(spec, weights, atoms), trace
