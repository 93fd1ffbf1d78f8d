"""Regularized composite transportation barycenter of a collection of mixtures.

Given J mixtures over a common family and simplex coefficients a_j, the
barycenter is a mixture with at most L components minimizing
sum_j a_j (<pi^j, C^j> - lam H(pi^j)) where C^j is the KL cost between the
j-th atom set and the candidate atoms and pi^j couples the j-th weights with
the shared candidate weights.  Weights are updated by iterative Bregman
projections on the shared second marginal, plans by Sinkhorn, and atoms by a
plan-weighted average of source natural parameters (exact stationarity).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from .expfam import logsumexp

from . import expfam, ot
from .expfam import FamilySpec
from .ot import Mixture, TransportPlan

logger = logging.getLogger(__name__)


@dataclass
class BarycenterConfig:
    """Hyperparameters for a barycenter fit.

    coefficients of None means uniform 1/J.
    """

    n_components: int
    lam: float
    coefficients: np.ndarray | None = None
    max_iter: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.coefficients is not None:
            a = np.asarray(self.coefficients, dtype=float)
            if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
                raise ValueError("coefficients must lie on the simplex")
            self.coefficients = a


def update_barycenter_weights(
    costs: list[np.ndarray],
    source_weights: list[np.ndarray],
    coefficients: np.ndarray,
    lam: float,
    current_w: np.ndarray | None = None,
    max_iter: int = 10_000,
    tol: float = 1e-11,
) -> np.ndarray:
    """Shared second marginal minimizing sum_j a_j OT_lam(omega^j, w; C^j).

    Iterative Bregman projections: alternately scale each kernel's rows to
    omega^j, take the a-weighted geometric mean of the column marginals as the
    shared marginal, and rescale columns, until the shared marginal is a fixed
    point.  Inputs with zero coefficient are ignored.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    active = np.nonzero(coefficients > 0)[0]
    if active.size == 0:
        raise ValueError("all coefficients are zero")
    a = coefficients[active] / coefficients[active].sum()
    L = np.asarray(costs[active[0]]).shape[1]
    # batch inputs of identical row count so each projection is one array op
    ks = np.array([np.asarray(costs[j]).shape[0] for j in active])
    blocks = []
    with np.errstate(divide="ignore"):
        for k in np.unique(ks):
            sel = np.nonzero(ks == k)[0]
            logK = np.stack([-np.asarray(costs[active[i]], dtype=float) / lam for i in sel])
            log_omega = np.log(
                np.stack([np.asarray(source_weights[active[i]], dtype=float) for i in sel])
            )
            blocks.append([a[sel], logK, log_omega, np.zeros((sel.size, L))])
    # note: the projection state must start from the kernels (v = 0); with a
    # free shared marginal the limit is the Bregman projection of the start,
    # so warm-started duals would change the answer.  current_w is unused
    # beyond keeping a stable signature for callers.
    del current_w
    w_prev = np.full(L, np.inf)
    converged = False
    for _ in range(max_iter):
        log_w = np.zeros(L)
        for block in blocks:
            aj, logK, log_omega, v = block
            u = log_omega - logsumexp(logK + v[:, None, :], axis=2)
            phi = logsumexp(u[:, :, None] + logK, axis=1)  # (Jb, L)
            log_w = log_w + (aj[:, None] * (v + phi)).sum(axis=0)
            block.append(phi)
        for block in blocks:
            phi = block.pop()
            block[3] = log_w[None, :] - phi
        w_new = np.exp(log_w)
        if np.max(np.abs(w_new - w_prev)) < tol:
            converged = True
            break
        w_prev = w_new
    if not converged:
        logger.warning("barycenter weight update did not reach tol %.1e", tol)
    w = np.exp(log_w - logsumexp(log_w))
    return w


def update_partial_plans(
    costs: list[np.ndarray],
    source_weights: list[np.ndarray],
    w: np.ndarray,
    lam: float,
) -> list[TransportPlan]:
    """Entropic plans coupling each source weight vector with the shared w."""
    return [
        ot.sinkhorn(C, omega, w, lam).plan
        for C, omega in zip(costs, source_weights)
    ]


def update_barycenter_atoms(
    plans: list[TransportPlan],
    source_atoms: list[np.ndarray],
    coefficients: np.ndarray,
    spec: FamilySpec,
) -> np.ndarray:
    """Coefficient- and plan-weighted average of source natural parameters:
    psi_v = sum_j a_j sum_u pi^j_uv theta^j_u / sum_j a_j sum_u pi^j_uv."""
    coefficients = np.asarray(coefficients, dtype=float)
    L = plans[0].values.shape[1]
    num = np.zeros((L, spec.dim))
    den = np.zeros(L)
    for a_j, plan, atoms in zip(coefficients, plans, source_atoms):
        if a_j == 0:
            continue
        p = plan.values if isinstance(plan, TransportPlan) else np.asarray(plan)
        num += a_j * (p.T @ np.asarray(atoms, dtype=float))
        den += a_j * p.sum(axis=0)
    if np.any(den <= 0):
        raise RuntimeError("barycenter atom update hit a zero-mass column")
    psi = num / den[:, None]
    if spec.kind == expfam.CATEGORICAL:
        psi = expfam.gauge_fix(psi)
    return psi


def barycenter_objective(
    mixtures: list[Mixture],
    coefficients: np.ndarray,
    candidate: Mixture,
    lam: float,
) -> float:
    """sum_j a_j (regularized OT between mixture j and the candidate)."""
    coefficients = np.asarray(coefficients, dtype=float)
    total = 0.0
    for a_j, P in zip(coefficients, mixtures):
        if a_j == 0:
            continue
        res = ot.composite_transport(P, candidate, lam)
        total += a_j * res.regularized_value
    return float(total)


def _init_candidate_atoms(
    mixtures: list[Mixture], L: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample L atoms from the pooled source atoms, preferring distinct values."""
    pool = np.vstack([m.atoms for m in mixtures])
    _, first = np.unique(pool.round(12), axis=0, return_index=True)
    distinct = pool[np.sort(first)]
    if len(distinct) >= L:
        idx = rng.choice(len(distinct), size=L, replace=False)
        return distinct[idx]
    extra = rng.choice(len(pool), size=L - len(distinct), replace=True)
    return np.vstack([distinct, pool[extra]])


def fit_barycenter(
    mixtures: list[Mixture],
    spec: FamilySpec,
    config: BarycenterConfig,
):
    """Alternate weight, plan, and atom updates until the objective stabilizes.

    Returns:
      (Mixture with at most L components, trace) with a non-increasing trace of
      sum_j a_j (<pi^j, C^j> - lam H(pi^j)) evaluated at the stored plans.
    """
    J = len(mixtures)
    if J == 0:
        raise ValueError("need at least one input mixture")
    if any(m.spec != spec for m in mixtures):
        raise ValueError("all mixtures must share the family spec")
    coeff = (
        config.coefficients
        if config.coefficients is not None
        else np.full(J, 1.0 / J)
    )
    if len(coeff) != J:
        raise ValueError("coefficients length must match number of mixtures")
    L = config.n_components
    rng = np.random.default_rng(config.seed)
    psi = _init_candidate_atoms(mixtures, L, rng)
    w = np.full(L, 1.0 / L)
    source_weights = [m.weights for m in mixtures]
    source_atoms = [m.atoms for m in mixtures]

    trace: list[float] = []
    for _ in range(config.max_iter):
        stacked = np.vstack(source_atoms)
        offsets = np.concatenate(([0], np.cumsum([len(a) for a in source_atoms])))
        big = expfam.bregman_matrix(spec, stacked, psi)
        costs = [big[offsets[j]:offsets[j + 1]] for j in range(J)]
        w = update_barycenter_weights(costs, source_weights, coeff, config.lam)
        plans = [None] * J
        active = np.nonzero(coeff > 0)[0]
        ks = np.array([m.n_components for m in mixtures])
        for k in np.unique(ks[active]):
            idx = active[ks[active] == k]
            p, _, _ = ot.sinkhorn_batch(
                np.stack([costs[j] for j in idx]),
                np.stack([source_weights[j] for j in idx]),
                np.tile(w, (idx.size, 1)),
                config.lam,
            )
            for bi, j in enumerate(idx):
                plans[j] = TransportPlan(p[bi], source_weights[j], w)
        psi = update_barycenter_atoms(
            [plans[j] for j in active],
            [source_atoms[j] for j in active],
            coeff[active],
            spec,
        )
        stacked = np.vstack([source_atoms[j] for j in active])
        big = expfam.bregman_matrix(spec, stacked, psi)
        offsets = np.concatenate(([0], np.cumsum([len(source_atoms[j]) for j in active])))
        value = 0.0
        for bi, j in enumerate(active):
            C_new = big[offsets[bi]:offsets[bi + 1]]
            value += coeff[j] * (
                float(np.sum(plans[j].values * C_new))
                - config.lam * ot.entropy(plans[j])
            )
        if not np.isfinite(value):
            raise FloatingPointError("barycenter objective became non-finite")
        if (
            trace
            and config.tol > 0
            and abs(trace[-1] - value) <= config.tol * max(1.0, abs(trace[-1]))
        ):
            trace.append(value)
            break
        trace.append(value)
    return Mixture(spec, w, psi), trace
