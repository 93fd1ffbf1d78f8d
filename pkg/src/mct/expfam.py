"""Exponential-family calculus: log-partition, mean map, densities, Bregman/KL costs.

Two families are supported:

* isotropic Gaussian with fixed variance ``sigma2`` (natural parameter
  ``eta = mu / sigma2``, log-partition ``A(eta) = sigma2 * ||eta||^2 / 2``),
* categorical over ``V`` cells in the overcomplete softmax parameterization,
  gauge-fixed so that ``logsumexp(theta) == 0``.

All functions are pure and operate on float64 numpy arrays.  Atom matrices
have shape ``(K, dim)`` with one natural parameter per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
GAUSSIAN = "gaussian"
CATEGORICAL = "categorical"

#: floor applied to categorical mean parameters before taking logs
CATEGORICAL_EPS = 1e-10

#: tolerance on |logsumexp(theta)| for gauge-fixed categorical parameters
GAUGE_TOL = 1e-9


def logsumexp(a, axis=-1, keepdims=False):
    """Max-shifted log-sum-exp; tolerates -inf entries (rows of all -inf give
    -inf).  Kept local because it sits on the hot path of every solver."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def softmax(a, axis=-1):
    """exp(a) normalized along ``axis``, computed max-shifted."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - np.where(np.isfinite(m), m, 0.0))
    return e / np.sum(e, axis=axis, keepdims=True)


class FamilyError(ValueError):
    """Invalid family specification or parameter for a family."""


@dataclass(frozen=True)
class FamilySpec:
    """Descriptor of the exponential family used by a dataset or model.

    Attributes:
      kind: ``"gaussian"`` or ``"categorical"``.
      dim: dimension of the natural parameter (``d`` for Gaussian,
        ``V`` for categorical).
      sigma2: fixed Gaussian variance; ignored for categorical.
    """

    kind: str
    dim: int
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, CATEGORICAL):
            raise FamilyError(f"unknown family kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise FamilyError(f"dim must be a positive integer, got {self.dim}")
        if self.kind == GAUSSIAN and not self.sigma2 > 0:
            raise FamilyError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.kind == CATEGORICAL and self.dim < 2:
            raise FamilyError(f"categorical dim must be >= 2, got {self.dim}")

    def to_dict(self) -> dict:
        if self.kind == GAUSSIAN:
            return {"type": "gaussian", "dim": int(self.dim), "sigma2": float(self.sigma2)}
        return {"type": "categorical", "dim": int(self.dim)}

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        try:
            kind = d["type"]
            dim = d["dim"]
        except (KeyError, TypeError) as exc:
            raise FamilyError(f"malformed family spec: {d!r}") from exc
        if kind == GAUSSIAN:
            return cls(GAUSSIAN, int(dim), float(d.get("sigma2", 1.0)))
        if kind == CATEGORICAL:
            return cls(CATEGORICAL, int(dim))
        raise FamilyError(f"unknown family type {kind!r}")


def _check_theta(spec: FamilySpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.dim:
        raise FamilyError(
            f"parameter dimension {theta.shape[-1]} does not match family dim {spec.dim}"
        )
    if not np.all(np.isfinite(theta)):
        raise FamilyError("natural parameter has non-finite entries")
    return theta


def gauge_fix(theta: np.ndarray) -> np.ndarray:
    """Shift categorical natural parameters so that logsumexp(theta) == 0."""
    theta = np.asarray(theta, dtype=float)
    return theta - logsumexp(theta, axis=-1, keepdims=True)


def log_partition(spec: FamilySpec, theta: np.ndarray) -> np.ndarray:
    """A(theta); broadcasts over leading axes of ``theta``."""
    theta = _check_theta(spec, theta)
    if spec.kind == GAUSSIAN:
        return 0.5 * spec.sigma2 * np.sum(theta * theta, axis=-1)
    return logsumexp(theta, axis=-1)


def grad_log_partition(spec: FamilySpec, theta: np.ndarray) -> np.ndarray:
    """Mean parameter grad A(theta): Gaussian mean, or categorical probabilities."""
    theta = _check_theta(spec, theta)
    if spec.kind == GAUSSIAN:
        return spec.sigma2 * theta
    return softmax(theta, axis=-1)


def mean_to_natural(spec: FamilySpec, mean: np.ndarray) -> np.ndarray:
    """Invert grad A.  Categorical means are clamped at CATEGORICAL_EPS,
    renormalized, and the result is gauge-fixed."""
    mean = np.asarray(mean, dtype=float)
    if mean.shape[-1] != spec.dim:
        raise FamilyError(
            f"mean dimension {mean.shape[-1]} does not match family dim {spec.dim}"
        )
    if not np.all(np.isfinite(mean)):
        raise FamilyError("mean parameter has non-finite entries")
    if spec.kind == GAUSSIAN:
        return mean / spec.sigma2
    if np.any(mean < -CATEGORICAL_EPS):
        raise FamilyError("categorical mean has negative entries")
    total = np.sum(mean, axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise FamilyError("categorical mean does not lie on the simplex")
    p = np.clip(mean, CATEGORICAL_EPS, None)
    p = p / np.sum(p, axis=-1, keepdims=True)
    return gauge_fix(np.log(p))


def sufficient_statistic(spec: FamilySpec, x) -> np.ndarray:
    """T(x): the observation itself (Gaussian) or a one-hot vector (categorical)."""
    if spec.kind == GAUSSIAN:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != spec.dim:
            raise FamilyError(f"observation dim {x.shape[-1]} != family dim {spec.dim}")
        return x
    idx = int(x)
    if not 0 <= idx < spec.dim:
        raise FamilyError(f"category index {idx} out of range [0, {spec.dim})")
    t = np.zeros(spec.dim)
    t[idx] = 1.0
    return t


def sufficient_statistics(spec: FamilySpec, xs) -> np.ndarray:
    """Stacked T(x) for a batch: (n, dim)."""
    if spec.kind == GAUSSIAN:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != spec.dim:
            raise FamilyError(f"expected (n, {spec.dim}) observations, got {xs.shape}")
        return xs
    idx = np.asarray(xs, dtype=int)
    if idx.ndim != 1:
        raise FamilyError(f"expected 1-d category indices, got shape {idx.shape}")
    if np.any((idx < 0) | (idx >= spec.dim)):
        raise FamilyError("category index out of range")
    out = np.zeros((idx.size, spec.dim))
    out[np.arange(idx.size), idx] = 1.0
    return out


def log_density(spec: FamilySpec, x, theta: np.ndarray) -> float:
    """Fully normalized log f(x | theta) for a single observation."""
    theta = _check_theta(spec, theta)
    if spec.kind == GAUSSIAN:
        x = np.asarray(x, dtype=float)
        mu = spec.sigma2 * theta
        d = spec.dim
        return float(
            -0.5 * d * np.log(2.0 * np.pi * spec.sigma2)
            - 0.5 * np.sum((x - mu) ** 2) / spec.sigma2
        )
    idx = int(x)
    if not 0 <= idx < spec.dim:
        raise FamilyError(f"category index {idx} out of range [0, {spec.dim})")
    return float(theta[idx] - logsumexp(theta))


def log_density_matrix(spec: FamilySpec, xs, atoms: np.ndarray) -> np.ndarray:
    """(n, K) matrix of log f(X_i | theta_k)."""
    atoms = np.atleast_2d(_check_theta(spec, atoms))
    if spec.kind == GAUSSIAN:
        xs = np.asarray(xs, dtype=float)
        mu = spec.sigma2 * atoms  # (K, d)
        sq = (
            np.sum(xs * xs, axis=1)[:, None]
            - 2.0 * xs @ mu.T
            + np.sum(mu * mu, axis=1)[None, :]
        )
        return -0.5 * spec.dim * np.log(2.0 * np.pi * spec.sigma2) - 0.5 * sq / spec.sigma2
    idx = np.asarray(xs, dtype=int)
    logp = atoms - logsumexp(atoms, axis=-1, keepdims=True)  # (K, V)
    return logp[:, idx].T


def bregman_divergence(spec: FamilySpec, theta: np.ndarray, theta_prime: np.ndarray) -> float:
    """D_A(theta, theta') = A(theta) - A(theta') - <grad A(theta'), theta - theta'>.

    Equals KL(f(.|theta') || f(.|theta)); note the argument order swap.
    """
    return float(bregman_matrix(spec, np.atleast_2d(theta), np.atleast_2d(theta_prime))[0, 0])


def bregman_matrix(spec: FamilySpec, atoms: np.ndarray, atoms_prime: np.ndarray) -> np.ndarray:
    """(K, K') matrix with entry (i, j) = D_A(theta_i, theta'_j).  Entries are
    clipped at zero to absorb rounding in the analytically nonnegative result."""
    atoms = np.atleast_2d(_check_theta(spec, atoms))
    atoms_prime = np.atleast_2d(_check_theta(spec, atoms_prime))
    if spec.kind == GAUSSIAN:
        diff = atoms[:, None, :] - atoms_prime[None, :, :]
        out = 0.5 * spec.sigma2 * np.sum(diff * diff, axis=-1)
    else:
        a = logsumexp(atoms, axis=-1)  # (K,)
        a_p = logsumexp(atoms_prime, axis=-1)  # (K',)
        grad_p = softmax(atoms_prime, axis=-1)  # (K', V)
        cross = atoms @ grad_p.T  # (K, K') of <grad A(theta'_j), theta_i>
        own = np.sum(grad_p * atoms_prime, axis=-1)  # (K',) of <grad A, theta'>
        out = a[:, None] - a_p[None, :] - cross + own[None, :]
    return np.maximum(out, 0.0)
