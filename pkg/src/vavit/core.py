"""Shared numeric types and Gaussian/SPD utilities used by every other module.

The kinematic state of a tracked person is a 6-vector laid out as
(center_x, center_y, width, height, velocity_x, velocity_y), all in pixels
(velocities in pixels/frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

STATE_DIM = 6
LOG_2PI = math.log(2.0 * math.pi)

# Default eigenvalue floor for SPD projections, in pixel^2. Far below pixel
# quantization noise.
SPD_EPS = 1e-6


class InputError(ValueError):
    """A user-supplied value is invalid: config field, file content, argument."""


class NumericError(RuntimeError):
    """A numerical operation failed: non-SPD matrix, EM collapse, undefined score."""


def _transition_matrix() -> np.ndarray:
    d = np.eye(STATE_DIM)
    d[0, 4] = 1.0
    d[1, 5] = 1.0
    return d


#: Constant-velocity transition: position += velocity; size and velocity kept.
TRANSITION = _transition_matrix()
TRANSITION.setflags(write=False)

#: Selector from the 6-D state onto the observed bounding box (center, size).
BOX_PROJECTION = np.hstack([np.eye(4), np.zeros((4, 2))])
BOX_PROJECTION.setflags(write=False)

#: Selector from the 6-D state onto the 2-D position.
POSITION_PROJECTION = np.hstack([np.eye(2), np.zeros((2, 4))])
POSITION_PROJECTION.setflags(write=False)


def cholesky_spd(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix, raising NumericError otherwise."""
    try:
        return scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is not symmetric positive definite:\n{cov!r}") from exc


def gaussian_logpdf(v, mean, cov) -> float:
    """Log-density of a multivariate Gaussian evaluated via Cholesky.

    Parameters
    ----------
    v : array-like, shape (d,)
    mean : array-like, shape (d,)
    cov : array-like, shape (d, d), symmetric positive definite
    """
    v = np.asarray(v, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = v.shape[0]
    if mean.shape != (d,) or cov.shape != (d, d):
        raise InputError(
            f"dimension mismatch: v {v.shape}, mean {mean.shape}, cov {cov.shape}"
        )
    chol = cholesky_spd(cov)
    z = scipy.linalg.solve_triangular(chol, v - mean, lower=True)
    return -0.5 * (d * LOG_2PI + z @ z) - np.sum(np.log(np.diag(chol)))


def gaussian_logpdf_batch(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise Gaussian log-density for x of shape (n, d)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    chol = cholesky_spd(cov)
    z = scipy.linalg.solve_triangular(chol, (x - mean).T, lower=True)
    return -0.5 * (d * LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(chol)))


def spd_project(m, eps: float = SPD_EPS) -> np.ndarray:
    """Project a symmetric matrix onto the SPD cone by flooring eigenvalues at eps.

    A matrix whose smallest eigenvalue is already >= eps is returned unchanged
    up to symmetrization, which makes the projection idempotent.
    """
    m = np.asarray(m, dtype=float)
    if eps <= 0.0:
        raise InputError(f"eps must be positive, got {eps}")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > 1e-8 * scale:
        raise InputError("matrix is not symmetric within tolerance")
    sym = 0.5 * (m + m.T)
    eigvals = np.linalg.eigvalsh(sym)
    # Slack absorbs reconstruction round-off so the projection is idempotent.
    slack = 1e-12 * max(1.0, float(np.max(np.abs(eigvals))))
    if eigvals[0] >= eps - slack:
        return sym
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, eps)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def bhattacharyya_coefficient(u, h) -> float:
    """Bhattacharyya coefficient between two points on the probability simplex."""
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    if u.shape != h.shape or u.ndim != 1:
        raise InputError(f"shape mismatch: {u.shape} vs {h.shape}")
    for name, vec in (("u", u), ("h", h)):
        if np.min(vec) < 0.0:
            raise InputError(f"{name} has negative components")
        if abs(float(np.sum(vec)) - 1.0) > 1e-8:
            raise InputError(f"{name} does not sum to 1 within 1e-8")
    return min(float(np.sum(np.sqrt(u * h))), 1.0)


def bhattacharyya_likelihood(u, h, lam: float) -> float:
    """Appearance likelihood exp(-lam * (1 - sum_d sqrt(u_d h_d))).

    Equals 1 iff u == h and decays towards exp(-lam) for disjoint supports.
    """
    if lam <= 0.0:
        raise InputError(f"lam must be positive, got {lam}")
    return math.exp(-lam * (1.0 - bhattacharyya_coefficient(u, h)))


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Gaussian belief over a d-dimensional state: mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise InputError(f"bad belief shapes: mean {mean.shape}, cov {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NumericError("belief has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise NumericError("belief covariance is not symmetric within 1e-10 relative")
        min_eig = float(np.linalg.eigvalsh(cov)[0])
        if min_eig < -1e-10 * scale:
            raise NumericError(f"belief covariance has negative eigenvalue {min_eig}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Linear-Gaussian dynamics: fixed transition matrix plus process covariance."""

    transition: np.ndarray
    process_cov: np.ndarray

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        process_cov = np.asarray(self.process_cov, dtype=float)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "process_cov", process_cov)
        if not np.array_equal(transition, TRANSITION):
            raise InputError("transition must be the constant-velocity block matrix")
        if process_cov.shape != (STATE_DIM, STATE_DIM):
            raise InputError(f"process covariance must be 6x6, got {process_cov.shape}")
        scale = max(1.0, float(np.max(np.abs(process_cov))))
        if np.max(np.abs(process_cov - process_cov.T)) > 1e-8 * scale:
            raise InputError("process covariance is not symmetric")
        if float(np.linalg.eigvalsh(process_cov)[0]) < -1e-10 * scale:
            raise InputError("process covariance is not positive semi-definite")


def predict_belief(prev: GaussianBelief, dyn: DynamicsModel, eps: float = SPD_EPS) -> GaussianBelief:
    """One-step dynamics propagation of a Gaussian belief.

    mean' = D mean, cov' = D cov D^T + process_cov, with an SPD guard on cov'.
    """
    d = dyn.transition
    mean = d @ prev.mean
    cov = d @ prev.cov @ d.T + dyn.process_cov
    return GaussianBelief(mean, spd_project(cov, eps))
