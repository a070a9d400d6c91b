"""Spectral Gaussian predictive law.

A belief is an affine transport of a standard Gaussian: draws are
``U diag(lambda) U^T (y0 + t_y)`` with ``y0 ~ N(0, I)``, where the orthogonal
frame ``U`` is a product of Householder reflections that is never
materialized as a dense matrix.  The mean is ``U diag(lambda) U^T t_y`` and
the covariance ``U diag(lambda^2) U^T``, so eigen-residuals, whitening,
exact likelihoods, and closed-form squared 2-Wasserstein distances to
isotropic Gaussian targets all come cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LAMBDA_MIN",
    "SCALE_BOUNDS",
    "TRANSLATION_BOUNDS",
    "GaussianBelief",
    "EigenResidual",
    "NormalizationError",
    "apply_rotation",
    "rotation_matrix",
    "mean",
    "mean_and_cov",
    "marginal_std",
    "sample",
    "nll",
    "whiten",
    "w2_gaussian",
    "soft_bound",
    "soft_bound_deriv",
    "belief_to_record",
    "belief_from_record",
]

LAMBDA_MIN = 1e-6           # eigenvalue clamp for whitening and likelihoods
SCALE_BOUNDS = (-1.0, 4.5)  # raw scale c; eigenvalue is 1 + c, so range (0, 5.5)
TRANSLATION_BOUNDS = (-15.0, 15.0)
_NORM_TOL = 1e-8


class NormalizationError(ValueError):
    """A Householder generator is not unit norm."""


def _check_generators(hh_vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(hh_vectors, dtype=float)
    if v.size == 0:
        return v.reshape(0, 0 if v.ndim < 2 else v.shape[-1])
    if v.ndim == 1:
        v = v[None, :]
    norms = np.linalg.norm(v, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        bad = float(norms[np.argmax(np.abs(norms - 1.0))])
        raise NormalizationError(f"Householder generator has norm {bad!r}, expected 1")
    return v


@dataclass(frozen=True)
class GaussianBelief:
    """Per-window predictive law: translation, eigenvalues, reflection frame.

    ``hh_vectors`` holds R unit generators, rows; R = 0 means the identity
    frame.  Covariance eigenvalues are ``lambdas**2``.
    """

    t_y: np.ndarray
    lambdas: np.ndarray
    hh_vectors: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_y, dtype=float).ravel()
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if t.shape != lam.shape:
            raise ValueError(f"t_y ({t.shape}) and lambdas ({lam.shape}) disagree")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambdas must be finite and nonnegative")
        v = _check_generators(self.hh_vectors)
        if v.size and v.shape[1] != t.shape[0]:
            raise ValueError(f"hh_vectors have length {v.shape[1]}, expected {t.shape[0]}")
        object.__setattr__(self, "t_y", t)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "hh_vectors", v)

    @property
    def d(self) -> int:
        return self.t_y.shape[0]

    @property
    def n_reflections(self) -> int:
        return self.hh_vectors.shape[0]


def apply_rotation(hh_vectors, x, transpose: bool = False) -> np.ndarray:
    """Apply ``U x`` (or ``U^T x``) as sequential reflections.

    ``U = H_R ... H_1`` with ``H_k x = x - 2 v_k (v_k^T x)``; the d x d
    matrix is never built.  ``x`` may be a vector or a (n, d) batch of rows.
    """
    v = _check_generators(hh_vectors)
    out = np.array(x, dtype=float, copy=True)
    if v.size == 0:
        return out
    batched = out.ndim == 2
    order = range(v.shape[0]) if not transpose else range(v.shape[0] - 1, -1, -1)
    for k in order:
        vk = v[k]
        if batched:
            out -= 2.0 * np.outer(out @ vk, vk)
        else:
            out -= 2.0 * vk * (vk @ out)
    return out


def rotation_matrix(hh_vectors, d: int) -> np.ndarray:
    """Dense ``U`` (columns are frame vectors); for diagnostics at small d."""
    return apply_rotation(hh_vectors, np.eye(d)).T


def mean(b: GaussianBelief) -> np.ndarray:
    """Predictive mean ``U diag(lambda) U^T t_y``."""
    s = apply_rotation(b.hh_vectors, b.t_y, transpose=True)
    return apply_rotation(b.hh_vectors, b.lambdas * s)


def mean_and_cov(b: GaussianBelief):
    """Dense (mu, Sigma); Sigma = U diag(lambda^2) U^T, symmetric PSD."""
    u = rotation_matrix(b.hh_vectors, b.d)
    sigma = (u * b.lambdas ** 2) @ u.T
    return mean(b), 0.5 * (sigma + sigma.T)


def marginal_std(b: GaussianBelief) -> np.ndarray:
    """Per-coordinate predictive standard deviations, sqrt(diag(Sigma))."""
    if b.n_reflections == 0:
        return b.lambdas.copy()
    u = rotation_matrix(b.hh_vectors, b.d)
    return np.sqrt(((u * b.lambdas) ** 2).sum(axis=1))


def sample(b: GaussianBelief, rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Draw ``n_samples`` rows ``U diag(lambda) U^T (y0 + t_y)``, y0 ~ N(0, I)."""
    y0 = rng.standard_normal((n_samples, b.d))
    w = apply_rotation(b.hh_vectors, y0 + b.t_y, transpose=True)
    return apply_rotation(b.hh_vectors, w * b.lambdas)


def nll(b: GaussianBelief, y) -> float:
    """Exact Gaussian negative log-likelihood in the predicted eigenframe.

    ``0.5 * sum_i [log lambda_i^2 + r_i^2 / lambda_i^2] + (d/2) log 2 pi``
    with ``r = U^T (y - mu)`` and eigenvalues clamped at ``LAMBDA_MIN``.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != b.d:
        raise ValueError(f"y has length {y.shape[0]}, expected {b.d}")
    r = apply_rotation(b.hh_vectors, y - mean(b), transpose=True)
    lam = np.maximum(b.lambdas, LAMBDA_MIN)
    return float(0.5 * np.sum(np.log(lam ** 2) + (r / lam) ** 2)
                 + 0.5 * b.d * math.log(2.0 * math.pi))


@dataclass(frozen=True)
class EigenResidual:
    """Residual projected into the eigenframe (r) and whitened (z = r/lambda)."""

    r: np.ndarray
    z: np.ndarray

    @property
    def mahalanobis(self) -> float:
        return float(self.z @ self.z)


def whiten(b: GaussianBelief, y) -> EigenResidual:
    """Project ``y - mu`` into the eigenframe and scale by 1/lambda (clamped)."""
    y = np.asarray(y, dtype=float).ravel()
    r = apply_rotation(b.hh_vectors, y - mean(b), transpose=True)
    lam = np.maximum(b.lambdas, LAMBDA_MIN)
    return EigenResidual(r=r, z=r / lam)


def w2_gaussian(b: GaussianBelief, target_mean, target_sigma2: float) -> float:
    """Squared 2-Wasserstein distance to ``N(target_mean, target_sigma2 I)``.

    Isotropic targets commute with any covariance, so the trace term
    collapses to ``sum_i (lambda_i - sigma)^2``.
    """
    if target_sigma2 < 0:
        raise ValueError(f"target variance must be >= 0, got {target_sigma2}")
    mu = mean(b)
    tm = np.asarray(target_mean, dtype=float).ravel()
    sig = math.sqrt(target_sigma2)
    return float(np.sum((mu - tm) ** 2) + np.sum((b.lambdas - sig) ** 2))


_SB_POWER = 10  # saturation order; keeps the middle half within 1e-3 of the
                # identity even at the widest bounds used here ([-15, 15])


def _sb_parts(x, lo: float, hi: float):
    if lo >= hi:
        raise ValueError(f"soft_bound requires lo < hi, got [{lo}, {hi}]")
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    t = (np.asarray(x, dtype=float) - mid) / half
    t = np.clip(t, -1e30, 1e30)  # avoid inf**p overflow for extreme raws
    return mid, half, t


def soft_bound(x, lo: float, hi: float):
    """Smooth, strictly monotone map of the reals into (lo, hi).

    Near-identity on the middle half of the interval (absolute deviation
    below 1e-3), saturating smoothly at the edges: the hallmark shape for
    keeping raw network outputs in a numerically safe range without killing
    gradients.
    """
    mid, half, t = _sb_parts(x, lo, hi)
    out = mid + half * t * (1.0 + t ** _SB_POWER) ** (-1.0 / _SB_POWER)
    return out if np.ndim(x) else float(out)


def soft_bound_deriv(x, lo: float, hi: float):
    """Derivative of :func:`soft_bound`; positive everywhere, 1 at the midpoint."""
    _, _, t = _sb_parts(x, lo, hi)
    out = (1.0 + t ** _SB_POWER) ** (-(1.0 + _SB_POWER) / _SB_POWER)
    return out if np.ndim(x) else float(out)


def belief_to_record(b: GaussianBelief) -> dict:
    return {
        "t_y": b.t_y.tolist(),
        "lambdas": b.lambdas.tolist(),
        "hh_vectors": b.hh_vectors.tolist(),
    }


def belief_from_record(rec: dict) -> GaussianBelief:
    hh = np.asarray(rec.get("hh_vectors", []), dtype=float)
    if hh.size == 0:
        hh = np.zeros((0, len(rec["t_y"])))
    return GaussianBelief(t_y=np.asarray(rec["t_y"], dtype=float),
                          lambdas=np.asarray(rec["lambdas"], dtype=float),
                          hh_vectors=hh)
