"""Exact calibration diagnostics.

Everything a forecaster is judged by: probability integral transforms,
per-dimension Shapiro-Wilk shape tests under BH false-discovery-rate
control, empirical central-interval coverage, Gaussian and ensemble CRPS,
mean squared error, and the whitened-Mahalanobis chi-square suite.  Noise
levels are never inputs here; they reach the tests only through the data.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special as sc
from scipy import stats as sps

from .belief import (LAMBDA_MIN, GaussianBelief, apply_rotation, marginal_std,
                     mean, sample, whiten)

__all__ = [
    "TestResult",
    "CalibrationBlock",
    "MahalanobisReport",
    "DegenerateSampleError",
    "normal_cdf",
    "normal_quantile",
    "chi2_cdf",
    "pit",
    "pit_histogram",
    "shapiro_wilk",
    "ks_test",
    "bh_fdr",
    "coverage",
    "coverage_marginal",
    "crps_gaussian",
    "crps_ensemble",
    "mahalanobis_suite",
    "sw_pass_rate",
    "wilson_interval",
    "mse",
]


class DegenerateSampleError(ValueError):
    """A sample is constant (or otherwise unusable) for a shape test."""


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    statistic: float
    p_value: float
    n: int
    reject_at: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value outside [0, 1]: {self.p_value}")


@dataclass
class CalibrationBlock:
    """Per-(scenario, sigma, horizon) metric block in the report layout."""

    coverage_50: float
    coverage_90: float
    sw_pass_rate: float
    pit_histogram: np.ndarray
    mahalanobis_ks: Optional[TestResult]
    crps: float
    mse: float
    scenario: str = ""
    sigma: float = float("nan")
    horizon: int = 0
    n_windows: int = 0
    n_pairs: int = 0
    pit_ks: Optional[TestResult] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def tr(t):
            return None if t is None else {"statistic": t.statistic, "p_value": t.p_value,
                                           "n": t.n, "reject_at": t.reject_at}
        return {
            "coverage_50": self.coverage_50,
            "coverage_90": self.coverage_90,
            "sw_pass_rate": self.sw_pass_rate,
            "pit_histogram": np.asarray(self.pit_histogram).tolist(),
            "mahalanobis_ks": tr(self.mahalanobis_ks),
            "crps": self.crps,
            "mse": self.mse,
            "scenario": self.scenario,
            "sigma": self.sigma,
            "horizon": self.horizon,
            "n_windows": self.n_windows,
            "n_pairs": self.n_pairs,
            "pit_ks": tr(self.pit_ks),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationBlock":
        def tr(x):
            return None if x is None else TestResult(**x)
        return cls(coverage_50=d["coverage_50"], coverage_90=d["coverage_90"],
                   sw_pass_rate=d["sw_pass_rate"],
                   pit_histogram=np.asarray(d["pit_histogram"]),
                   mahalanobis_ks=tr(d["mahalanobis_ks"]), crps=d["crps"], mse=d["mse"],
                   scenario=d.get("scenario", ""), sigma=d.get("sigma", float("nan")),
                   horizon=d.get("horizon", 0), n_windows=d.get("n_windows", 0),
                   n_pairs=d.get("n_pairs", 0), pit_ks=tr(d.get("pit_ks")),
                   notes=list(d.get("notes", [])))


def normal_cdf(x):
    """Standard normal CDF (absolute error far below 1e-10)."""
    return sc.ndtr(np.asarray(x, dtype=float))


def normal_quantile(p):
    """Standard normal quantile function."""
    return sc.ndtri(np.asarray(p, dtype=float))


def chi2_cdf(x, d: int):
    """Chi-square CDF with d degrees of freedom via the regularized
    incomplete gamma function."""
    if d < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {d}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi2_cdf requires x >= 0")
    return sc.gammainc(d / 2.0, x / 2.0)


def pit(mu, sigma, y):
    """Probability integral transform under marginal Gaussians.

    u = Phi((y - mu) / sigma); uniform on [0, 1] iff the marginals are
    calibrated.  sigma must be strictly positive.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("pit requires sigma > 0")
    return normal_cdf((np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)) / sigma)


def pit_histogram(u, bins: int = 20) -> np.ndarray:
    """Counts of PIT values in ``bins`` equal bins over [0, 1]."""
    counts, _ = np.histogram(np.asarray(u, dtype=float).ravel(),
                             bins=bins, range=(0.0, 1.0))
    return counts


def shapiro_wilk(sample_values) -> TestResult:
    """Shapiro-Wilk normality test (Royston's algorithm, 3 <= n <= 5000).

    The W statistic is invariant to location and scale; the p-value uses the
    published normalizing approximation.
    """
    x = np.asarray(sample_values, dtype=float).ravel()
    n = x.shape[0]
    if not 3 <= n <= 5000:
        raise ValueError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    if np.ptp(x) == 0.0:
        raise DegenerateSampleError("sample is constant; shape test undefined")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sps.shapiro(x)
    return TestResult(statistic=float(res.statistic),
                      p_value=float(min(max(res.pvalue, 0.0), 1.0)), n=n)


def ks_test(sample_values, cdf) -> TestResult:
    """One-sample Kolmogorov-Smirnov test against ``cdf``."""
    x = np.asarray(sample_values, dtype=float).ravel()
    res = sps.kstest(x, cdf)
    return TestResult(statistic=float(res.statistic), p_value=float(res.pvalue),
                      n=x.shape[0])


def bh_fdr(p_values, q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up rejection mask at FDR level ``q``.

    Sort the m p-values, find the largest k with p_(k) <= k q / m, reject
    those k hypotheses; the mask comes back in input order (ties broken by
    original index via stable sort).
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    m = p.size
    order = np.argsort(p, kind="stable")
    thresholds = (np.arange(1, m + 1) * q) / m
    passed = p[order] <= thresholds
    mask = np.zeros(m, dtype=bool)
    if np.any(passed):
        k = int(np.max(np.nonzero(passed)[0]))
        mask[order[: k + 1]] = True
    return mask


def coverage_marginal(mu, sigma, y, nominal: float) -> float:
    """Fraction of points inside the central ``nominal`` Gaussian interval."""
    if not 0.0 < nominal < 1.0:
        raise ValueError(f"nominal level must be in (0, 1), got {nominal}")
    z = normal_quantile(0.5 + nominal / 2.0)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.abs(y - mu) <= z * sigma))


def coverage(beliefs, targets, nominal: float) -> float:
    """Empirical central-interval coverage over (window, dimension) pairs.

    Intervals come from each belief's marginal Gaussian quantiles.
    """
    mus = np.stack([mean(b) for b in beliefs])
    sigmas = np.stack([marginal_std(b) for b in beliefs])
    y = np.stack([np.asarray(t, dtype=float).ravel() for t in targets])
    return coverage_marginal(mus, sigmas, y, nominal)


_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of a Gaussian forecast N(mu, sigma^2) against y.

    sigma = 0 degenerates to the absolute error.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    y = np.asarray(y, dtype=float)
    out = np.abs(y - mu).astype(float)
    pos = sigma > 0
    if np.any(pos):
        z = np.where(pos, (y - mu) / np.where(pos, sigma, 1.0), 0.0)
        val = sigma * (z * (2.0 * sc.ndtr(z) - 1.0)
                       + 2.0 * np.exp(-0.5 * z ** 2) / np.sqrt(2.0 * np.pi)
                       - _INV_SQRT_PI)
        out = np.where(pos, val, out)
    return out if out.ndim else float(out)


def crps_ensemble(samples, y):
    """CRPS of an ensemble forecast: mean|X - y| - 0.5 mean|X - X'|.

    ``samples`` has the ensemble along axis 0: shape (S,) with scalar ``y``
    or (S, n) with ``y`` of shape (n,).  The pair term uses the O(S log S)
    sorted form over all S^2 ordered pairs.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("ensemble must be non-empty")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
        y = np.asarray([y], dtype=float)
    else:
        y = np.asarray(y, dtype=float)
    s = x.shape[0]
    term1 = np.mean(np.abs(x - y[None, :]), axis=0)
    xs = np.sort(x, axis=0)
    weights = 2.0 * np.arange(s) - s + 1.0
    gini = (weights[:, None] * xs).sum(axis=0) * 2.0 / (s * s)
    out = term1 - 0.5 * gini
    return float(out[0]) if squeeze else out


def mse(mu, y) -> float:
    """Mean squared error of a point forecast."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.mean((mu - y) ** 2))


@dataclass(frozen=True)
class MahalanobisReport:
    """KS verdict plus first moments of the squared whitened residual norm."""

    ks: TestResult
    mean_m: float
    dof: int

    @property
    def mean_ratio(self) -> float:
        return self.mean_m / self.dof


def mahalanobis_suite(beliefs, targets, use_mean_residual: bool = True,
                      rng: Optional[np.random.Generator] = None) -> MahalanobisReport:
    """Whitened squared-norm diagnostic against the chi-square law.

    With ``use_mean_residual`` the residual is y - mu, so a calibrated model
    gives E[m] = d and m ~ chi^2_d.  With per-sample residuals y - y_hat
    (one draw per window) the model's own sampling noise adds a second,
    independent copy of the covariance, inflating E[m] to 2d.
    """
    ms = []
    dof = None
    for b, y in zip(beliefs, targets):
        y = np.asarray(y, dtype=float).ravel()
        dof = b.d
        if use_mean_residual:
            ms.append(whiten(b, y).mahalanobis)
        else:
            if rng is None:
                raise ValueError("per-sample residuals need an rng")
            draw = sample(b, rng, 1)[0]
            res = y - draw
            r = apply_rotation(b.hh_vectors, res, transpose=True)
            lam = np.maximum(b.lambdas, LAMBDA_MIN)
            ms.append(float(np.sum((r / lam) ** 2)))
    m = np.asarray(ms, dtype=float)
    ks = ks_test(m, sps.chi2(dof).cdf)
    return MahalanobisReport(ks=ks, mean_m=float(m.mean()), dof=dof)


def sw_pass_rate(z, q: float = 0.05) -> float:
    """Fraction of dimensions whose whitened residuals keep Gaussian shape.

    ``z`` is (n_samples, n_dims); each column gets a Shapiro-Wilk test and
    the per-dimension p-values are corrected with BH-FDR at level ``q``.
    Columns with fewer than 3 usable observations are skipped with a
    warning; constant columns count as rejections.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("z must be 2-D (samples x dimensions)")
    p_values = []
    degenerate = []
    skipped = 0
    for j in range(z.shape[1]):
        col = z[:, j]
        col = col[np.isfinite(col)]
        if col.size < 3:
            skipped += 1
            continue
        try:
            p_values.append(shapiro_wilk(col[:5000]).p_value)
            degenerate.append(False)
        except DegenerateSampleError:
            p_values.append(0.0)
            degenerate.append(True)
    if skipped:
        warnings.warn(f"sw_pass_rate: skipped {skipped} dimension(s) with < 3 observations")
    if not p_values:
        raise ValueError("no dimension had enough observations for a shape test")
    rejected = bh_fdr(np.asarray(p_values), q) | np.asarray(degenerate)
    return float(1.0 - rejected.mean())


def wilson_interval(successes: int, n: int, level: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = float(normal_quantile(0.5 + level / 2.0))
    phat = successes / n
    denom = 1.0 + z ** 2 / n
    center = (phat + z ** 2 / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z ** 2 / (4 * n ** 2)) / denom
    return max(0.0, center - half), min(1.0, center + half)
