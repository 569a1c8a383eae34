"""Binned conditional expectations, convexity fits and distribution checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .filters import ema, lag


@dataclass(frozen=True, eq=False)
class BinnedCurve:
    """Equal-population bins of ``y`` conditioned on ``x``.

    ``assignment`` maps each retained sample to its bin (-1 if its bin was
    dropped for having fewer than ``min_bin_count`` samples).
    """

    bin_centers: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    counts: np.ndarray
    edges: np.ndarray
    x: np.ndarray
    y: np.ndarray
    assignment: np.ndarray
    dropped: list = field(default_factory=list)

    def binned(self, values) -> np.ndarray:
        """Per-bin mean of an arbitrary per-sample quantity (e.g. a theory curve at ``x``)."""
        values = np.asarray(values, dtype=float)
        keep = np.unique(self.assignment[self.assignment >= 0])
        return np.array([values[self.assignment == k].mean() for k in keep])

    def zscores(self, theory) -> np.ndarray:
        """``(mean - <theory(x)>_bin) / stderr`` for a vectorised callable."""
        return (self.means - self.binned(theory(self.x))) / self.stderrs


def bin_conditional(
    x,
    y,
    n_bins: int = 20,
    stride: int = 1,
    start: int = 0,
    min_bin_count: int = 20,
) -> BinnedCurve:
    """Conditional mean of ``y`` in quantile bins of ``x``.

    Samples are taken every ``stride`` ticks from ``start`` (use ``stride``
    around ``tau'`` to thin overlapping aggregates, 1 to keep every tick).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("indicator and response must be aligned")
    xs = x[start::stride]
    ys = y[start::stride]
    if len(xs) < n_bins * 2:
        raise ValueError(f"{len(xs)} samples are too few for {n_bins} bins")
    edges = np.quantile(xs, np.linspace(0.0, 1.0, n_bins + 1))
    idx = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, n_bins - 1)
    centers, means, errs, counts, dropped = [], [], [], [], []
    for k in range(n_bins):
        m = idx == k
        c = int(m.sum())
        if c < max(min_bin_count, 2):
            dropped.append(k)
            idx[m] = -1
            continue
        centers.append(xs[m].mean())
        means.append(ys[m].mean())
        errs.append(ys[m].std(ddof=1) / math.sqrt(c))
        counts.append(c)
    return BinnedCurve(
        np.array(centers), np.array(means), np.array(errs), np.array(counts),
        edges, xs, ys, idx, dropped,
    )


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict
    r2: float
    stderrs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.model == "quadratic":
            return p["a"] * x**2 + p["b"] * x + p["c"]
        return p["a"] * (np.abs(x) - p["c"])


def _r2(y, fitted, w) -> float:
    ybar = np.average(y, weights=w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * (y - fitted) ** 2)
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)


def _wls(design, y, w):
    sw = np.sqrt(w)
    a = design * sw[:, None]
    if np.linalg.matrix_rank(a) < design.shape[1]:
        raise ValueError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(a, y * sw, rcond=None)
    resid = y - design @ coef
    # heteroskedasticity-robust (HC1) covariance
    bread = np.linalg.inv(a.T @ a)
    meat = (a * (resid * sw)[:, None]).T @ (a * (resid * sw)[:, None])
    n, k = design.shape
    cov = bread @ meat @ bread * n / max(n - k, 1)
    return coef, cov


def _curve_points(curve: BinnedCurve):
    return curve.bin_centers, curve.means, 1.0 / np.maximum(curve.stderrs, 1e-300) ** 2


def fit_quadratic(x, y=None, weights=None) -> FitResult:
    """Least squares ``y = a x**2 + b x + c`` with R**2.

    The constrained form ``a' (x**2 - 1)`` is reported in ``extra``.
    Accepts a :class:`BinnedCurve` as ``x`` (bin means weighted by 1/stderr**2).
    """
    if isinstance(x, BinnedCurve):
        x, y, weights = _curve_points(x)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("quadratic fit needs at least 3 points")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    design = np.column_stack([x**2, x, np.ones_like(x)])
    coef, cov = _wls(design, y, w)
    fitted = design @ coef
    z = (x**2 - 1.0)[:, None]
    a_c, _ = _wls(z, y, w)
    se = np.sqrt(np.diag(cov))
    return FitResult(
        "quadratic",
        {"a": float(coef[0]), "b": float(coef[1]), "c": float(coef[2])},
        float(_r2(y, fitted, w)),
        {"a": float(se[0]), "b": float(se[1]), "c": float(se[2])},
        {"constrained_a": float(a_c[0]), "constrained_r2": float(_r2(y, z[:, 0] * a_c[0], w))},
    )


def fit_vshape(x, y=None, weights=None) -> FitResult:
    """Least squares ``y = a (|x| - c)``.

    Accepts a :class:`BinnedCurve` like :func:`fit_quadratic`. Linear in
    ``(a, -a c)``, so solved directly; the kink's standard error
    follows from the delta method on the robust covariance.
    """
    if isinstance(x, BinnedCurve):
        x, y, weights = _curve_points(x)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("V-shape fit needs at least 3 points")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    design = np.column_stack([np.abs(x), np.ones_like(x)])
    coef, cov = _wls(design, y, w)
    a, d = coef
    if a == 0:
        raise ValueError("degenerate V-shape fit (zero slope)")
    c = -d / a
    grad = np.array([d / a**2, -1.0 / a])
    se_c = math.sqrt(grad @ cov @ grad)
    fitted = design @ coef
    return FitResult(
        "vshape",
        {"a": float(a), "c": float(c)},
        float(_r2(y, fitted, w)),
        {"a": float(math.sqrt(cov[0, 0])), "c": se_c},
    )


def skewness(x) -> float:
    """Bias-corrected sample skewness (adjusted Fisher-Pearson)."""
    x = np.asarray(x, dtype=float)
    if len(x) < 3:
        raise ValueError("skewness needs at least 3 values")
    if np.ptp(x) == 0:
        raise ValueError("skewness undefined for zero variance")
    return float(stats.skew(x, bias=False))


def trend_gains(returns, tau: float = 1.0) -> np.ndarray:
    """Daily gains ``L_tau[R_{t-1}] R_t`` of a linear trend on returns.

    ``tau = 1`` is the one-tick signal (position proportional to the last
    return), the rebalancing-scale limit of the EMA trend.
    """
    r = np.asarray(returns, dtype=float)
    return lag(ema(r, tau)) * r


def predicted_trend_skewness(q: float, tau: float = 1.0) -> float:
    """Exact skewness of :func:`trend_gains` on a unit AR(1) with coefficient ``q``.

    Signal and return are jointly Gaussian with correlation ``rho``, and the
    product of such a pair has skewness ``(6 rho + 2 rho**3) / (1 + rho**2)**1.5``;
    ``rho = q`` at ``tau = 1`` gives the ``6q`` leading term.
    """
    a = 1.0 - 2.0 / (tau + 1.0)
    cov = q * (1.0 - a) / (1.0 - a * q)
    var = (1.0 - a) ** 2 / (1.0 - a * a) * (1.0 + a * q) / (1.0 - a * q)
    rho = cov / math.sqrt(var)
    return (6.0 * rho + 2.0 * rho**3) / (1.0 + rho**2) ** 1.5


@dataclass(frozen=True)
class Chi2Report:
    n_blocks: int
    ks_statistic: float
    ks_pvalue: float
    loss_frequency: float
    loss_frequency_chi2: float
    mean_z: float
    indicator_ks_pvalue: float | None = None


def chi2_check(block_pnl, tau: int, lam: float = 1.0, block_indicator=None) -> Chi2Report:
    """Compare block-aggregated toy-trend P&L with the chi-square(1) law.

    ``z = 2 G / (lam tau) + 1`` is tested against chi2(1) by Kolmogorov-Smirnov.
    If the per-block indicator is supplied, its square is tested as well.
    """
    g = np.asarray(block_pnl, dtype=float)
    if len(g) < 1000:
        raise ValueError(f"need at least 1000 blocks, got {len(g)}")
    z = 2.0 * g / (lam * tau) + 1.0
    ks = stats.kstest(z, "chi2", args=(1,))
    ind_p = None
    if block_indicator is not None:
        ind_p = float(stats.kstest(np.asarray(block_indicator) ** 2, "chi2", args=(1,)).pvalue)
    return Chi2Report(
        n_blocks=len(g),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        loss_frequency=float(np.mean(g < 0)),
        loss_frequency_chi2=float(stats.chi2.cdf(1.0, 1)),
        mean_z=float(z.mean()),
        indicator_ks_pvalue=ind_p,
    )
