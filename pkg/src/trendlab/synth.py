"""Correlated additive random walks and volatility signature plots."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .timeseries import AssetPanel, TimeSeries, cumulate


class KernelError(ValueError):
    """The requested autocovariance cannot be realised by a stationary process."""


@dataclass(frozen=True)
class CorrelationKernel:
    """Autocovariance ``C(u)`` of the price changes.

    ``iid``: ``C(u>0) = 0``. ``ar1``: ``C(u) = sigma2 * q**u``. ``exp-decay``:
    ``C(u>0) = amplitude * exp((1 - u) / decay_scale)``, ``C(0) = sigma2``.
    """

    kind: str = "iid"
    sigma2: float = 1.0
    amplitude: float = 0.0
    decay_scale: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        if self.kind not in ("iid", "ar1", "exp-decay"):
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if not self.sigma2 > 0:
            raise KernelError("sigma2 must be positive")
        if self.kind == "ar1" and not abs(self.q) < 1:
            raise KernelError("AR(1) coefficient must satisfy |q| < 1")
        if self.kind == "exp-decay" and not self.decay_scale > 0:
            raise KernelError("decay_scale must be positive")

    @property
    def phi(self) -> float:
        """Geometric decay of ``C(u)`` for ``u >= 1``."""
        if self.kind == "ar1":
            return self.q
        if self.kind == "exp-decay":
            return math.exp(-1.0 / self.decay_scale)
        return 0.0

    @property
    def lag1(self) -> float:
        if self.kind == "ar1":
            return self.sigma2 * self.q
        if self.kind == "exp-decay":
            return self.amplitude
        return 0.0

    def covariance(self, u) -> np.ndarray:
        u = np.abs(np.asarray(u, dtype=float))
        out = np.where(u == 0, self.sigma2, self.lag1 * self.phi ** np.maximum(u - 1, 0))
        return out if out.ndim else float(out)

    def arma(self) -> tuple[float, float, float]:
        """``(phi, theta, innovation variance)`` of the equivalent ARMA(1,1).

        ``C(u) = C(1) * phi**(u-1)`` for ``u >= 1`` is exactly the ARMA(1,1)
        autocovariance; ``theta`` is the invertible root matching ``C(1)/C(0)``.
        """
        phi = self.phi
        rho = self.lag1 / self.sigma2
        if abs(phi - rho) < 1e-15:
            theta = 0.0
        else:
            a = phi - rho
            b = 1.0 + phi * phi - 2.0 * rho * phi
            disc = b * b - 4.0 * a * a
            if disc < -1e-14:
                raise KernelError(
                    f"kernel is not positive semi-definite (lag-1 correlation {rho:g}, decay {phi:g})"
                )
            roots = np.roots([a, b, a])
            theta = float(np.real(roots[np.argmin(np.abs(roots))]))
        var_eps = self.sigma2 * (1.0 - phi * phi) / (1.0 + 2.0 * phi * theta + theta * theta)
        return phi, theta, var_eps


@dataclass(frozen=True)
class SignatureCurve:
    taus: np.ndarray
    sigma2: np.ndarray
    stderr: np.ndarray | None = None


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def generate_changes(kernel: CorrelationKernel, n: int, seed=None) -> np.ndarray:
    """``n`` stationary price changes with autocovariance ``kernel``.

    Realised as ``D_t = X_t + theta X_{t-1}`` with ``X`` a stationary AR(1)
    started from its invariant law, which is the ARMA(1,1) of the kernel.
    """
    rng = _rng(seed)
    phi, theta, var_eps = kernel.arma()
    eps = rng.standard_normal(n + 1) * math.sqrt(var_eps)
    if phi == 0.0:
        x = eps
    else:
        x0 = eps[0] / math.sqrt(1.0 - phi * phi)
        x = np.empty(n + 1)
        x[0] = x0
        x[1:] = lfilter([1.0], [1.0, -phi], eps[1:], zi=[phi * x0])[0]
    return x[1:] + theta * x[:-1]


def generate_walk(kernel: CorrelationKernel, n: int, seed=None, s0: float = 0.0) -> TimeSeries:
    """Price path of ``n`` points (``n - 1`` changes), deterministic per seed."""
    if n < 2:
        raise ValueError("walk length must be >= 2")
    return TimeSeries.from_values(cumulate(generate_changes(kernel, n - 1, seed), s0), "walk")


def random_correlation(n_assets: int, mean_corr: float, seed=None, jitter: float = 0.1) -> np.ndarray:
    """One-factor correlation matrix with loadings scattered around ``sqrt(mean_corr)``."""
    rng = _rng(seed)
    if not 0 <= mean_corr < 1:
        raise ValueError("mean_corr must lie in [0, 1)")
    load = np.clip(math.sqrt(mean_corr) + jitter * rng.standard_normal(n_assets), -0.999, 0.999)
    c = np.outer(load, load)
    np.fill_diagonal(c, 1.0)
    return c


def generate_panel(
    n_assets: int,
    n: int,
    seed=None,
    corr: np.ndarray | float = 0.0,
    vols=None,
    s0: float = 100.0,
    kernel: CorrelationKernel | None = None,
) -> AssetPanel:
    """Cross-correlated multi-asset price panel of ``n`` ticks.

    Each asset's changes follow ``kernel`` (iid by default) scaled by its
    volatility; cross-sectional correlation enters through a Cholesky factor.
    """
    rng = _rng(seed)
    if np.ndim(corr) == 0:
        c = np.full((n_assets, n_assets), float(corr))
        np.fill_diagonal(c, 1.0)
    else:
        c = np.asarray(corr, dtype=float)
    chol = np.linalg.cholesky(c + 1e-14 * np.eye(n_assets))
    z = rng.standard_normal((n - 1, n_assets)) @ chol.T
    if kernel is not None and kernel.kind != "iid":
        phi, theta, var_eps = kernel.arma()
        z = z * math.sqrt(var_eps)
        x = lfilter([1.0], [1.0, -phi], z, axis=0)
        z = x + theta * np.vstack([np.zeros((1, n_assets)), x[:-1]])
        z /= math.sqrt(kernel.sigma2)
    if vols is None:
        vols = np.exp(rng.uniform(np.log(0.5), np.log(2.0), n_assets))
    vols = np.broadcast_to(np.asarray(vols, dtype=float), (n_assets,))
    d = z * vols
    prices = s0 + np.vstack([np.zeros((1, n_assets)), np.cumsum(d, axis=0)])
    return AssetPanel.from_matrix(prices, [f"asset{i:02d}" for i in range(n_assets)])


def signature_analytic(kernel: CorrelationKernel, tau_max: int) -> SignatureCurve:
    """``sigma2(tau) = sigma2 + (2/tau) sum_{u=1}^{tau} (tau - u) C(u)`` for integer tau."""
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")
    taus = np.arange(1, int(tau_max) + 1)
    c = kernel.covariance(taus)
    # sum_{u<=tau} (tau - u) C(u) = tau * cumsum(C) - cumsum(u C)
    s = taus * np.cumsum(c) - np.cumsum(taus * c)
    return SignatureCurve(taus, kernel.sigma2 + 2.0 * s / taus)


def signature_empirical(prices, tau_max: int, batch_factor: int = 10) -> SignatureCurve:
    """Overlapping-window estimate of ``<(S_{t+tau} - S_t)**2> / tau``.

    Standard errors come from batch means with batch length
    ``batch_factor * tau``, which absorbs the overlap correlation.
    """
    s = np.asarray(prices, dtype=float)
    if len(s) < 20 * tau_max:
        raise ValueError(f"series of length {len(s)} too short for tau_max={tau_max} (need 20x)")
    taus = np.arange(1, int(tau_max) + 1)
    sig = np.empty(len(taus))
    err = np.empty(len(taus))
    for i, tau in enumerate(taus):
        y = (s[tau:] - s[:-tau]) ** 2 / tau
        sig[i] = y.mean()
        b = batch_factor * tau
        nb = len(y) // b
        if nb >= 2:
            means = y[: nb * b].reshape(nb, b).mean(axis=1)
            err[i] = means.std(ddof=1) / math.sqrt(nb)
        else:
            err[i] = np.nan
    return SignatureCurve(taus, sig, err)
