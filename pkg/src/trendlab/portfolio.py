"""Multi-asset trend replicator, fees, Risk Parity benchmark and tau scan."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .filters import ema, risk_normalize
from .strategy import StrategyLedger, TrendConfig, _build_ledger, upsilon
from .timeseries import AssetPanel, DataError, TimeSeries

TICKS_PER_YEAR = 252


@dataclass(frozen=True)
class PortfolioConfig:
    """Equal risk weights ``w_k = 1/N`` unless given; weights must be a convex combination."""

    trend: TrendConfig = field(default_factory=TrendConfig)
    weights: tuple | None = None
    rp_weights: tuple | None = None

    def resolved_weights(self, n_assets: int, which: str = "trend") -> np.ndarray:
        w = self.weights if which == "trend" else self.rp_weights
        if w is None:
            return np.full(n_assets, 1.0 / n_assets)
        w = np.asarray(w, dtype=float)
        if len(w) != n_assets:
            raise ValueError(f"{len(w)} weights for {n_assets} assets")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        return w


@dataclass(frozen=True)
class FeeSchedule:
    """Annualised cost drag, management fee, incentive fee and risk-free rate.

    ``risk_free`` is a flat annual rate or a per-tick series of returns.
    """

    transaction_cost_rate: float = 0.02
    management_fee: float = 0.01
    incentive_fee: float = 0.20
    risk_free: float | np.ndarray = 0.0
    crystallize_every: int = TICKS_PER_YEAR

    def __post_init__(self):
        for name in ("transaction_cost_rate", "management_fee", "incentive_fee"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if np.ndim(self.risk_free) == 0 and not 0 <= self.risk_free < 1:
            raise ValueError("flat risk-free rate must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class PortfolioLedger:
    per_asset: dict
    gross: TimeSeries
    aggregated: TimeSeries
    rp: TimeSeries
    rp_indicator: TimeSeries
    returns: np.ndarray
    weights: np.ndarray
    warmup: int
    net: TimeSeries | None = None


def _normalized(panel: AssetPanel, config: PortfolioConfig):
    prices = panel.matrix()
    d = np.diff(prices, axis=0)
    r = np.empty_like(d)
    sig = np.empty_like(d)
    for k in range(d.shape[1]):
        r[:, k], sig[:, k] = risk_normalize(d[:, k], config.trend.vol_spec)
    return d, r, sig


def run_multi_trend(panel: AssetPanel, config: PortfolioConfig | None = None) -> PortfolioLedger:
    """Equal-risk trend portfolio ``G_t = lam tau sum_k w_k L_tau[R_{k,t-1}] R_{k,t}``.

    Per-asset ledgers carry the unweighted single-asset gains; the portfolio
    gain is their weighted sum in fixed asset order.
    """
    config = config or PortfolioConfig()
    if not panel.is_aligned():
        raise DataError("panel must be aligned before running the portfolio")
    names = panel.names
    w = config.resolved_weights(len(names))
    omega = config.resolved_weights(len(names), "rp")
    ts = panel.timestamps
    if len(ts) < config.trend.vol_spec.warmup + 2:
        raise ValueError("panel too short for the volatility warm-up")
    d, r, sig = _normalized(panel, config)
    warmup = max(config.trend.vol_spec.warmup, int(math.ceil(3 * config.trend.tau)))
    per_asset: dict[str, StrategyLedger] = {}
    gross = np.zeros(len(d))
    for k, name in enumerate(names):
        led = _build_ledger(ts[1:], ts, d[:, k], r[:, k], sig[:, k], config.trend, warmup)
        per_asset[name] = led
        gross = gross + w[k] * led.gains.values
    h = config.trend.horizon
    rp = r @ omega
    tau = config.trend.tau
    return PortfolioLedger(
        per_asset=per_asset,
        gross=TimeSeries(ts[1:], gross, "gross"),
        aggregated=TimeSeries(ts[1:], h * ema(gross, h), "aggregated_gain"),
        rp=TimeSeries(ts[1:], rp, "risk_parity"),
        rp_indicator=TimeSeries(ts[1:], math.sqrt(tau) * ema(rp, tau), "rp_indicator"),
        returns=r,
        weights=w,
        warmup=warmup,
    )


def run_risk_parity(panel: AssetPanel, config: PortfolioConfig | None = None) -> TimeSeries:
    """Long-everything inverse-volatility portfolio ``sum_k omega_k R_{k,t}``."""
    config = config or PortfolioConfig()
    if not panel.is_aligned():
        raise DataError("panel must be aligned")
    omega = config.resolved_weights(len(panel), "rp")
    _, r, _ = _normalized(panel, config)
    return TimeSeries(panel.timestamps[1:], r @ omega, "risk_parity")


def apply_fees(gross, schedule: FeeSchedule | None = None, ticks_per_year: int = TICKS_PER_YEAR):
    """Net P&L ``G - c - f + r`` per tick (additive, relative to unit capital).

    Transaction and management costs accrue pro rata each tick. The incentive
    fee is accrued on cumulative performance above the high-water mark and
    crystallised every ``schedule.crystallize_every`` ticks; accrued but
    uncrystallised fees reverse when performance falls back. Returns a
    ``TimeSeries`` if given one, else an array.
    """
    schedule = schedule or FeeSchedule()
    if ticks_per_year <= 0:
        raise ValueError("ticks_per_year must be positive")
    g = np.asarray(gross, dtype=float)
    n = len(g)
    if np.ndim(schedule.risk_free) == 0:
        rf = np.full(n, schedule.risk_free / ticks_per_year)
    else:
        rf = np.asarray(schedule.risk_free, dtype=float)
        if len(rf) != n:
            raise ValueError("risk-free series must match the gross series length")
    drag = (schedule.transaction_cost_rate + schedule.management_fee) / ticks_per_year
    pre = g - drag + rf
    cum_pre = np.cumsum(pre)
    fee = np.zeros(n)
    hwm = 0.0
    paid = 0.0
    accrued = 0.0
    for t in range(n):
        level = cum_pre[t] - paid
        new_accrued = schedule.incentive_fee * max(level - hwm, 0.0)
        fee[t] = new_accrued - accrued
        accrued = new_accrued
        if (t + 1) % schedule.crystallize_every == 0:
            paid += accrued
            hwm = max(hwm, cum_pre[t] - paid)
            accrued = 0.0
    net = pre - fee
    if isinstance(gross, TimeSeries):
        return gross.with_values(net, "net")
    return net


def sharpe_ratio(returns, ticks_per_year: int = TICKS_PER_YEAR) -> float:
    x = np.asarray(returns, dtype=float)
    sd = x.std(ddof=1)
    return 0.0 if sd == 0 else float(x.mean() / sd * math.sqrt(ticks_per_year))


@dataclass(frozen=True, eq=False)
class BoundReport:
    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    violations: np.ndarray
    tolerance: float

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    @property
    def min_slack(self) -> float:
        return float(self.slack.min())


def convexity_bound_check(
    ledger: PortfolioLedger, config: PortfolioConfig, tolerance: float = 1e-10
) -> BoundReport:
    """Pointwise lower bound of the aggregated trend P&L by the Risk Parity trend.

    ``sum_k w_k G_k >= Upsilon * ((T_RP)**2 - sum_k w_k L_tau'[R_k**2])``;
    the left side is the ledger's own aggregated P&L, so the check covers the
    actual gains, not just the algebra. Violations are ticks where the slack
    is below ``-tolerance``.
    """
    trend = config.trend
    if trend.shape.kind != "linear" or trend.rebalance_every != 1:
        raise ValueError("the bound requires the linear, tick-rebalanced trend")
    w = ledger.weights
    if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
        raise ValueError("weights must be a convex combination")
    tau = trend.tau
    tp = trend.filter.tau_prime
    if abs(trend.horizon - tp) > 0:
        raise ValueError("the bound is stated for aggregation over tau'")
    r = ledger.returns
    t_rp = math.sqrt(tau) * ema(r @ w, tau)
    short = ema(r**2, tp) @ w
    rhs = upsilon(tau, trend.lam) * (t_rp**2 - short)
    lhs = ledger.aggregated.values
    slack = lhs - rhs
    return BoundReport(lhs, rhs, slack, np.flatnonzero(slack < -tolerance), tolerance)


def vol_match(candidate, reference) -> float:
    """Factor that gives ``candidate`` the sample volatility of ``reference``."""
    c = np.asarray(candidate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if len(c) == 0 or len(ref) == 0:
        raise ValueError("vol_match needs nonempty series")
    sc = c.std(ddof=1)
    if not sc > 0:
        raise ValueError("candidate has zero variance")
    return float(ref.std(ddof=1) / sc)


@dataclass(frozen=True, eq=False)
class TauScan:
    taus: np.ndarray
    correlations: np.ndarray
    lambdas: np.ndarray
    best_tau: float
    best_net: TimeSeries

    @property
    def best_correlation(self) -> float:
        return float(self.correlations[np.argmax(self.correlations)])


def _common(reference: TimeSeries, stamps: np.ndarray):
    common, ir, ip = np.intersect1d(reference.timestamps, stamps, return_indices=True)
    return common, ir, ip


def replicate(
    panel: AssetPanel,
    reference: TimeSeries,
    tau: float,
    schedule: FeeSchedule | None = None,
    config: PortfolioConfig | None = None,
    ticks_per_year: int = TICKS_PER_YEAR,
):
    """Net replicator P&L at ``tau`` with ``lam`` vol-matched to ``reference``.

    Returns ``(net, lam, ledger)``; ``net`` is restricted to the post-warm-up
    ticks shared with the reference.
    """
    config = config or PortfolioConfig()
    unit = replace(config, trend=replace(config.trend, tau=float(tau), lam=1.0))
    ledger = run_multi_trend(panel, unit)
    stamps = ledger.gross.timestamps[ledger.warmup:]
    gross = ledger.gross.values[ledger.warmup:]
    common, ir, ip = _common(reference, stamps)
    if len(common) < 2 * ticks_per_year:
        raise DataError(f"reference overlaps only {len(common)} ticks (< 2 years)")
    lam = vol_match(gross[ip], reference.values[ir])
    net = apply_fees(lam * gross, schedule, ticks_per_year)
    return TimeSeries(common, net[ip], "net"), lam, ledger


def tau_scan(
    panel: AssetPanel,
    reference: TimeSeries,
    tau_grid,
    schedule: FeeSchedule | None = None,
    config: PortfolioConfig | None = None,
    ticks_per_year: int = TICKS_PER_YEAR,
) -> TauScan:
    """Correlation of the net replicator with ``reference`` as a function of ``tau``."""
    taus = np.asarray(tau_grid, dtype=float)
    corrs, lams, nets = [], [], []
    for tau in taus:
        net, lam, _ = replicate(panel, reference, tau, schedule, config, ticks_per_year)
        ref = reference.values[np.searchsorted(reference.timestamps, net.timestamps)]
        corrs.append(float(np.corrcoef(net.values, ref)[0, 1]))
        lams.append(lam)
        nets.append(net)
    corrs = np.array(corrs)
    best = int(np.argmax(corrs))
    return TauScan(taus, corrs, np.array(lams), float(taus[best]), nets[best])


def reference_returns(levels_or_returns: TimeSeries, kind: str = "return") -> TimeSeries:
    """Daily returns of a reference index given levels or returns."""
    if kind == "return":
        return levels_or_returns
    if kind == "level":
        v = levels_or_returns.values
        return TimeSeries(levels_or_returns.timestamps[1:], v[1:] / v[:-1] - 1.0, "reference")
    raise ValueError(f"unknown reference kind {kind!r}")
