"""Single-asset trend strategies and their exact P&L decompositions.

Conventions: a price path ``S_0..S_n`` gives changes ``D_1..D_n``. Positions
are stamped at price ticks (``Pi_0 = 0``); gains, returns, the aggregated
P&L and the trend indicator are stamped at change ticks, with
``G_t = Pi_{t-1} * D_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filters import FilterSpec, VolEstimatorSpec, ema, lag, risk_normalize
from .timeseries import TimeSeries, diff, write_csv

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
SHAPES = ("linear", "sign", "cap", "tanh")


@dataclass(frozen=True)
class PositionShape:
    """Non-linearity applied to the unit-variance indicator ``T_t``."""

    kind: str = "linear"
    cap_level: float = 1.0

    def __post_init__(self):
        if self.kind not in SHAPES:
            raise ValueError(f"unknown position shape {self.kind!r}")
        if self.kind in ("cap", "tanh") and not self.cap_level > 0:
            raise ValueError("cap_level must be positive")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return t
        if self.kind == "sign":
            return np.sign(t)
        if self.kind == "cap":
            return np.clip(t, -self.cap_level, self.cap_level)
        return self.cap_level * np.tanh(t / self.cap_level)


@dataclass(frozen=True)
class TrendConfig:
    """EMA trend: ``Pi_t = lam * sqrt(tau) * phi(T_t) / sigma_t``.

    For the linear shape this is ``lam * tau * L_tau[R_t] / sigma_t``.
    ``aggregation`` is the horizon of the aggregated P&L ``h * L_h[G]``;
    ``None`` picks ``tau'`` for the linear shape and ``tau`` otherwise.
    """

    tau: float = 180.0
    lam: float | None = None
    shape: PositionShape = field(default_factory=PositionShape)
    vol_spec: VolEstimatorSpec = field(default_factory=VolEstimatorSpec)
    rebalance_every: int = 1
    aggregation: float | None = None

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError("trend timescale must be > 1")
        if self.lam is None:
            object.__setattr__(self, "lam", 0.01 / math.sqrt(self.tau))
        if not self.lam > 0:
            raise ValueError("risk factor lambda must be positive")
        if self.rebalance_every < 1:
            raise ValueError("rebalance_every must be >= 1")

    @property
    def filter(self) -> FilterSpec:
        return FilterSpec(self.tau)

    @property
    def horizon(self) -> float:
        if self.aggregation is not None:
            return float(self.aggregation)
        return self.filter.tau_prime if self.shape.kind == "linear" else float(self.tau)

    @property
    def upsilon(self) -> float:
        return upsilon(self.tau, self.lam)


def upsilon(tau: float, lam: float) -> float:
    """Convexity prefactor ``lam * tau * tau' / (tau - 1)``."""
    return lam * tau * FilterSpec(tau).tau_prime / (tau - 1.0)


@dataclass(frozen=True, eq=False)
class StrategyLedger:
    positions: TimeSeries
    gains: TimeSeries
    aggregated: TimeSeries
    indicator: TimeSeries
    returns: TimeSeries
    changes: TimeSeries
    sigma: TimeSeries
    warmup: int = 0

    def export_csv(self, path) -> None:
        write_csv(
            path,
            ["tick", "position", "gain", "aggregated_gain", "indicator"],
            [
                self.gains.timestamps,
                self.positions.values[1:],
                self.gains.values,
                self.aggregated.values,
                self.indicator.values,
            ],
        )


def _hold(x: np.ndarray, every: int) -> np.ndarray:
    """Sample-and-hold: value refreshed on ticks that are multiples of ``every``."""
    if every == 1:
        return x
    idx = (np.arange(len(x)) // every) * every
    return x[idx]


def _build_ledger(stamps, price_stamps, d, r, sigma, config: TrendConfig, warmup: int) -> StrategyLedger:
    spec = config.filter
    lr = ema(r, spec)
    indicator = math.sqrt(spec.tau) * lr
    if config.shape.kind == "linear":
        core = config.lam * spec.tau * lr
    else:
        core = config.lam * math.sqrt(spec.tau) * config.shape(indicator)
    pos = _hold(core / sigma, config.rebalance_every)
    gains = lag(pos) * d
    h = config.horizon
    agg = h * ema(gains, h)
    return StrategyLedger(
        positions=TimeSeries(price_stamps, np.concatenate([[0.0], pos]), "position"),
        gains=TimeSeries(stamps, gains, "gain"),
        aggregated=TimeSeries(stamps, agg, "aggregated_gain"),
        indicator=TimeSeries(stamps, indicator, "indicator"),
        returns=TimeSeries(stamps, r, "return"),
        changes=TimeSeries(stamps, d, "change"),
        sigma=TimeSeries(stamps, sigma, "sigma"),
        warmup=warmup,
    )


def ema_trend(prices, config: TrendConfig | None = None) -> StrategyLedger:
    """Run the risk-managed EMA trend on a price path."""
    config = config or TrendConfig()
    if not isinstance(prices, TimeSeries):
        prices = TimeSeries.from_values(prices)
    warmup = max(config.vol_spec.warmup, int(math.ceil(3 * config.tau)))
    if len(prices) < config.vol_spec.warmup + 2:
        raise ValueError(
            f"need at least {config.vol_spec.warmup + 2} prices for the volatility warm-up"
        )
    d = diff(prices)
    r, sigma = risk_normalize(d.values, config.vol_spec)
    return _build_ledger(d.timestamps, prices.timestamps, d.values, r, sigma, config, warmup)


def ema_trend_returns(returns, config: TrendConfig | None = None) -> StrategyLedger:
    """EMA trend on already risk-managed returns (``sigma = 1``, ``D = R``)."""
    config = config or TrendConfig()
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or len(r) < 1:
        raise ValueError("returns must be a nonempty 1-d series")
    stamps = np.arange(1, len(r) + 1)
    warmup = int(math.ceil(3 * config.tau))
    return _build_ledger(stamps, np.arange(len(r) + 1), r, r, np.ones_like(r), config, warmup)


def theorem_check(ledger: StrategyLedger, config: TrendConfig) -> np.ndarray:
    """Residual ``L_tau'[G] - lam tau/(tau-1) * (tau L_tau[R]**2 - L_tau'[R**2])``.

    Zero to rounding for linear, tick-rebalanced ledgers: ``sigma_{t-1}``
    cancels exactly between ``Pi_{t-1}`` and ``R_t = D_t / sigma_{t-1}``.
    """
    if config.shape.kind != "linear":
        raise ValueError("the exact EMA trend identity only holds for the linear shape")
    if config.rebalance_every != 1:
        raise ValueError("the exact EMA trend identity needs tick-by-tick rebalancing")
    spec = config.filter
    r = ledger.returns.values
    lr = ema(r, spec)
    rhs = config.lam * spec.tau / (spec.tau - 1.0) * (spec.tau * lr**2 - ema(r**2, spec.tau_prime))
    return ema(ledger.gains.values, spec.tau_prime) - rhs


def theoretical_profile(shape: PositionShape, tau: float, lam: float, t_grid) -> np.ndarray:
    """Conditional aggregated P&L ``<G | T>`` predicted for ``shape``."""
    t = np.asarray(t_grid, dtype=float)
    if shape.kind == "linear":
        return upsilon(tau, lam) * (t**2 - 1.0)
    if shape.kind == "sign":
        return lam * tau * (np.abs(t) - SQRT_2_OVER_PI)
    raise NotImplementedError(
        f"no closed form for the {shape.kind!r} shape; estimate it by Monte Carlo with bin_conditional"
    )


@dataclass(frozen=True, eq=False)
class ToyTrendResult:
    """Toy trend run; ``block_*`` arrays are per reset block (one block if no reset)."""

    positions: np.ndarray
    gains: np.ndarray
    total: float
    identity_rhs: float
    block_pnl: np.ndarray
    block_rhs: np.ndarray
    block_indicator: np.ndarray

    @property
    def residual(self) -> float:
        return self.total - self.identity_rhs


def toy_trend(
    prices,
    lam: float = 1.0,
    normalize: bool = False,
    reset_every: int | None = None,
    vol_spec: VolEstimatorSpec | None = None,
) -> ToyTrendResult:
    """Position ``lam * (S_t - S_anchor)`` and its sum-of-squares decomposition.

    The anchor is the first price, or the start of each block of
    ``reset_every`` changes. With ``normalize`` the strategy runs on
    risk-managed returns ``R`` instead of ``D``. The identity
    ``sum G = lam/2 * ((sum X)**2 - sum X**2)`` holds per block.
    """
    s = np.asarray(prices, dtype=float)
    if len(s) < 2:
        raise ValueError("toy trend needs at least two prices")
    x = np.diff(s)
    if normalize:
        x, _ = risk_normalize(x, vol_spec)
    return toy_trend_changes(x, lam, reset_every)


def toy_trend_changes(x, lam: float = 1.0, reset_every: int | None = None) -> ToyTrendResult:
    """:func:`toy_trend` on a given sequence of changes (or returns)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    block = n if reset_every is None else int(reset_every)
    if block < 1:
        raise ValueError("reset_every must be >= 1")
    nblocks = -(-n // block)
    padded = np.zeros(nblocks * block)
    padded[:n] = x
    xb = padded.reshape(nblocks, block)
    csum = np.cumsum(xb, axis=1)
    # prev[:, j] is the position held over change j of its block
    prev = np.zeros_like(xb)
    prev[:, 1:] = lam * csum[:, :-1]
    held = prev.ravel()
    gains = held[:n] * x
    final = 0.0 if (reset_every is not None and n % block == 0) else lam * csum.ravel()[n - 1]
    positions = np.concatenate([held[:n], [final]])
    block_pnl = (prev * xb).sum(axis=1)
    block_rhs = 0.5 * lam * (xb.sum(axis=1) ** 2 - (xb**2).sum(axis=1))
    block_ind = xb.sum(axis=1) / math.sqrt(block)
    return ToyTrendResult(
        positions=positions,
        gains=gains,
        total=float(gains.sum()),
        identity_rhs=float(block_rhs.sum()),
        block_pnl=block_pnl,
        block_rhs=block_rhs,
        block_indicator=block_ind,
    )
