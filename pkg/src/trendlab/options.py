"""Uniform strangle books, their re-centring hedge and the variance-swap identity.

Interest rates are zero throughout and prices are additive. None of the
identities here depend on an option pricing model; :func:`synthetic_option_prices`
only exists to build self-consistent books for experiments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .timeseries import DataError


@dataclass(frozen=True, eq=False)
class StrangleBook:
    """Options on one underlying, all with maturity ``maturity`` ticks.

    ``kinds`` holds ``"P"`` or ``"C"`` per strike; ``weights`` is the notional
    per option (``dK`` for a uniform book).
    """

    s0: float
    strikes: np.ndarray
    kinds: np.ndarray
    weights: np.ndarray
    premiums: np.ndarray
    maturity: int

    def __post_init__(self):
        k = np.asarray(self.strikes, dtype=float)
        kinds = np.asarray(self.kinds).astype(str)
        w = np.asarray(self.weights, dtype=float)
        p = np.asarray(self.premiums, dtype=float)
        if len(k) == 0:
            raise DataError("empty strangle book")
        if not (len(k) == len(kinds) == len(w) == len(p)):
            raise DataError("strikes, kinds, weights and premiums must align")
        if not set(kinds) <= {"P", "C"}:
            raise DataError("option kinds must be 'P' or 'C'")
        if np.any(np.diff(k) < 0):
            raise DataError("strikes must be sorted ascending")
        if np.any(k[kinds == "P"] > self.s0) or np.any(k[kinds == "C"] < self.s0):
            raise DataError("puts must be struck at or below s0 and calls at or above")
        if np.any(w < 0):
            raise DataError("weights must be nonnegative")
        intrinsic = np.where(kinds == "C", np.maximum(self.s0 - k, 0), np.maximum(k - self.s0, 0))
        if np.any(p < intrinsic - 1e-12):
            raise DataError("premium below intrinsic value")
        if self.maturity <= 0:
            raise DataError("maturity must be positive")
        object.__setattr__(self, "strikes", k)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "premiums", p)

    @property
    def total_premium(self) -> float:
        return float(np.sum(self.weights * self.premiums))

    @property
    def call_notional(self) -> float:
        return float(self.weights[self.kinds == "C"].sum())


def strike_grid(s0: float, dk_frac: float = 0.01, range_frac: float = 0.5):
    """Uniform strikes ``s0 + j dK`` over ``+-range`` with trapezoid weights.

    Puts sit at or below ``s0``, calls at or above; the at-the-money put and
    call each carry half a step, the extreme strikes likewise.
    """
    dk = dk_frac * s0
    m = int(round(range_frac / dk_frac))
    put_k = s0 + dk * np.arange(-m, 1)
    call_k = s0 + dk * np.arange(0, m + 1)
    put_w = np.full(len(put_k), dk)
    call_w = np.full(len(call_k), dk)
    put_w[[0, -1]] = dk / 2
    call_w[[0, -1]] = dk / 2
    strikes = np.concatenate([put_k, call_k])
    kinds = np.array(["P"] * len(put_k) + ["C"] * len(call_k))
    weights = np.concatenate([put_w, call_w])
    return strikes, kinds, weights


def synthetic_option_prices(s0: float, strikes, kinds, maturity: int, vol: float) -> np.ndarray:
    """Undiscounted prices under ``S_T ~ Normal(s0, vol * sqrt(T))``."""
    if vol < 0:
        raise ValueError("volatility must be nonnegative")
    if maturity <= 0:
        raise ValueError("maturity must be positive")
    k = np.asarray(strikes, dtype=float)
    call = np.asarray(kinds).astype(str) == "C"
    s = vol * math.sqrt(maturity)
    if s == 0:
        return np.where(call, np.maximum(s0 - k, 0), np.maximum(k - s0, 0))
    m = np.where(call, s0 - k, k - s0)
    return m * norm.cdf(m / s) + s * norm.pdf(m / s)


def uniform_book(
    s0: float, maturity: int, vol: float, dk_frac: float = 0.01, range_frac: float = 0.5
) -> StrangleBook:
    strikes, kinds, weights = strike_grid(s0, dk_frac, range_frac)
    prem = synthetic_option_prices(s0, strikes, kinds, maturity, vol)
    return StrangleBook(s0, strikes, kinds, weights, prem, maturity)


def load_book(path, s0: float, maturity: int, delimiter: str = ",") -> StrangleBook:
    """Read ``strike,type,premium[,weight]``; missing weights use the trapezoid rule on strike gaps."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh, delimiter=delimiter), start=2):
            try:
                rows.append((
                    float(row["strike"]),
                    row["type"].strip().upper(),
                    float(row["premium"]),
                    float(row["weight"]) if row.get("weight") not in (None, "") else None,
                ))
            except (KeyError, ValueError, AttributeError):
                raise DataError(f"{path}: bad option row {lineno}") from None
    if not rows:
        raise DataError(f"{path}: empty book")
    rows.sort(key=lambda r: (r[0], r[1] != "P"))
    strikes = np.array([r[0] for r in rows])
    kinds = np.array([r[1] for r in rows])
    prem = np.array([r[2] for r in rows])
    w = np.empty(len(rows))
    for side in ("P", "C"):
        idx = np.flatnonzero(kinds == side)
        if len(idx) == 0:
            continue
        k = strikes[idx]
        gaps = np.diff(k)
        ww = np.zeros(len(k))
        ww[:-1] += gaps / 2
        ww[1:] += gaps / 2
        w[idx] = ww
    for i, r in enumerate(rows):
        if r[3] is not None:
            w[i] = r[3]
    return StrangleBook(s0, strikes, kinds, w, prem, maturity)


def straddle_pnl(s0: float, s_t: float, call_premium: float, put_premium: float) -> float:
    if call_premium < 0 or put_premium < 0:
        raise ValueError("premiums must be nonnegative")
    return abs(s_t - s0) - (call_premium + put_premium)


def strangle_payoff(book: StrangleBook, s_t) -> np.ndarray | float:
    """Discrete book payoff at expiry; compare with ``continuum_payoff``."""
    s = np.atleast_1d(np.asarray(s_t, dtype=float))[:, None]
    k = book.strikes[None, :]
    call = (book.kinds == "C")[None, :]
    intrinsic = np.where(call, np.maximum(s - k, 0.0), np.maximum(k - s, 0.0))
    out = intrinsic @ book.weights
    return float(out[0]) if np.ndim(s_t) == 0 else out


def continuum_payoff(s0: float, s_t):
    """Payoff ``(S_T - S_0)**2 / 2`` of the infinite uniform strangle book."""
    return 0.5 * (np.asarray(s_t, dtype=float) - s0) ** 2


@dataclass(frozen=True)
class EffectiveImpliedVol:
    sigma_bar: float
    total_premium: float


def effective_implied_vol(book: StrangleBook) -> EffectiveImpliedVol:
    """``sigma_bar`` with ``total premium = T sigma_bar**2 / 2`` (per-tick units)."""
    total = book.total_premium
    if total < 0:
        raise ValueError("negative total premium")
    return EffectiveImpliedVol(math.sqrt(2.0 * total / book.maturity), total)


def _rebalance_ticks(n_changes: int, every: int) -> np.ndarray:
    if every < 1:
        raise ValueError("rebalance_every must be >= 1")
    ticks = np.arange(0, n_changes, every)
    return np.append(ticks, n_changes)


def delta_hedge_pnl(path, rebalance_every: int = 1) -> np.ndarray:
    """Per-tick gains of the re-centring hedge, position ``-(S_t - S_0)``.

    The position is reset at ticks that are multiples of ``rebalance_every``
    and held in between. Returned array has one gain per price change.
    """
    s = np.asarray(path, dtype=float)
    if len(s) < 2:
        raise ValueError("hedge path needs at least two prices")
    if rebalance_every < 1:
        raise ValueError("rebalance_every must be >= 1")
    n = len(s) - 1
    set_at = (np.arange(n) // rebalance_every) * rebalance_every
    position = -(s[set_at] - s[0])
    return position * np.diff(s)


def hedge_closed_form(path, rebalance_every: int = 1) -> float:
    """``sum over hedge periods of dS**2 / 2 - (S_T - S_0)**2 / 2``."""
    s = np.asarray(path, dtype=float)
    ticks = _rebalance_ticks(len(s) - 1, rebalance_every)
    inc = np.diff(s[ticks])
    return 0.5 * float(inc @ inc) - 0.5 * float((s[-1] - s[0]) ** 2)


@dataclass(frozen=True)
class VarianceSwapReport:
    rebalance_every: int
    maturity: int
    sigma_bar: float
    strangle_leg: float
    discrete_strangle_leg: float
    hedge_leg: float
    realized_leg: float
    implied_leg: float
    residual: float
    realized_variance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def variance_swap_pnl(path, book: StrangleBook, rebalance_every: int = 1) -> VarianceSwapReport:
    """Strangle book plus re-centring hedge against ``sum dS**2 / 2 - T sigma_bar**2 / 2``.

    With the continuum payoff the residual vanishes path by path at every
    hedging period, the realised leg being built from ``rebalance_every``-tick
    increments.
    """
    s = np.asarray(path, dtype=float)
    T = book.maturity
    if len(s) < T + 1:
        raise DataError(f"path of {len(s)} prices shorter than maturity {T}")
    if abs(s[0] - book.s0) > 1e-12 * max(1.0, abs(book.s0)):
        raise DataError("path must start at the book's anchor price")
    s = s[: T + 1]
    iv = effective_implied_vol(book)
    premium = iv.total_premium
    strangle = float(continuum_payoff(book.s0, s[-1])) - premium
    discrete = float(strangle_payoff(book, s[-1])) - premium
    hedge = float(delta_hedge_pnl(s, rebalance_every).sum())
    inc = np.diff(s[_rebalance_ticks(T, rebalance_every)])
    realized = 0.5 * float(inc @ inc)
    implied = 0.5 * T * iv.sigma_bar**2
    return VarianceSwapReport(
        rebalance_every=rebalance_every,
        maturity=T,
        sigma_bar=iv.sigma_bar,
        strangle_leg=strangle,
        discrete_strangle_leg=discrete,
        hedge_leg=hedge,
        realized_leg=realized,
        implied_leg=implied,
        residual=strangle + hedge - (realized - implied),
        realized_variance=float(inc @ inc) / T,
    )
