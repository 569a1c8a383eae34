"""Batch command-line interface.

Every verb resolves a configuration as built-in defaults, then the JSON file
given by ``--config`` (a previously emitted ``manifest.json`` also works),
then ``--param key.sub=value`` flags and ``--seed``. Outputs land in
``--out`` (default ``$TRENDLAB_OUT`` or ``./trendlab-out``) together with a
manifest echoing the resolved configuration.

Exit codes: 0 success, 1 configuration error, 2 data or runtime error,
3 failed identity or bound check.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bin_conditional, fit_quadratic, fit_vshape
from .filters import VolEstimatorSpec, ema, ema_theorem_residual, filter_product_identity
from .options import (
    hedge_closed_form,
    delta_hedge_pnl,
    strangle_payoff,
    continuum_payoff,
    uniform_book,
    variance_swap_pnl,
)
from .portfolio import (
    FeeSchedule,
    PortfolioConfig,
    apply_fees,
    convexity_bound_check,
    reference_returns,
    replicate,
    run_multi_trend,
    sharpe_ratio,
    tau_scan,
)
from .strategy import (
    PositionShape,
    TrendConfig,
    ema_trend,
    ema_trend_returns,
    theorem_check,
    theoretical_profile,
    toy_trend_changes,
    upsilon,
)
from .synth import (
    CorrelationKernel,
    KernelError,
    generate_changes,
    generate_panel,
    random_correlation,
    signature_analytic,
    signature_empirical,
)
from .timeseries import AssetPanel, DataError, TimeSeries, load_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "TRENDLAB_OUT"


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


_FEES = {
    "transaction_cost_rate": 0.02,
    "management_fee": 0.01,
    "incentive_fee": 0.20,
    "risk_free": 0.0,
    "ticks_per_year": 252,
}
_VOL = {"tau_sigma": 10.0, "gamma": 1.05}

DEFAULTS: dict[str, dict] = {
    "signature": {
        "n": 1_000_000,
        "tau_max": 50,
        "input_csv": None,
        "missing": "reject",
        "kernels": {
            "trend": {"kind": "exp-decay", "sigma2": 1.0, "amplitude": 0.1, "decay_scale": 5.0},
            "iid": {"kind": "iid", "sigma2": 1.0},
            "mean_revert": {"kind": "exp-decay", "sigma2": 1.0, "amplitude": -0.02, "decay_scale": 10.0},
        },
    },
    "trend": {
        "source": "normal",
        "n": 100_000,
        "input_csv": None,
        "missing": "reject",
        "column": None,
        "kernel": {"kind": "iid", "sigma2": 1.0},
        "tau": 180.0,
        "lam": None,
        "shape": "linear",
        "cap_level": 1.0,
        "rebalance_every": 1,
        "n_bins": 20,
        "stride": None,
        "vol": dict(_VOL),
    },
    "replicate": {
        "panel_csv": None,
        "missing": "reject",
        "reference_csv": None,
        "reference_kind": "return",
        "n_assets": 16,
        "n": 25_000,
        "mean_corr": 0.2,
        "hidden_tau": 180.0,
        "hidden_assets": 12,
        "tau_grid": [10, 15, 20, 30, 45, 60, 90, 120, 180, 270, 400],
        "convexity_asset": None,
        "fees": dict(_FEES),
        "vol": dict(_VOL),
    },
    "riskparity": {
        "panel_csv": None,
        "missing": "reject",
        "n_assets": 13,
        "n": 20_000,
        "mean_corr": 0.3,
        "tau": 180.0,
        "lam": None,
        "stride": None,
        "vol": dict(_VOL),
    },
    "strangles": {
        "s0": 100.0,
        "maturity": 250,
        "vol": 1.0,
        "dk_frac": 0.01,
        "range_frac": 0.5,
        "n_paths": 200,
        "rebalance_periods": [1, 2, 5, 10, 21, 63],
        "dk_sweep": [0.04, 0.02, 0.01, 0.005, 0.0025],
        "crash_size": 25.0,
    },
    "selftest": {
        "n_series": 50,
        "length": 10_000,
        "tolerance": 1e-10,
    },
}
# Sub-dicts whose keys are user-chosen names rather than a fixed schema.
_OPEN = {("signature", "kernels")}


# --------------------------------------------------------------- config ---


def _check(value, default, path: tuple, command: str):
    if isinstance(default, dict):
        if (command, *path) in _OPEN:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path)}: expected an object")
            return
        if not isinstance(value, dict):
            raise ConfigError(f"{'.'.join(path)}: expected an object")
        for k, v in value.items():
            if k not in default:
                raise ConfigError(f"{'.'.join(path + (k,))}: unknown field")
            _check(v, default[k], path + (k,), command)
        return
    if default is None or value is None:
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{'.'.join(path)}: expected true/false")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{'.'.join(path)}: expected a number, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{'.'.join(path)}: expected a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{'.'.join(path)}: expected a list")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_dotted(cfg: dict, dotted: str, raw: str):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not an object")
    node[keys[-1]] = value


def resolve_config(command: str, config_path=None, params=(), seed=None) -> tuple[dict, int]:
    cfg = copy.deepcopy(DEFAULTS[command])
    file_seed = None
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if "config" in data and "command" in data:
            if data["command"] != command:
                raise ConfigError(f"manifest is for {data['command']!r}, not {command!r}")
            file_seed = data.get("seed")
            data = data["config"]
        file_seed = data.pop("seed", file_seed)
        cfg = _merge(cfg, data)
    overrides: dict = {}
    for item in params:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_dotted(overrides, k.strip(), v)
    cfg = _merge(cfg, overrides)
    _check(cfg, DEFAULTS[command], (), command)
    final_seed = seed if seed is not None else (file_seed if file_seed is not None else 0)
    return cfg, int(final_seed)


# --------------------------------------------------------------- output ---


class Output:
    """Writes each artefact once, atomically, into ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _atomic(self, name: str, text: str):
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, self.root / name)
        self.files.append(name)

    def json(self, name: str, obj):
        self._atomic(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header: list[str], columns: list):
        lines = [",".join(header)]
        for row in zip(*columns):
            lines.append(",".join(_cell(v) for v in row))
        self._atomic(name, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, np.generic):
        return str(v.item())
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ------------------------------------------------------------- helpers ---


def _kernel(d: dict) -> CorrelationKernel:
    try:
        return CorrelationKernel(**d)
    except (TypeError, KernelError) as exc:
        raise ConfigError(f"kernel: {exc}") from None


def _vol(cfg: dict) -> VolEstimatorSpec:
    return VolEstimatorSpec(tau_sigma=float(cfg["vol"]["tau_sigma"]), gamma=float(cfg["vol"]["gamma"]))


def _fees(f: dict) -> FeeSchedule:
    try:
        return _fee_schedule(f)
    except ValueError as exc:
        raise ConfigError(f"fees: {exc}") from None


def _fee_schedule(f: dict) -> FeeSchedule:
    return FeeSchedule(
        transaction_cost_rate=f["transaction_cost_rate"],
        management_fee=f["management_fee"],
        incentive_fee=f["incentive_fee"],
        risk_free=f["risk_free"],
        crystallize_every=int(f["ticks_per_year"]),
    )


def _synthetic_panel(cfg: dict, rng_seed) -> AssetPanel:
    ss = np.random.SeedSequence(rng_seed)
    corr_seed, panel_seed = ss.spawn(2)
    corr = random_correlation(cfg["n_assets"], cfg["mean_corr"], np.random.default_rng(corr_seed))
    return generate_panel(cfg["n_assets"], cfg["n"], np.random.default_rng(panel_seed), corr)


def _load_panel(cfg: dict, key: str) -> AssetPanel:
    # "skip" drops rows with gaps under the inner join
    return load_csv(cfg[key], missing=cfg["missing"], join="inner")


# ------------------------------------------------------------ commands ---


def cmd_signature(cfg: dict, seed: int, out: Output) -> dict:
    summary = {}
    if cfg["input_csv"]:
        panel = _load_panel(cfg, "input_csv")
        for name in panel.names:
            curve = signature_empirical(panel.series[name].values, cfg["tau_max"])
            out.csv(
                f"signature_{name}.csv",
                ["tau", "sigma2_analytic", "sigma2_empirical", "stderr"],
                [curve.taus, [None] * len(curve.taus), curve.sigma2, curve.stderr],
            )
            summary[name] = {"sigma2_1": curve.sigma2[0], "sigma2_max_tau": curve.sigma2[-1]}
        return summary
    # a kernel set to null is dropped from the default set
    names = sorted(k for k, v in cfg["kernels"].items() if v is not None)
    seeds = np.random.SeedSequence(seed).spawn(len(names))
    for name, ss in zip(names, seeds):
        kernel = _kernel(cfg["kernels"][name])
        if cfg["n"] < 20 * cfg["tau_max"]:
            raise ConfigError("n must be at least 20 * tau_max")
        d = generate_changes(kernel, cfg["n"] - 1, np.random.default_rng(ss))
        prices = np.concatenate([[0.0], np.cumsum(d)])
        exact = signature_analytic(kernel, cfg["tau_max"])
        emp = signature_empirical(prices, cfg["tau_max"])
        out.csv(
            f"signature_{name}.csv",
            ["tau", "sigma2_analytic", "sigma2_empirical", "stderr"],
            [exact.taus, exact.sigma2, emp.sigma2, emp.stderr],
        )
        z = (emp.sigma2 - exact.sigma2) / emp.stderr
        summary[name] = {"max_abs_z": float(np.max(np.abs(z)))}
    return summary


def _trend_config(cfg: dict) -> TrendConfig:
    return TrendConfig(
        tau=float(cfg["tau"]),
        lam=cfg["lam"],
        shape=PositionShape(cfg["shape"], float(cfg["cap_level"])),
        vol_spec=_vol(cfg),
        rebalance_every=int(cfg["rebalance_every"]),
    )


def cmd_trend(cfg: dict, seed: int, out: Output) -> dict:
    try:
        config = _trend_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["source"] == "csv":
        if not cfg["input_csv"]:
            raise ConfigError("input_csv: required when source is 'csv'")
        panel = _load_panel(cfg, "input_csv")
        col = cfg["column"] or panel.names[0]
        if col not in panel.series:
            raise ConfigError(f"column: {col!r} not in {panel.names}")
        ledger = ema_trend(panel.series[col], config)
    elif cfg["source"] in ("normal", "kernel"):
        if cfg["n"] < 2:
            raise ConfigError("n: need at least 2 ticks")
        kernel = _kernel(cfg["kernel"]) if cfg["source"] == "kernel" else CorrelationKernel()
        r = generate_changes(kernel, int(cfg["n"]), np.random.default_rng(seed))
        ledger = ema_trend_returns(r, config)
    else:
        raise ConfigError(f"source: unknown value {cfg['source']!r}")

    ledger.export_csv(out.root / "ledger.csv.tmp")
    os.replace(out.root / "ledger.csv.tmp", out.root / "ledger.csv")
    out.files.append("ledger.csv")

    w = ledger.warmup
    stride = cfg["stride"] or max(1, int(round(config.horizon)))
    x = ledger.indicator.values[w:]
    y = ledger.aggregated.values[w:]
    report: dict = {"tau": config.tau, "lambda": config.lam, "shape": config.shape.kind,
                    "horizon": config.horizon, "upsilon": config.upsilon, "stride": stride}
    if len(x) // stride < 2 * cfg["n_bins"]:
        raise DataError("series too short after warm-up for the requested binning")
    curve = bin_conditional(x, y, cfg["n_bins"], stride=stride)
    try:
        theory = curve.binned(theoretical_profile(config.shape, config.tau, config.lam, curve.x))
    except NotImplementedError:
        theory = np.full(len(curve.means), np.nan)
    out.csv(
        "binned.csv",
        ["bin_center", "mean", "stderr", "count", "theory"],
        [curve.bin_centers, curve.means, curve.stderrs, curve.counts, theory],
    )
    quad = fit_quadratic(curve.x, curve.y)
    vee = fit_vshape(curve.x, curve.y)
    report["quadratic_fit"] = {"params": quad.params, "r2": quad.r2, "stderrs": quad.stderrs, **quad.extra}
    report["vshape_fit"] = {"params": vee.params, "r2": vee.r2, "stderrs": vee.stderrs}
    out.json("fit.json", report)

    if config.shape.kind == "linear" and config.rebalance_every == 1:
        res = theorem_check(ledger, config)
        thm = {"applicable": True, "max_abs_residual": float(np.max(np.abs(res))), "n": len(res)}
    else:
        thm = {"applicable": False, "reason": "exact identity needs linear shape and tick rebalancing"}
    out.json("theorem.json", thm)
    return {"fit": report, "theorem": thm}


def cmd_replicate(cfg: dict, seed: int, out: Output) -> dict:
    fees = _fees(cfg["fees"])
    tpy = int(cfg["fees"]["ticks_per_year"])
    base = PortfolioConfig(trend=TrendConfig(tau=180.0, vol_spec=_vol(cfg)))
    if cfg["panel_csv"]:
        panel = _load_panel(cfg, "panel_csv")
        if not cfg["reference_csv"]:
            raise ConfigError("reference_csv: required with panel_csv")
        ref_path = Path(cfg["reference_csv"])
        if not ref_path.exists():
            raise DataError(f"reference file not found: {ref_path}")
        ref_panel = load_csv(ref_path)
        ref = reference_returns(ref_panel.series[ref_panel.names[0]], cfg["reference_kind"])
        hidden = None
    else:
        panel = _synthetic_panel(cfg, seed)
        k = int(cfg["hidden_assets"])
        if not 1 <= k <= len(panel):
            raise ConfigError("hidden_assets: must lie between 1 and n_assets")
        hidden_names = panel.names[:k]
        hidden_cfg = PortfolioConfig(trend=TrendConfig(tau=float(cfg["hidden_tau"]), lam=1.0, vol_spec=_vol(cfg)))
        hl = run_multi_trend(panel.subset(hidden_names), hidden_cfg)
        g = hl.gross.values[hl.warmup:]
        # scale the hidden index to 10% annualised volatility before fees
        g = g * (0.10 / math.sqrt(tpy)) / g.std(ddof=1)
        ref = TimeSeries(hl.gross.timestamps[hl.warmup:], apply_fees(g, fees, tpy), "reference")
        hidden = {"tau": cfg["hidden_tau"], "assets": hidden_names}

    scan = tau_scan(panel, ref, cfg["tau_grid"], fees, base, tpy)
    out.csv("tau_scan.csv", ["tau", "correlation", "lambda"], [scan.taus, scan.correlations, scan.lambdas])
    net = scan.best_net
    ref_on = ref.values[np.searchsorted(ref.timestamps, net.timestamps)]
    out.csv("net_pnl.csv", ["tick", "net", "reference"], [net.timestamps, net.values, ref_on])

    best_cfg = PortfolioConfig(trend=TrendConfig(tau=scan.best_tau, lam=1.0, vol_spec=_vol(cfg)))
    ledger = run_multi_trend(panel, best_cfg)
    bound = convexity_bound_check(ledger, best_cfg)

    # convexity of the reference against a single-asset trend, aggregated vs raw monthly
    col = cfg["convexity_asset"] or panel.names[0]
    tau = scan.best_tau
    tp = best_cfg.trend.filter.tau_prime
    single = ledger.per_asset[col]
    idx = np.searchsorted(single.indicator.timestamps, net.timestamps)
    t_single = single.indicator.values[idx]
    agg_ref = tp * ema(ref_on, tp)
    stride = max(1, int(round(tp)))
    w = int(math.ceil(3 * tau))
    conv = fit_quadratic(t_single[w::stride], agg_ref[w::stride]) if len(t_single) > w + 3 * stride else None
    month = 21
    m = len(ref_on) // month
    raw = None
    if m >= 3:
        ref_m = ref_on[: m * month].reshape(m, month).sum(axis=1)
        ret_m = single.returns.values[idx][: m * month].reshape(m, month).sum(axis=1)
        raw = fit_quadratic(ret_m, ref_m)

    report = {
        "best_tau": scan.best_tau,
        "best_correlation": scan.best_correlation,
        "correlation_curve": dict(zip([float(t) for t in scan.taus], scan.correlations.tolist())),
        "sharpe_replicator": sharpe_ratio(net.values, tpy),
        "sharpe_reference": sharpe_ratio(ref_on, tpy),
        "bound_check": {"ok": bound.ok, "violations": len(bound.violations), "min_slack": bound.min_slack},
        "convexity_aggregated_r2": None if conv is None else conv.r2,
        "convexity_monthly_r2": None if raw is None else raw.r2,
        "hidden": hidden,
    }
    out.json("report.json", report)
    return report


def cmd_riskparity(cfg: dict, seed: int, out: Output) -> dict:
    panel = _load_panel(cfg, "panel_csv") if cfg["panel_csv"] else _synthetic_panel(cfg, seed)
    config = PortfolioConfig(trend=TrendConfig(tau=float(cfg["tau"]), lam=cfg["lam"], vol_spec=_vol(cfg)))
    ledger = run_multi_trend(panel, config)
    bound = convexity_bound_check(ledger, config)
    w = ledger.warmup
    stride = cfg["stride"] or max(1, int(round(config.trend.filter.tau_prime)))
    sl = slice(w, None, stride)
    out.csv(
        "scatter.csv",
        ["tick", "rp_indicator", "aggregated_gain", "bound"],
        [ledger.gross.timestamps[sl], ledger.rp_indicator.values[sl], bound.lhs[sl], bound.rhs[sl]],
    )
    grid = np.linspace(-4, 4, 161)
    out.csv("parabola.csv", ["rp_indicator", "theory"], [grid, upsilon(config.trend.tau, config.trend.lam) * (grid**2 - 1)])
    summary = {
        "ok": bound.ok,
        "violations": bound.violations[:100].tolist(),
        "n_violations": len(bound.violations),
        "min_slack": bound.min_slack,
        "tolerance": bound.tolerance,
        "n_assets": len(panel),
    }
    out.json("bound.json", summary)
    if not bound.ok:
        raise CheckFailed(f"{len(bound.violations)} bound violations")
    return summary


def cmd_strangles(cfg: dict, seed: int, out: Output) -> dict:
    s0, T, vol = float(cfg["s0"]), int(cfg["maturity"]), float(cfg["vol"])
    book = uniform_book(s0, T, vol, cfg["dk_frac"], cfg["range_frac"])
    grid = np.linspace(s0 * (1 - 0.8 * cfg["range_frac"] * 2), s0 * (1 + 0.8 * cfg["range_frac"] * 2), 201)
    out.csv(
        "payoff.csv",
        ["s_T", "discrete", "continuum", "straddle"],
        [grid, strangle_payoff(book, grid), continuum_payoff(s0, grid), np.abs(grid - s0)],
    )
    rng = np.random.default_rng(seed)
    periods = [int(p) for p in cfg["rebalance_periods"]]
    res = {p: [] for p in periods}
    rv = {p: [] for p in periods}
    hedge = {p: [] for p in periods}
    for _ in range(int(cfg["n_paths"])):
        path = s0 + np.concatenate([[0.0], np.cumsum(vol * rng.standard_normal(T))])
        for p in periods:
            rep = variance_swap_pnl(path, book, p)
            res[p].append(abs(rep.residual))
            rv[p].append(rep.realized_variance)
            hedge[p].append(rep.hedge_leg)
    out.csv(
        "hedging_sweep.csv",
        ["rebalance_every", "mean_realized_variance", "mean_hedge_pnl", "max_abs_residual"],
        [periods, [np.mean(rv[p]) for p in periods], [np.mean(hedge[p]) for p in periods],
         [np.max(res[p]) for p in periods]],
    )
    errs = []
    for dk in cfg["dk_sweep"]:
        b = uniform_book(s0, T, vol, dk, cfg["range_frac"])
        inside = np.linspace(s0 * (1 - 0.9 * cfg["range_frac"]), s0 * (1 + 0.9 * cfg["range_frac"]), 997)
        errs.append(float(np.max(np.abs(strangle_payoff(b, inside) - continuum_payoff(s0, inside)))))
    out.csv("convergence.csv", ["dk_frac", "max_error"], [cfg["dk_sweep"], errs])

    flat = np.full(T + 1, s0)
    zero = variance_swap_pnl(flat, book, 1)
    crash = np.full(T + 1, s0)
    crash[T // 2 + 1:] -= cfg["crash_size"]
    crash_rep = variance_swap_pnl(crash, book, 1)
    toy = toy_trend_changes(np.diff(crash), lam=1.0)
    max_res = max(max(v) for v in res.values())
    summary = {
        "sigma_bar": zero.sigma_bar,
        "max_abs_residual": max_res,
        "zero_vol_path": zero.to_dict(),
        "crash_path": {"strangles_naked": crash_rep.strangle_leg, "toy_trend_pnl": toy.total},
        "convergence": dict(zip([str(d) for d in cfg["dk_sweep"]], errs)),
    }
    out.json("identity.json", summary)
    if max_res > 1e-10 * max(1.0, s0**2):
        raise CheckFailed(f"variance-swap residual {max_res:g}")
    return summary


def cmd_selftest(cfg: dict, seed: int, out: Output) -> dict:
    rng = np.random.default_rng(seed)
    tol = float(cfg["tolerance"])
    n, length = int(cfg["n_series"]), int(cfg["length"])
    worst = {"filter_theorem": 0.0, "product_identity": 0.0, "toy_identity": 0.0,
             "ema_trend_theorem": 0.0, "variance_swap": 0.0, "risk_parity_bound": 0.0}
    for _ in range(n):
        x = rng.standard_normal(length)
        tau = rng.uniform(2, 500)
        worst["filter_theorem"] = max(worst["filter_theorem"], float(np.abs(ema_theorem_residual(x, tau)).max()))
        y = rng.standard_normal(length)
        a, b = rng.uniform(0.05, 0.99, 2)
        # residuals are relative to the scale of the terms involved
        scale = 1.0 / ((1.0 - a) * (1.0 - b))
        worst["product_identity"] = max(worst["product_identity"],
                                        float(np.abs(filter_product_identity(x, y, a, b)).max()) / scale)
        toy = toy_trend_changes(x, 1.0)
        worst["toy_identity"] = max(worst["toy_identity"], abs(toy.residual) / float(x @ x))
        prices = 100 + np.concatenate([[0.0], np.cumsum(x)])
        tc = TrendConfig(tau=float(tau), lam=1.0)
        led = ema_trend(prices, tc)
        worst["ema_trend_theorem"] = max(worst["ema_trend_theorem"], float(np.abs(theorem_check(led, tc)).max()))
        T = 250
        book = uniform_book(100.0, T, 1.0)
        rep = variance_swap_pnl(prices[: T + 1] - prices[0] + 100.0, book, int(rng.integers(1, 20)))
        worst["variance_swap"] = max(worst["variance_swap"], abs(rep.residual))
    for _ in range(5):
        k = int(rng.integers(1, 9))
        panel = generate_panel(k, 5000, rng, random_correlation(k, 0.3, rng))
        pc = PortfolioConfig(trend=TrendConfig(tau=float(rng.uniform(5, 200)), lam=1.0))
        rep = convexity_bound_check(run_multi_trend(panel, pc), pc)
        worst["risk_parity_bound"] = max(worst["risk_parity_bound"], max(0.0, -rep.min_slack))
    passed = {k: v < tol for k, v in worst.items()}
    path = 100 + np.concatenate([[0.0], np.cumsum(rng.standard_normal(500))])
    gap = abs(delta_hedge_pnl(path, 1).sum() - hedge_closed_form(path, 1)) / float(np.diff(path) @ np.diff(path))
    worst["hedge_closed_form"] = gap
    passed["hedge_closed_form"] = gap < tol
    summary = {"tolerance": tol, "worst": worst, "passed": passed, "ok": all(passed.values())}
    out.json("selftest.json", summary)
    if not summary["ok"]:
        raise CheckFailed("identity residual above tolerance: " + ", ".join(k for k, v in passed.items() if not v))
    return summary


COMMANDS = {
    "signature": cmd_signature,
    "trend": cmd_trend,
    "replicate": cmd_replicate,
    "riskparity": cmd_riskparity,
    "strangles": cmd_strangles,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trendlab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"trendlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config or emitted manifest")
        p.add_argument("--seed", type=int, help="RNG seed (default 0)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./trendlab-out)")
        p.add_argument("-p", "--param", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, dotted keys for nesting; value parsed as JSON")
    return parser


def run(command: str, config_path=None, params=(), seed=None, out_dir=None) -> dict:
    cfg, seed = resolve_config(command, config_path, params, seed)
    out_dir = out_dir or os.environ.get(OUT_ENV) or "trendlab-out"
    out = Output(out_dir)
    summary = None
    try:
        summary = COMMANDS[command](cfg, seed, out)
    finally:
        manifest = {"command": command, "version": __version__, "seed": seed,
                    "output_dir": str(out_dir), "config": cfg, "files": sorted(out.files)}
        out.json("manifest.json", manifest)
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args.command, args.config, args.param, args.seed, args.out)
    except ConfigError as exc:
        print(f"trendlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"trendlab: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"trendlab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
