import csv
import json

import numpy as np
import pytest

from trendlab import __version__
from trendlab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, resolve_config, ConfigError

SMALL = {
    "signature": ["-p", "n=20000", "-p", "tau_max=20"],
    "trend": ["-p", "n=20000", "-p", "tau=40"],
    "replicate": ["-p", "n=2000", "-p", "n_assets=4", "-p", "hidden_assets=2",
                  "-p", "tau_grid=[10,20,40]", "-p", "hidden_tau=20"],
    "riskparity": ["-p", "n=2000", "-p", "n_assets=5"],
    "strangles": ["-p", "n_paths=5"],
    "selftest": ["-p", "n_series=3", "-p", "length=2000"],
}


def run(verb, out, *extra):
    return main([verb, "--out", str(out), "--seed", "3", *SMALL[verb], *extra])


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("verb", sorted(SMALL))
def test_deterministic(verb, tmp_path, capsys):
    assert run(verb, tmp_path / "a") == EXIT_OK
    assert run(verb, tmp_path / "a2") == EXIT_OK
    a, b = read_all(tmp_path / "a"), read_all(tmp_path / "a2")
    assert a.keys() == b.keys()
    for name in a:
        if name != "manifest.json":
            assert a[name] == b[name], name
    assert run(verb, tmp_path / "a") == EXIT_OK
    assert read_all(tmp_path / "a") == a
    manifest = json.loads(a["manifest.json"])
    assert manifest["version"] == __version__
    assert manifest["seed"] == 3
    assert set(manifest["files"]) == set(a) - {"manifest.json"}


def test_manifest_round_trip(tmp_path, capsys):
    assert run("trend", tmp_path / "first") == EXIT_OK
    manifest = tmp_path / "first" / "manifest.json"
    assert main(["trend", "--config", str(manifest), "--out", str(tmp_path / "second")]) == EXIT_OK
    a, b = read_all(tmp_path / "first"), read_all(tmp_path / "second")
    for name in ("ledger.csv", "binned.csv", "fit.json", "theorem.json"):
        assert a[name] == b[name]


def test_signature_fixture_kernels(tmp_path, capsys):
    assert run("signature", tmp_path) == EXIT_OK
    names = sorted(p.name for p in tmp_path.glob("signature_*.csv"))
    assert names == ["signature_iid.csv", "signature_mean_revert.csv", "signature_trend.csv"]
    rows = read_csv(tmp_path / "signature_iid.csv")
    assert list(rows[0]) == ["tau", "sigma2_analytic", "sigma2_empirical", "stderr"]
    assert {float(r["sigma2_analytic"]) for r in rows} == {1.0}


def test_signature_from_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    prices = 100 + np.cumsum(rng.standard_normal(500))
    src = tmp_path / "prices.csv"
    src.write_text("tick,X\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(prices)))
    assert main(["signature", "--out", str(tmp_path / "o"), "-p", f"input_csv={json.dumps(str(src))}",
                 "-p", "tau_max=10"]) == EXIT_OK
    assert (tmp_path / "o" / "signature_X.csv").exists()


def test_trend_outputs(tmp_path, capsys):
    assert run("trend", tmp_path) == EXIT_OK
    ledger = read_csv(tmp_path / "ledger.csv")
    assert list(ledger[0]) == ["tick", "position", "gain", "aggregated_gain", "indicator"]
    assert len(ledger) == 20000
    thm = json.loads((tmp_path / "theorem.json").read_text())
    assert thm["applicable"] and thm["max_abs_residual"] < 1e-10


def test_trend_sign_shape(tmp_path, capsys):
    assert run("trend", tmp_path, "-p", "shape=sign") == EXIT_OK
    assert not json.loads((tmp_path / "theorem.json").read_text())["applicable"]
    rows = read_csv(tmp_path / "binned.csv")
    assert all(r["theory"] != "" for r in rows)


def test_trend_from_csv(tmp_path, capsys):
    prices = 100 + np.cumsum(np.random.default_rng(1).standard_normal(3000))
    src = tmp_path / "p.csv"
    src.write_text("date,SPX\n" + "".join(
        f"{np.datetime64('2000-01-01') + i},{float(v)!r}\n" for i, v in enumerate(prices)))
    code = main(["trend", "--out", str(tmp_path / "o"), "-p", "source=csv",
                 "-p", f"input_csv={json.dumps(str(src))}", "-p", "tau=20"])
    assert code == EXIT_OK


def test_flags_beat_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tau": 50, "n": 5000, "seed": 11}))
    resolved, seed = resolve_config("trend", cfg, ["tau=70"], None)
    assert resolved["tau"] == 70 and resolved["n"] == 5000 and seed == 11
    _, seed = resolve_config("trend", cfg, [], 4)
    assert seed == 4


def test_nested_override():
    resolved, _ = resolve_config("replicate", None, ["fees.incentive_fee=0.1"], None)
    assert resolved["fees"]["incentive_fee"] == 0.1
    assert resolved["fees"]["management_fee"] == 0.01


@pytest.mark.parametrize("params, message", [
    (["tau=abc"], "tau: expected a number"),
    (["bogus=1"], "bogus: unknown field"),
    (["vol.gamma=true"], "vol.gamma"),
    (["noequals"], "key=value"),
])
def test_field_level_errors(params, message):
    with pytest.raises(ConfigError, match=message):
        resolve_config("trend", None, params, None)


def test_validation_exit_code(tmp_path, capsys):
    assert main(["trend", "--out", str(tmp_path), "-p", "n=0"]) == EXIT_CONFIG
    assert "n:" in capsys.readouterr().err
    assert main(["trend", "--out", str(tmp_path), "-p", "tau=0.5"]) == EXIT_CONFIG
    assert main(["trend", "--out", str(tmp_path), "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_missing_reference_file(tmp_path, capsys):
    panel = tmp_path / "panel.csv"
    panel.write_text("tick,A\n" + "".join(f"{i},{100 + i % 7}\n" for i in range(50)))
    code = main(["replicate", "--out", str(tmp_path / "o"), "-p", f"panel_csv={json.dumps(str(panel))}",
                 "-p", f"reference_csv={json.dumps(str(tmp_path / 'nope.csv'))}"])
    assert code == EXIT_RUNTIME
    assert "reference file not found" in capsys.readouterr().err


def test_bad_input_csv_is_runtime_error(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("tick,A\n0,1\n1,\n")
    code = main(["trend", "--out", str(tmp_path / "o"), "-p", "source=csv", "-p", f"input_csv={json.dumps(str(src))}"])
    assert code == EXIT_RUNTIME
    assert "row 3" in capsys.readouterr().err


def test_check_failure_exit_code(tmp_path, capsys):
    # a negative tolerance can never be met, so the identity suite must report a breach
    code = main(["selftest", "--out", str(tmp_path), "-p", "n_series=1", "-p", "length=500", "-p", "tolerance=-1"])
    assert code == EXIT_CHECK


def test_out_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TRENDLAB_OUT", str(tmp_path / "env"))
    assert main(["strangles", *SMALL["strangles"]]) == EXIT_OK
    assert (tmp_path / "env" / "identity.json").exists()


def test_riskparity_outputs(tmp_path, capsys):
    assert run("riskparity", tmp_path) == EXIT_OK
    bound = json.loads((tmp_path / "bound.json").read_text())
    assert bound["ok"] and bound["n_violations"] == 0
    scatter = read_csv(tmp_path / "scatter.csv")
    assert all(float(r["aggregated_gain"]) >= float(r["bound"]) - 1e-10 for r in scatter)


def test_replicate_single_asset(tmp_path, capsys):
    code = main(["replicate", "--out", str(tmp_path), "--seed", "1", "-p", "n=2000", "-p", "n_assets=1",
                 "-p", "hidden_assets=1", "-p", "hidden_tau=20", "-p", "tau_grid=[10,20,40]",
                 "-p", "fees.incentive_fee=0", "-p", "fees.management_fee=0", "-p", "fees.transaction_cost_rate=0"])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["best_tau"] == 20
    assert report["best_correlation"] == pytest.approx(1.0, abs=1e-9)
