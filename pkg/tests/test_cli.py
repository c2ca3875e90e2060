import csv
import json

import numpy as np
import pytest

from hierevidence import testbeds as tb
from hierevidence.cli import main
from hierevidence.evidence import write_samples_csv
from hierevidence.probcore import make_rng

FAST = {
    "pipeline": {
        "subset_size": 30,
        "posterior_draws": 1000,
        "dpgmm": {"sweeps": 80, "burn_in": 30, "thinning": 5},
        "hdpgmm": {"inner": {"sweeps": 60, "burn_in": 20, "thinning": 4},
                   "outer": {"sweeps": 100, "burn_in": 40, "thinning": 3}},
    }
}


@pytest.fixture
def neal_csv(tmp_path):
    p = tb.neal_problem()
    s = tb.weighted_samples(p, p.posterior_sampler(make_rng(42), 3000))
    path = tmp_path / "neal.csv"
    write_samples_csv(path, s, comment="seed=42")
    return path


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps(FAST))
    return path


def _load(path):
    doc = json.loads(path.read_text())
    doc.pop("timestamp")
    return doc


def test_infer_neal_default(neal_csv, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["infer", str(neal_csv), "--seed", "1", "--out", str(out)]) == 0
    doc = json.loads((out / "evidence.json").read_text())
    assert doc["schema"] == 1 and doc["seed"] == 1
    assert abs(doc["median"] + 3.246) < 0.1
    assert doc["minus"] > 0 and doc["plus"] > 0
    assert len(doc["config_fingerprint"]) == 16
    rows = (out / "log_z_draws.csv").read_text().splitlines()
    assert rows[0].startswith("# seed=1 config_fingerprint=") and rows[1] == "log_z"
    assert json.loads(capsys.readouterr().out)["median"] == doc["median"]


def test_infer_deterministic(neal_csv, fast_config, tmp_path):
    docs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["infer", str(neal_csv), "--config", str(fast_config), "--seed", "7", "--out", str(out)]) == 0
        docs.append(_load(out / "evidence.json"))
    assert docs[0] == docs[1]


def test_embedded_config_reproduces(neal_csv, fast_config, tmp_path):
    out = tmp_path / "a"
    main(["infer", str(neal_csv), "--config", str(fast_config), "--seed", "3", "--out", str(out)])
    first = _load(out / "evidence.json")
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(first["config"]))
    out2 = tmp_path / "b"
    assert main(["infer", "--config", str(replay), "--out", str(out2)]) == 0
    second = _load(out2 / "evidence.json")
    assert second["median"] == first["median"] and second["draws"] == first["draws"]
    assert second["config_fingerprint"] == first["config_fingerprint"]


def test_flags_override_config(fast_config, neal_csv, tmp_path):
    cfg = json.loads(fast_config.read_text())
    cfg["seed"] = 11
    fast_config.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    main(["infer", str(neal_csv), "--config", str(fast_config), "--seed", "12", "--out", str(out)])
    assert json.loads((out / "evidence.json").read_text())["seed"] == 12


def test_infer_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,log_likelihood\n1,2\n")
    assert main(["infer", str(bad), "--out", str(tmp_path)]) == 2
    assert "log_prior" in capsys.readouterr().err
    bad.write_text("t,log_likelihood,log_prior\n1,2,3\n4,five,6\n")
    assert main(["infer", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 3, column 'log_likelihood'" in capsys.readouterr().err
    assert main(["infer", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2


def test_infer_pipeline_failure_exit_3(tmp_path, capsys):
    path = tmp_path / "few.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "c", "log_likelihood", "log_prior"])
        for k in range(7):
            w.writerow([k, 2 * k, 0, -k, 0])
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pipeline": {"subset_size": 2}}))
    assert main(["infer", str(path), "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "posterior-dpgmm" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert main(["example", "nope", "--out", str(tmp_path)]) == 2
    assert "neal, nix2, bivariate, model-pair" in capsys.readouterr().err
    assert main(["pp-test", "--problem", "bivariate", "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["ns", "neal", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("{not json")
    assert main(["ns", "neal", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
    assert main(["ns", "neal", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_ns_command(tmp_path):
    assert main(["ns", "neal", "--live-points", "200", "--seed", "4", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "ns_neal.json").read_text())
    assert doc["schema"] == 1 and doc["problem"] == "neal"
    assert abs(doc["log_z"] - doc["analytic_log_z"]) < 4 * doc["err"]


def test_example_neal(fast_config, tmp_path):
    cfg = json.loads(fast_config.read_text())
    cfg["example"] = {"subset_size": {"neal": 30}}
    fast_config.write_text(json.dumps(cfg))
    assert main(["example", "neal", "--config", str(fast_config), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "example_neal.json").read_text())
    assert doc["reference"]["log_z"] == pytest.approx(-3.246, abs=5e-4)
    assert doc["hierarchical"]["schema"] == 1
    assert doc["retargeted_harmonic_mean"] == pytest.approx(-3.246, abs=0.05)
    assert isinstance(doc["agree"], bool) and np.isfinite(doc["harmonic_mean"])


def test_pp_test_low_power(fast_config, tmp_path):
    args = ["pp-test", "--realizations", "5", "--n-samples", "400", "--config", str(fast_config),
            "--out", str(tmp_path)]
    assert main(args) == 0
    doc = json.loads((tmp_path / "pp_verdict.json").read_text())
    assert "low_power" in doc["warnings"] and len(doc["quantiles"]) == 5
    assert doc["quantiles"] == sorted(doc["quantiles"])
    band = (tmp_path / "pp_band.csv").read_text().splitlines()
    assert band[1] == "p,ecdf,lower,upper" and len(band) == 2 + 101
    first = _load(tmp_path / "pp_verdict.json")
    assert main(args) == 0
    assert _load(tmp_path / "pp_verdict.json") == first


def test_tail_demo_command(tmp_path):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"tail_demo": {"grid_points": 41}}))
    assert main(["tail-demo", "--sample-count", "1000", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "tail_demo.csv").read_text().splitlines()[1:]))
    assert rows[0] == ["x", "truth_logpdf", "median_logpdf", "lo68", "hi68", "lo90", "hi90"]
    assert len(rows) == 42
