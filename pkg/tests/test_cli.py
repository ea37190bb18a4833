import json

import pytest

from gibbsnls import __version__
from gibbsnls.cli import EXPERIMENTS, ConfigError, main, parse_config


def test_defaults():
    cfg = parse_config("invariance")
    assert cfg.params["N"] == 8 and cfg.params["count"] == 5000
    assert cfg.params["t_values"] == [0.1, 0.5, 1.0]
    assert cfg.params["nonlinearity"] == "pure_quartic"
    for exp in EXPERIMENTS:
        assert parse_config(exp).params["seed"] == 0


def test_config_file_and_override(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nN = 4\ncount=200\n")
    cfg = parse_config("sample", f, {"count": "300"})
    assert cfg.params["N"] == 4 and cfg.params["count"] == 300


def test_digest_ignores_out_and_workers():
    a = parse_config("tails", overrides={"out": "x", "workers": "3"})
    b = parse_config("tails", overrides={"out": "y"})
    assert a.digest() == b.digest()
    assert a.digest() != parse_config("tails", overrides={"seed": "1"}).digest()


@pytest.mark.parametrize(
    "exp, over, key",
    [
        ("sample", {"alpha": "5"}, "alpha"),
        ("sample", {"s": "0.1"}, "s"),
        ("evolve", {"dt": "0"}, "dt"),
        ("invariance", {"count": "10"}, "count"),
        ("ihp", {"beta": "0.6"}, "beta"),
        ("v2", {"N_list": "16,128"}, "N_list"),
        ("sample", {"N": "abc"}, "N"),
        ("evolve", {"nonlinearity": "pure_quartic", "alpha": "3"}, "alpha"),
    ],
)
def test_validation_names_key(exp, over, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(exp, overrides=over)


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("tails", overrides={"bogus": "1"})


def test_exit_code_on_bad_config(tmp_path, capsys):
    assert main(["sample", "--out", str(tmp_path), "alpha=5"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "alpha" in err["message"]
    assert main(["sample", "--out", str(tmp_path), "noequals"]) == 2


def test_runtime_error_record(tmp_path):
    assert main(["ihp", "--out", str(tmp_path), "n_max=2", "alphas=100"]) == 2
    err = json.loads((tmp_path / "error.json").read_text())
    assert err["error"] == "ValueError" and "n_max" in err["message"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["passed"] is False


def test_manifest(tmp_path):
    assert main(["sphere-gamma", "--out", str(tmp_path), "max_index=6"]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["version"] == __version__ and man["passed"] is True
    assert man["config_sha256"] == parse_config("sphere-gamma", overrides={"max_index": "6"}).digest()
    assert man["wall_time_s"] >= 0 and man["verdicts"]
    assert (tmp_path / "gamma.csv").read_text().startswith("n,n1,n2,n3,m\n")


def test_failing_check_exit_code(tmp_path):
    assert main(["ihp", "--out", str(tmp_path), "n_max=1000", "alphas=1,4,5.5,100"]) == 1


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_determinism_across_runs_and_workers(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["sample", "N=6", "count=400", "--seed", "11"]
    assert main(args + ["--out", str(a), "--workers", "1"]) == 0
    assert main(args + ["--out", str(b), "--workers", "1"]) == 0
    assert main(args + ["--out", str(c), "--workers", "4"]) == 0
    fa = _files(a)
    assert fa and fa == _files(b) == _files(c)


def test_evolve_outputs(tmp_path):
    assert main(["evolve", "--out", str(tmp_path), "t=0.05", "stride=10", "--format", "json"]) == 0
    assert (tmp_path / "trajectory.csv").read_text().startswith("t,n,re,im\n")
    assert json.loads((tmp_path / "diagnostics.json").read_text())
    assert (tmp_path / "evolve.json").exists()
