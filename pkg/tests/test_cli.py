import csv
import json
import math
import subprocess
import sys

import pytest

from amprlab.cli import main, parse_grid

REF_ARGS = ["n=4096", "alpha=0.8", "delta=0.25", "lambda=0.1", "gamma=0.5", "mu_b=0.5",
             "rho=0.1"]
SMALL = ["n=300", "alpha=0.8", "delta=0.25", "lambda=0.1", "gamma=0.5", "rho=0.2"]


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([argv[0], "--out", str(out), *argv[1:]])
    return code, out


def load(path):
    return json.loads(path.read_text())


def read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def test_run_ampr_ref_summary(tmp_path):
    code, out = run(tmp_path, "a", "run-ampr", *REF_ARGS)
    assert code == 0
    s = load(out / "summary.json")
    assert s["converged"] is True and s["schema_version"] == 1
    assert s["sigma2"] > 0 and s["config"]["mu_b"] == 0.5


def test_missing_required_key_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["run-ampr", "--out", str(tmp_path), "n=100", "alpha=0.5"])
    assert info.value.code == 2
    assert "missing required key" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["bogus=1"], ["rho=abc"], ["notakeyvalue"]])
def test_bad_config_is_usage_error(tmp_path, extra):
    with pytest.raises(SystemExit) as info:
        main(["run-ampr", "--out", str(tmp_path), *SMALL, "mu_b=0.5", *extra])
    assert info.value.code == 2


def test_out_of_range_value_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "bad", "run-ampr", *SMALL[:-1], "rho=1.5", "mu_b=0.5")
    assert code == 2


def test_reruns_are_byte_identical(tmp_path):
    args = ["run-ampr", *SMALL, "mu_b=0.5", "write_coords=true"]
    _, a = run(tmp_path, "a", *args)
    _, b = run(tmp_path, "b", *args)
    for name in ("summary.json", "coords.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_floats_round_trip(tmp_path):
    _, out = run(tmp_path, "a", "run-ampr", *SMALL, "mu_b=0.5", "write_coords=true")
    text = (out / "coords.csv").read_text().splitlines()
    assert text[0] == "w0,r_hat,w_hat"
    value = text[1].split(",")[1]
    assert repr(float(value)) == repr(float("%.17g" % float(value)))
    assert '"inf"' not in (out / "summary.json").read_text()


def test_run_se_infinite_mu_trajectory(tmp_path):
    code, out = run(tmp_path, "se", "run-se", "alpha=0.8", "delta=0.25", "lambda=0.1",
                    "gamma=0.5", "rho=0.1", "mu_b=inf")
    assert code == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows and list(rows[0]) == ["t", "mse", "chi", "v", "qhat", "chihat", "vhat", "sigma2"]
    assert all(float(r["vhat"]) == 0.0 and float(r["v"]) == 0.0 for r in rows)
    assert load(out / "summary.json")["config"]["mu_b"] == "inf"


def test_run_se_matches_run_ampr(tmp_path):
    _, se = run(tmp_path, "se", "run-se", *[a for a in REF_ARGS if not a.startswith("n=")])
    _, amp = run(tmp_path, "amp", "run-ampr", *REF_ARGS)
    assert load(se / "summary.json")["sigma2"] == pytest.approx(
        load(amp / "summary.json")["sigma2"], rel=0.05)


def test_unreachable_tolerance_is_flagged_not_failed(tmp_path):
    code, out = run(tmp_path, "se", "run-se", "alpha=0.8", "delta=0.25", "lambda=0.1",
                    "gamma=0.5", "rho=0.1", "mu_b=0.5", "se_max_iters=2")
    assert code == 0 and load(out / "summary.json")["converged"] is False


def test_divergence_exit_code_and_diagnostics(tmp_path):
    code, out = run(tmp_path, "div", "run-ampr", "n=200", "alpha=0.5", "delta=0.1", "rho=0.5",
                    "lambda=0", "gamma=0", "mu_b=inf")
    assert code == 3
    err = load(out / "error.json")
    assert err["error"] == "diverged" and "chi" in err["last_state"]


def test_run_gamp_uniform_and_resampled(tmp_path):
    code, out = run(tmp_path, "g", "run-gamp", *SMALL)
    assert code == 0 and load(out / "summary.json")["config"]["mu_b"] == "inf"
    code, out = run(tmp_path, "g2", "run-gamp", *SMALL, "mu_b=0.5")
    assert code == 0 and load(out / "summary.json")["converged"] is True


def test_qq_with_one_realization(tmp_path):
    code, out = run(tmp_path, "qq", "qq", *SMALL, "mu_b=0.5", "k=1")
    assert code == 0
    rows = read_csv(out / "scatter.csv")
    assert len(rows) == 300
    qq_rows = read_csv(out / "qq.csv")
    theo = [float(r["theoretical"]) for r in qq_rows]
    assert theo == sorted(theo)
    info = load(out / "scatter.json")
    assert info["realizations"] == 1 and "slope" in load(out / "qq.json")


def test_qq_zero_realizations_rejected(tmp_path):
    code, _ = run(tmp_path, "qq", "qq", *SMALL, "mu_b=0.5", "k=0")
    assert code == 2


def test_sweep_single_cell_equals_optimize(tmp_path):
    common = ["delta=0.15", "restarts=2", "gamma_mode=1"]
    _, sw = run(tmp_path, "sw", "sweep", "rho_grid=0.5", "alpha_grid=1.0", *common)
    _, op = run(tmp_path, "op", "optimize", "rho=0.5", "alpha=1.0", *common)
    rows = read_csv(sw / "sweep.csv")
    assert len(rows) == 1
    record = load(op / "optimum.json")["record"]
    for key, text in rows[0].items():
        want = record[key]
        if isinstance(want, bool):
            assert text == ("true" if want else "false")
        elif isinstance(want, str):
            assert text == want
        else:
            assert float(text) == want


def test_sweep_columns(tmp_path):
    _, sw = run(tmp_path, "sw", "sweep", "rho_grid=0.3,0.7", "alpha_grid=0.5:1.5:2",
                "delta=0.15", "restarts=1")
    header = (sw / "sweep.csv").read_text().splitlines()[0]
    assert header == ("rho,alpha,mu_b_star,lambda_star,gamma_star,sigma2_star,s2_star,"
                      "ratio,unique_frac,phase_label,converged")
    assert len(read_csv(sw / "sweep.csv")) == 4


def test_config_file_env_and_override_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# reference point, small\nn = 300\nalpha = 0.8\ndelta = 0.25\nlambda = 0.1\n"
                   "gamma = 0.5\nrho = 0.2\nmu_b = 0.5\nseed = 1\n")
    _, a = run(tmp_path, "file", "run-ampr", "--config", str(cfg))
    assert load(a / "summary.json")["config"]["seed"] == 1
    monkeypatch.setenv("AMPRLAB_SEED", "7")
    _, b = run(tmp_path, "env", "run-ampr", "--config", str(cfg))
    assert load(b / "summary.json")["config"]["seed"] == 7
    _, c = run(tmp_path, "cli", "run-ampr", "--config", str(cfg), "--seed", "9")
    assert load(c / "summary.json")["config"]["seed"] == 9
    _, d = run(tmp_path, "kv", "run-ampr", "--config", str(cfg), "seed=4")
    assert load(d / "summary.json")["config"]["seed"] == 4


def test_parse_grid_forms():
    assert parse_grid("0.1:0.9:3") == pytest.approx([0.1, 0.5, 0.9])
    assert parse_grid("1,2.5") == [1.0, 2.5]
    with pytest.raises(ValueError):
        parse_grid("1:2:0")


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "amprlab.cli", "run-se", "--out", str(tmp_path),
                           "alpha=0.8", "delta=0.25", "lambda=0.1", "gamma=0.5", "rho=0.1",
                           "mu_b=0.5"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert math.isfinite(load(tmp_path / "summary.json")["sigma2"])
