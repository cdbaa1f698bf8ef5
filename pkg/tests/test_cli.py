import json
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from cantorlab.cli import (COMMANDS, ConfigError, ExperimentConfig, config_hash, emit, main, parse_config,
                           selftest_checks)


def test_empty_config_defaults():
    assert parse_config("") == ExperimentConfig()
    assert parse_config("# only a comment\n\n") == ExperimentConfig()


def test_config_values():
    cfg = parse_config("depth = 3\npole = 20, 0.5  # comment\nh = 1/512\nmu = auto\nout = runs/a\n")
    assert cfg.depth == 3 and cfg.pole == (20.0, 0.5) and cfg.h == 1 / 512
    assert cfg.mu is None and cfg.mu_value == cfg.eps_box / 100 and cfg.out == "runs/a"


@pytest.mark.parametrize("text,line", [
    ("seed = 1\ndepth = 9\n", 2),
    ("bogus = 1\n", 1),
    ("depth = 2\n\ndepth = 3\n", 3),
    ("depth = 2.5\n", 1),
    ("pole = 1\n", 1),
    ("just text\n", 1),
    ("n_walks = 1\nr_out = 100\npole = 0.5, 0.5\n", 3),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.line == line
    assert f"line {line}" in str(ei.value)


configs = st.builds(
    ExperimentConfig,
    depth=st.integers(0, 8),
    pole=st.tuples(st.floats(3, 50), st.floats(-1, 1)),
    n_walks=st.integers(1, 10**7),
    seed=st.integers(0, 2**63 - 1),
    h=st.floats(1e-4, 0.25),
    tol=st.floats(1e-14, 0.5),
    alpha=st.floats(0.1, 10),
    c_ball=st.floats(0.01, 0.49),
    eps_box=st.floats(1e-3, 1 / 7),
    mu=st.one_of(st.none(), st.floats(1e-6, 2.5e-3)),
    k_max=st.integers(1, 8),
    trials=st.integers(1, 4096),
    out=st.text("abcxyz/_-", min_size=1, max_size=12),
)


@given(configs)
def test_emit_parse_round_trip(cfg):
    back = parse_config(emit(cfg))
    assert back == cfg
    assert emit(back) == emit(cfg)


@given(configs, st.text("abc", min_size=1, max_size=5))
def test_hash_ignores_output_dir(cfg, out):
    from dataclasses import replace
    assert config_hash(cfg) == config_hash(replace(cfg, out=out))
    assert config_hash(cfg) != config_hash(replace(cfg, seed=(cfg.seed + 1) % 2**63))


def test_selftest_checks_all_pass():
    assert all(ok for _, ok in selftest_checks())


def run_cli(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_selftest_exit_zero(tmp_path):
    assert run_cli(tmp_path, "selftest") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["passed"] and man["command"] == "selftest"
    assert set(man) >= {"config", "config_hash", "seed", "versions", "outputs", "checks"}


def test_usage_errors(tmp_path, capsys):
    assert main(["no-such-command"]) == 2
    assert run_cli(tmp_path, "gen", "--depth", "9") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("depth = 1\nunknown = 3\n")
    assert run_cli(tmp_path, "gen", "--config", str(bad)) == 2
    err = capsys.readouterr().err
    assert "line 2" in err
    assert run_cli(tmp_path, "gen", "--config", str(tmp_path / "missing.cfg")) == 2


def test_gen(tmp_path):
    assert run_cli(tmp_path, "gen", "--depth", "2") == 0
    g = json.loads((tmp_path / "geometry.json").read_text())
    assert g  # geometry export is valid JSON
    assert "geometry.json" in json.loads((tmp_path / "manifest.json").read_text())["outputs"]


def test_measure_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["measure", "--depth", "2", "--walks", "2000", "--seed", "7", "--out", str(d)]) == 0
    assert (a / "hm_table.csv").read_bytes() == (b / "hm_table.csv").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["outputs"] == mb["outputs"]
    assert ma["config_hash"] == mb["config_hash"]


def test_khintchine(tmp_path):
    assert run_cli(tmp_path, "khintchine") == 0
    lines = (tmp_path / "khintchine.csv").read_text().splitlines()
    assert lines[0] == "m,exact,oracle,ratio,mc,mc_stderr" and len(lines) == 17


def test_box_scan(tmp_path):
    assert run_cli(tmp_path, "box-scan", "--depth", "4", "--eps-box", "0.1") == 0
    assert (tmp_path / "witnesses.csv").exists()


def test_badfn_build(tmp_path):
    assert run_cli(tmp_path, "badfn-build") == 0
    summary = json.loads((tmp_path / "badfn.json").read_text())
    assert {k: v["case"] for k, v in summary.items()} == {"cup_complement": 3, "side_touch": 1, "straight_gap": 2}


def test_nk_experiment(tmp_path):
    code = run_cli(tmp_path, "nk-experiment", "--depth", "3", "--kmax", "2", "--trials", "16", "--walks", "20000")
    assert code in (0, 1)
    lines = (tmp_path / "nk_growth.csv").read_text().splitlines()
    assert len(lines) == 3


def test_rellich_capacity_exit(tmp_path):
    assert run_cli(tmp_path, "rellich-experiment", "--depth", "3", "--kmax", "2", "--trials", "4") == 3


def test_commands_registered():
    assert set(COMMANDS) == {"gen", "measure", "verify-lemma42", "nk-experiment", "box-scan", "badfn-build",
                             "rellich-experiment", "khintchine", "selftest"}


def test_console_script_module(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cantorlab.cli", "selftest", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "PASS" in r.stdout
