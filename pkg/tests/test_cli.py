import csv
import json
import time
from importlib import resources

import pytest

from jumpflow.cli import main
from jumpflow.config import KINDS, SEED_ENV, ConfigError, parse_config

SIMULATE = """\
kind: simulate
seed: 4
model:
  example: worked-example
simulate:
  n_paths: 3000
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- parsing and validation ---------------------------------------------------------

def test_missing_seed_is_named(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    with pytest.raises(ConfigError, match="missing required field 'seed'"):
        parse_config("kind: simulate\nmodel:\n  example: poisson\n")


def test_unknown_key_reports_line():
    text = "kind: simulate\nseed: 1\nmodel:\n  example: poisson\n  colour: red\n"
    with pytest.raises(ConfigError, match=r":5: unknown key 'model.colour'"):
        parse_config(text, "x.yaml")


def test_type_error_reports_line():
    text = "kind: simulate\nseed: 1\nmodel:\n  example: poisson\nnumeric:\n  n_grid: many\n"
    with pytest.raises(ConfigError, match=r":6: 'numeric.n_grid' must be a integer"):
        parse_config(text, "x.yaml")


def test_nonpositive_tolerance_rejected():
    text = SIMULATE + "numeric:\n  tol_picard: 0.0\n"
    with pytest.raises(ConfigError, match="must be positive"):
        parse_config(text)


def test_missing_block_for_kind():
    with pytest.raises(ConfigError, match="missing required block 'control'"):
        parse_config("kind: control\nseed: 1\nmodel:\n  example: poisson\n")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError, match=r"x.yaml:\d+: YAML parse error"):
        parse_config("kind: simulate\nseed: [1\n", "x.yaml")


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "77")
    assert parse_config(SIMULATE).seed == 77
    assert parse_config(SIMULATE, seed_override=5).seed == 5
    monkeypatch.delenv(SEED_ENV)
    assert parse_config(SIMULATE).seed == 4


def test_kind_mismatch(tmp_path):
    assert main(["solve", "--config", write(tmp_path, SIMULATE)]) == 2


@pytest.mark.parametrize("kind", KINDS)
def test_bundled_configs_parse(kind):
    path = resources.files("jumpflow") / "configs" / f"{kind}.yaml"
    assert parse_config(path.read_text(), str(path)).kind == kind


# -- running ------------------------------------------------------------------------

def test_config_error_exit_code(tmp_path, capsys):
    bad = write(tmp_path, SIMULATE + "extra: 1\n")
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "unknown key 'extra'" in capsys.readouterr().err


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", write(tmp_path, SIMULATE),
                 "--out", str(blocker / "sub")]) == 2


def test_failing_assertion_exit_code(tmp_path, capsys):
    text = ("kind: verify-example\nseed: 1\nmodel:\n  example: worked-example\n"
            "numeric:\n  n_grid: 5\n  tol_example: 1.0e-9\n")
    assert main(["verify-example", "--config", write(tmp_path, text),
                 "--out", str(tmp_path / "o")]) == 1
    assert "closed_form" in capsys.readouterr().err


def test_determinism(tmp_path):
    cfg = write(tmp_path, SIMULATE)
    for out in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out)]) == 0
    for name in ("paths.csv", "summary.csv", "series.csv", "assertions.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_determinism_across_workers(tmp_path):
    one = write(tmp_path, SIMULATE + "numeric:\n  workers: 1\n", "one.yaml")
    four = write(tmp_path, SIMULATE + "numeric:\n  workers: 4\n", "four.yaml")
    main(["simulate", "--config", one, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", four, "--out", str(tmp_path / "b")])
    for name in ("paths.csv", "summary.csv", "series.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_output(tmp_path):
    cfg = write(tmp_path, SIMULATE)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "b" / "paths.csv").read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["seed"] == 4
    assert set(manifest["versions"]) >= {"jumpflow", "numpy", "python"}


def test_verify_example_report(tmp_path):
    out = tmp_path / "v"
    assert main(["verify-example", "--config", "verify-example", "--out", str(out)]) == 0
    rows = read_csv(out / "summary.csv")
    assert rows[0] == ["quantity", "value", "reference", "abs_error"]
    y0 = {r[0]: r for r in rows[1:]}
    assert float(y0["Y0"][1]) == pytest.approx(0.19979, abs=1e-5)
    assert float(y0["max_error"][1]) <= 1e-3
    assert read_csv(out / "verify.csv")[0][-1] == "abs_error"


def test_solve_columns(tmp_path):
    out = tmp_path / "s"
    assert main(["solve", "--config", "solve", "--out", str(out)]) == 0
    rows = read_csv(out / "solve.csv")
    assert rows[0] == ["t", "Y", "Z_x1", "Z_x2"]
    assert all(len(r) == 2 + 2 for r in rows)


def test_estimates_columns(tmp_path):
    out = tmp_path / "e"
    assert main(["estimates", "--config", "estimates", "--out", str(out)]) == 0
    assert read_csv(out / "estimates.csv")[0] == ["check", "lhs", "rhs", "se", "pass"]


def test_control_has_optimal_row(tmp_path):
    text = ("kind: control\nseed: 3\nmodel:\n  example: poisson\n  max_jumps: 4\n"
            "control:\n  actions: [0.5, 2.0]\n  n_random: 2\n  exhaustive: false\n"
            "numeric:\n  n_mc: 5000\n  n_grid: 400\n")
    out = tmp_path / "c"
    assert main(["control", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    rows = read_csv(out / "control.csv")
    assert rows[0] == ["policy_id", "J_hat", "se", "Y0"]
    assert rows[1][0] == "optimal"


def test_figures_are_opt_in(tmp_path):
    cfg = write(tmp_path, SIMULATE)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    assert not (tmp_path / "a" / "figures").exists()
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--figures"])
    assert list((tmp_path / "b" / "figures").glob("*.png"))


@pytest.mark.parametrize("kind", KINDS)
def test_bundled_configs_run(tmp_path, kind):
    start = time.perf_counter()
    assert main([kind, "--config", kind, "--out", str(tmp_path / kind)]) == 0
    assert time.perf_counter() - start < 60
