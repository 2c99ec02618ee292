"""
End-to-end runs of the bundled configurations through main().
"""

from pathlib import Path

import pytest

from main import main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _run(mode: str, name: str, output: Path) -> int:
    return main([mode, "--config", str(CONFIG_DIR / name), "--output", str(output)])


def _summary(output: Path) -> str:
    return (output / "summary.txt").read_text(encoding="utf-8")


def test_halfcont_demo(tmp_path):
    assert _run("halfcont-demo", "halfcont_quadratic.cfg", tmp_path) == 0
    assert (tmp_path / "dichotomy.csv").exists()
    summary = _summary(tmp_path)
    assert "outcome = ok" in summary
    assert "variant = critical_tuple" in summary


def test_flat_coupled_hits_the_kernel(tmp_path):
    assert _run("coupled", "flat_coupled.cfg", tmp_path) == 4
    assert "CONFORMAL_KILLING_KERNEL" in _summary(tmp_path)


def test_tau_violated(tmp_path):
    assert _run("tau-admissibility", "tau_violated.cfg", tmp_path) == 0
    assert "status = VIOLATED" in _summary(tmp_path)
    assert (tmp_path / "admissibility.csv").exists()


def test_sphere_lichnerowicz(tmp_path):
    assert _run("lichnerowicz", "sphere_lichnerowicz.cfg", tmp_path) == 0
    lines = (tmp_path / "profile.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "x,phi"
    assert len(lines) == 257
    assert all(float(line.split(",")[1]) > 0 for line in lines[1:])


def test_geom_check(tmp_path):
    assert _run("geom-check", "sphere_lichnerowicz.cfg", tmp_path) == 0
    summary = _summary(tmp_path)
    assert "mode = geom-check" in summary
    assert "lambda1" in summary


def test_missing_config_exits_with_config_code(tmp_path):
    assert main(["coupled", "--config", str(tmp_path / "nope.cfg")]) == 3


def test_bad_config_exits_with_config_code(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[geometry]\nnum_points = 4\n")
    assert main(["coupled", "--config", str(path), "--output", str(tmp_path)]) == 3


def _summary_values(output: Path) -> dict:
    values = {}
    for line in _summary(output).splitlines():
        key, sep, value = line.partition(" = ")
        if sep and not line.startswith("#"):
            values.setdefault(key.strip(), value.strip())
    return values


@pytest.mark.slow
def test_nonuniqueness_regression(tmp_path):
    assert _run("two-solutions", "nonuniqueness.cfg", tmp_path) == 0
    values = _summary_values(tmp_path)
    assert values["outcome"] == "ok"
    assert values["fold"] == "True"
    assert 1e3 < float(values["fold_parameter"]) < 2e4
    assert float(values["gap"]) >= 0.1
    assert float(values["certified_residual_small"]) <= 2e-8
    assert float(values["certified_residual_large"]) <= 2e-8
    rows = (tmp_path / "solutions.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 3
    assert rows[1].endswith(",small")
    assert rows[2].endswith(",large")
