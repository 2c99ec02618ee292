"""
Tests for settings and the key=value run configuration.
"""

from pathlib import Path

import pytest

from config.run_config import load_config, parse_blocks, parse_config, parse_profile_spec
from config.settings import LabSettings
from services.errors import MissingFile, ParseError, RangeError, UnknownKey
from services.experiments import solver_options

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def settings():
    return LabSettings(_env_file=None)


def test_minimal_config_gets_defaults(settings):
    config = parse_config("[experiment]\nmode = coupled\n", settings=settings)
    assert config.experiment.mode == "coupled"
    assert config.geometry.num_points == 256
    assert config.geometry.dimension == 3
    assert config.experiment.tol_lich == settings.tol_lich
    assert config.experiment.damping == settings.damping
    assert config.experiment.seed == settings.random_seed
    assert config.output.directory == settings.output_dir


def test_subcommand_overrides_mode(settings):
    config = parse_config("[experiment]\nmode = coupled\n", mode="geom-check", settings=settings)
    assert config.experiment.mode == "geom-check"


def test_missing_mode(settings):
    with pytest.raises(RangeError) as info:
        parse_config("[geometry]\nnum_points = 64\n", settings=settings)
    assert info.value.key == "mode"
    assert info.value.exit_code == 3


def test_duplicate_key_reports_both_lines(settings):
    text = "[experiment]\nmode = coupled\nmode = k-sweep\n"
    with pytest.raises(ParseError) as info:
        parse_config(text, settings=settings)
    assert info.value.lines == [2, 3]


def test_malformed_line(settings):
    with pytest.raises(ParseError):
        parse_config("[experiment]\nmode coupled\n", settings=settings)


def test_unknown_key_and_section(settings):
    with pytest.raises(UnknownKey) as info:
        parse_config("[geometry]\nwarp = 2\n", mode="coupled", settings=settings)
    assert info.value.section == "geometry"
    assert info.value.key == "warp"
    with pytest.raises(UnknownKey):
        parse_config("[solver]\nx = 1\n", mode="coupled", settings=settings)


@pytest.mark.parametrize("text", [
    "[geometry]\nnum_points = 8\n",
    "[geometry]\norder = 3\n",
    "[geometry]\nblocks = S1: constant\n",
    "[geometry]\nA = wobbly\n",
    "[geometry]\nn = 5\nblocks = T1: constant; S2: constant\n",
    "[tau]\nvalue = -1\n",
    "[experiment]\na = 0.5\n",
    "[experiment]\nt = 0\n",
])
def test_out_of_range_values(settings, text):
    with pytest.raises(RangeError):
        parse_config(text, mode="coupled", settings=settings)


def test_missing_csv_profile(settings, tmp_path):
    text = "[geometry]\nA = csv path=missing.csv\n"
    with pytest.raises(MissingFile):
        parse_config(text, mode="coupled", base_dir=str(tmp_path), settings=settings)


def test_csv_profile_resolved_against_config_dir(settings, tmp_path):
    (tmp_path / "A.csv").write_text("0,1\n3,1.5\n")
    path = tmp_path / "run.cfg"
    path.write_text("[geometry]\nA = csv path=A.csv\n")
    config = load_config(str(path), mode="geom-check", settings=settings)
    assert config.resolve_path("A.csv") == str(tmp_path / "A.csv")


def test_load_config_missing_file(settings, tmp_path):
    with pytest.raises(MissingFile):
        load_config(str(tmp_path / "nope.cfg"), settings=settings)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.cfg")))
def test_bundled_configs_parse(settings, name):
    config = load_config(str(CONFIG_DIR / name), settings=settings)
    assert config.experiment.mode
    assert any(line == "[experiment]" for line in config.echo())


def test_k_grid_is_geometric(settings):
    config = parse_config("[experiment]\nk_max = 100\nk_steps = 3\n", mode="k-sweep", settings=settings)
    assert config.experiment.k_grid() == pytest.approx([0.0, 0.01, 1.0, 100.0])


def test_profile_and_block_grammar():
    family, params = parse_profile_spec("cosine_exp amplitude=0.3 frequency=2")
    assert family == "cosine_exp"
    assert params == {"amplitude": 0.3, "frequency": 2}
    assert parse_blocks("T1: constant; S2: constant scale=2") == [
        ("T", 1, "constant"),
        ("S", 2, "constant scale=2"),
    ]
    with pytest.raises(ValueError):
        parse_profile_spec("cosine_exp width=2")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("LAB_TOL_LICH", "1e-9")
    monkeypatch.setenv("LAB_THREADS", "4")
    settings = LabSettings(_env_file=None)
    assert settings.tol_lich == 1e-9
    assert settings.workers == 4
    assert LabSettings(_env_file=None, threads=0).workers is None


def test_solver_options_follow_the_config(settings):
    text = "[experiment]\nmode = k-sweep\ntol_coupled = 1e-9\nmax_iter = 25\ndamping = 0.5\n"
    options = solver_options(parse_config(text, settings=settings))
    assert options.tol == 1e-9
    assert options.max_iter == 25
    assert options.damping == 0.5
    assert options.lich_tol == settings.tol_lich
    assert options.kernel_tol == settings.kernel_tol
    assert options.picard_max_iter == settings.picard_max_iter


def test_c_level_key(settings):
    config = parse_config("[experiment]\nmode = tau-admissibility\nc_level = 0.2\n", settings=settings)
    assert config.experiment.c_level == 0.2
    with pytest.raises(RangeError):
        parse_config("[experiment]\nmode = tau-admissibility\nc_level = 1.5\n", settings=settings)
