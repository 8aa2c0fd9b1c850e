"""TOML run configuration, overrides, and the audit content hash."""

from datetime import date

import pytest

from ltccd.config import DEFAULTS, apply_override, load_config, parse_override
from ltccd.errors import ConfigError


def _write(tmp_path, text=""):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_defaults_fill_in(tmp_path):
    cfg = load_config(_write(tmp_path))
    assert cfg.detector.k == -0.20
    assert cfg.detector.z_threshold == -2.0
    assert cfg.detector.persistence_window_days == 31
    assert cfg.epochs.war_onset == date(2023, 10, 7)
    assert cfg.epochs.conflict_window == (date(2023, 10, 12), date(2024, 10, 31))
    assert cfg.epochs.counterfactual_shift == 24
    assert cfg.section("planning")["max_pairs"] == 25
    assert cfg.section("evaluation")["scope"] == "valid-only"


def test_user_file_overrides_defaults(tmp_path):
    path = _write(tmp_path, "[detector]\nk = -0.35\n\n[run]\njobs = 2\n")
    cfg = load_config(path)
    assert cfg.detector.k == -0.35
    assert cfg.detector.z_threshold == -2.0  # untouched siblings keep defaults
    assert cfg.section("run")["jobs"] == 2


def test_parse_override_typing():
    assert parse_override("detector.k=-0.5") == (["detector", "k"], -0.5)
    assert parse_override("run.jobs=8") == (["run", "jobs"], 8)
    assert parse_override("epochs.war_onset=2022-02-24") == (
        ["epochs", "war_onset"], date(2022, 2, 24),
    )
    assert parse_override('fetch.looks="20x4"') == (["fetch", "looks"], "20x4")
    assert parse_override("fetch.looks=20x4") == (["fetch", "looks"], "20x4")
    assert parse_override("evaluation.stable_region=[0, 0, 10, 10]") == (
        ["evaluation", "stable_region"], [0, 0, 10, 10],
    )
    with pytest.raises(ConfigError, match="KEY=VALUE"):
        parse_override("detector.k")
    with pytest.raises(ConfigError, match="empty key segment"):
        parse_override("detector..k=1")


def test_apply_override_rejects_crossing_scalars():
    tree = {"run": {"jobs": 4}}
    apply_override(tree, ["run", "crs"], 32637)
    assert tree["run"]["crs"] == 32637
    with pytest.raises(ConfigError, match="crosses a non-table"):
        apply_override(tree, ["run", "jobs", "inner"], 1)


def test_cli_overrides_take_effect(tmp_path):
    path = _write(tmp_path, "[detector]\nk = -0.35\n")
    cfg = load_config(path, overrides=("detector.k=-0.1", "simulate.width=32"))
    assert cfg.detector.k == -0.1
    assert cfg.section("simulate")["width"] == 32


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        load_config(tmp_path / "absent.toml")
    with pytest.raises(ConfigError, match="not valid TOML"):
        load_config(_write(tmp_path, "[detector\nk="))


def test_invalid_values_surface_as_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="invalid configuration"):
        load_config(_write(tmp_path, "[detector]\nk = 0.2\n"))
    with pytest.raises(ConfigError, match="epochs"):
        load_config(_write(tmp_path, '[epochs]\nwar_onset = "not-a-date"\n'))
    with pytest.raises(ConfigError, match="scope"):
        load_config(_write(tmp_path, '[evaluation]\nscope = "bogus"\n'))


def test_paths_resolve_against_config_directory(tmp_path):
    nested = tmp_path / "proj"
    nested.mkdir()
    cfg = load_config(_write(nested))
    assert cfg.path("catalog") == nested / "catalog.csv"
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.path("catalog", must_exist=True)
    with pytest.raises(ConfigError, match="paths.elevation is not configured"):
        cfg.path("elevation")

    out = cfg.output_dir()
    assert out == nested / "out"
    assert out.is_dir()

    absolute = load_config(_write(nested, f'[paths]\ncatalog = "{tmp_path}/c.csv"\n'))
    assert absolute.path("catalog") == tmp_path / "c.csv"


def test_content_hash_tracks_effective_config(tmp_path):
    path = _write(tmp_path, "[detector]\nk = -0.35\n")
    first = load_config(path).content_hash()
    assert first == load_config(path).content_hash()
    assert first != load_config(path, overrides=("detector.k=-0.36",)).content_hash()
    # an override that restates the file value is the same effective config
    assert first == load_config(path, overrides=("detector.k=-0.35",)).content_hash()


def test_defaults_are_not_mutated_by_loading(tmp_path):
    before = DEFAULTS["detector"]["k"]
    load_config(_write(tmp_path, "[detector]\nk = -0.5\n"), overrides=("run.jobs=9",))
    assert DEFAULTS["detector"]["k"] == before
    assert DEFAULTS["run"]["jobs"] == 4
