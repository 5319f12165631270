import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magsplit.model import (ConfigError, GridSpec, ModelConfig, WellSpec, reference_config,
                            strict_spacing_threshold, validate)


def test_reference_defaults():
    cfg = reference_config()
    assert cfg.lam == 10.0 and cfg.field_strength == 10.0
    assert cfg.well == WellSpec(depth=-2.0, radius=0.5)
    assert cfg.magnetic_length == pytest.approx((2 / 10) ** 0.5)


def test_grid_spacing_divides_separation():
    cfg = reference_config(lam=10.0)
    h = cfg.grid_spacing()
    assert h <= cfg.magnetic_length / 8 + 1e-15
    n = cfg.separation / h
    assert abs(n - round(n)) < 1e-9


def test_json_round_trip_and_hash():
    cfg = reference_config(lam=7.5, b=9.0, grid=GridSpec(spacing=0.01))
    again = ModelConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert json.loads(cfg.to_json())["lambda"] == 7.5


def test_hash_changes_with_content():
    assert reference_config(lam=10).config_hash() != reference_config(lam=11).config_hash()


@pytest.mark.parametrize("doc", [
    "[1, 2]",
    "{not json",
    '{"lambda": 10, "separation": 2}',
    '{"lambda": 10, "separation": 2, "well": {"depth": -2, "radius": 0.5}, "extra": 1}',
    '{"lambda": "ten", "separation": 2, "well": {"depth": -2, "radius": 0.5}}',
    '{"lambda": 10, "separation": 2, "well": {"depth": -2, "radius": 0.5, "colour": 1}}',
])
def test_bad_documents_raise_config_error(doc):
    with pytest.raises(ConfigError):
        ModelConfig.from_json(doc)


def test_validate_reports_every_violation_without_raising():
    cfg = ModelConfig(lam=-1.0, well=WellSpec(depth=1.0, radius=0.5), separation=0.5,
                      grid=GridSpec(margin_lengths=2.0, boundary="periodic"))
    rep = validate(cfg)
    assert not rep.valid
    text = " ".join(rep.violations)
    for word in ("depth", "lambda", "margin", "boundary"):
        assert word in text


def test_validate_spacing_limit():
    cfg = reference_config(lam=10.0)
    coarse = cfg.replace(grid=GridSpec(spacing=cfg.magnetic_length / 4))
    assert validate(cfg).valid
    assert not validate(coarse).valid


def test_strict_spacing_flag():
    cfg = reference_config()
    assert strict_spacing_threshold(cfg.well) == pytest.approx(4 * (2 ** 0.5 + 0.5))
    assert not validate(cfg).strict_spacing
    assert validate(cfg.replace(separation=8.0)).strict_spacing


def test_free_case_is_valid():
    assert validate(reference_config().with_well(depth=0.0)).valid


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.5, 100), depth=st.floats(-10, 0), radius=st.floats(0.05, 2),
       sep=st.floats(4.1, 20))
def test_round_trip_property(lam, depth, radius, sep):
    cfg = ModelConfig(lam=lam, well=WellSpec(depth=depth, radius=radius), separation=sep)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
