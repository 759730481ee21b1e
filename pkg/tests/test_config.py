"""Config file parsing, override merging, and model validation."""

import pytest

from minsummax.config import (
    RunConfig,
    build_config,
    merge_trees,
    parse_config_text,
)
from minsummax.errors import ParseError


def test_parse_basic_nesting():
    text = """
    # a comment
    seed = 3
    schedule.kind = power

    schedule.mu0 = 0.5
    problem.n = 40
    """
    tree = parse_config_text(text)
    assert tree == {
        "seed": "3",
        "schedule": {"kind": "power", "mu0": "0.5"},
        "problem": {"n": "40"},
    }


def test_parse_values_stay_strings():
    tree = parse_config_text("iters = 100\ntiming = true\n")
    assert tree["iters"] == "100"
    assert tree["timing"] == "true"


def test_parse_equals_inside_value():
    # only the first = splits; the rest belongs to the value
    tree = parse_config_text("out = results=v2.csv")
    assert tree["out"] == "results=v2.csv"


@pytest.mark.parametrize(
    "text, lineno, fragment",
    [
        ("seed 3", 1, "expected 'key = value'"),
        ("ok = 1\nbroken line\n", 2, "expected 'key = value'"),
        ("= 5", 1, "empty option key"),
        ("seed =", 1, "has no value"),
        ("seed = 1\n\nschedule. = x", 3, "bad option key"),
        (".kind = a", 1, "bad option key"),
    ],
)
def test_parse_rejections_carry_line(text, lineno, fragment):
    with pytest.raises(ParseError) as exc:
        parse_config_text(text)
    assert exc.value.line == lineno
    assert fragment in str(exc.value)
    assert str(exc.value).startswith(f"line {lineno},")


def test_descent_into_scalar_rejected():
    with pytest.raises(ParseError, match="non-section"):
        parse_config_text("seed = 1\nseed.deep = 2\n")


def test_merge_trees_is_recursive():
    base = {"a": 1, "s": {"x": 1, "y": 2}}
    over = {"s": {"y": 3}, "b": 4}
    merged = merge_trees(base, over)
    assert merged == {"a": 1, "s": {"x": 1, "y": 3}, "b": 4}
    assert base == {"a": 1, "s": {"x": 1, "y": 2}}  # inputs untouched


def test_defaults():
    cfg = build_config()
    assert cfg.experiment == "newsvendor"
    assert cfg.method == "sspg"
    assert cfg.seed == 0
    assert cfg.iters == 500
    assert cfg.schedule.kind == "adaptive"
    assert cfg.schedule.mu0 is None
    assert cfg.stepsize.rule == "fixed"
    assert cfg.estimator.kind == "ball"
    assert cfg.lambda_fixed == 7.0
    assert cfg.eta == 0.1


def test_precedence_override_beats_file():
    text = "seed = 3\nschedule.kind = power\nschedule.eps = 0.2\n"
    cfg = build_config(text, {"seed": "5", "schedule.eps": "0.3"})
    assert cfg.seed == 5  # override wins
    assert cfg.schedule.kind == "power"  # file survives where not overridden
    assert cfg.schedule.eps == 0.3
    assert cfg.iters == 500  # defaults fill the rest


def test_string_coercion():
    cfg = build_config(None, {"schedule.mu0": "0.5", "vectorize": "false", "iters": "7"})
    assert cfg.schedule.mu0 == 0.5
    assert cfg.vectorize is False
    assert cfg.iters == 7


def test_fields_set_tracks_user_intent():
    cfg = build_config("schedule.kind = power\n")
    assert "kind" in cfg.schedule.model_fields_set
    assert "mu0" not in cfg.schedule.model_fields_set
    assert "stepsize" not in cfg.model_fields_set


@pytest.mark.parametrize(
    "overrides, loc",
    [
        ({"seed": "notanumber"}, "seed"),
        ({"iters": "0"}, "iters"),
        ({"schedule.mu0": "-1"}, "schedule.mu0"),
        ({"method": "unheard_of"}, "method"),
        ({"problem.test_fraction": "1.5"}, "problem.test_fraction"),
    ],
)
def test_validation_failures_name_the_field(overrides, loc):
    with pytest.raises(ParseError) as exc:
        build_config(None, overrides)
    msg = str(exc.value)
    assert msg.startswith(f"config field {loc}:")
    assert exc.value.line == 0  # whole-input error, no position


def test_unknown_keys_rejected():
    with pytest.raises(ParseError, match="config field momentum"):
        build_config("momentum = 0.9\n")
    with pytest.raises(ParseError, match="config field schedule.warmup"):
        build_config(None, {"schedule.warmup": "5"})


def test_model_validate_accepts_real_types():
    cfg = RunConfig.model_validate({"seed": 11, "schedule": {"kind": "constant"}})
    assert cfg.seed == 11
    assert cfg.schedule.kind == "constant"
