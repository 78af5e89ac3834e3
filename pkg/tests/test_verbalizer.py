import json
import re
from datetime import timedelta

import numpy as np
import pytest

from conftest import NUMERAL, T0, make_state, random_concept_set
from helmexplain.explainer import ConceptSet, Condition
from helmexplain.telemetry import DEFAULT_SCHEMA, LABELS, BehaviourLabel, schema_from_names
from helmexplain.verbalizer import (
    DEFAULT_LEXICON_PATH,
    Lexicon,
    LexiconError,
    TemplateRealizer,
    format_number,
    format_time,
    realize,
    realize_condition,
    realize_question,
)

L = BehaviourLabel


@pytest.fixture(scope="module")
def lex():
    return Lexicon.load()


def cs(behaviour, conditions, t):
    return ConceptSet(behaviour, tuple(conditions), t, T0 + timedelta(seconds=t), 1.0)


@pytest.mark.parametrize("t, text", [(0, "00:00:00"), (725, "00:12:05"), (3661, "01:01:01"),
                                     (86399, "23:59:59"), (59.999, "00:00:59"), (90000, "25:00:00")])
def test_format_time_mission(t, text):
    assert format_time(t) == text


def test_format_time_wall():
    assert format_time(725, T0 + timedelta(seconds=725), "wall") == "2022-06-01T12:12:05Z"


def test_format_time_errors():
    with pytest.raises(ValueError):
        format_time(-1)
    with pytest.raises(ValueError):
        format_time(1, None, "wall")
    with pytest.raises(ValueError):
        format_time(1, mode="lunar")


def test_format_number():
    assert format_number(29.0) == "29"
    assert format_number(24.75) == "24.75"
    assert format_number(0.1) == "0.1"


def test_battery_condition(lex):
    assert realize_condition(Condition("battery", "<", 30.0, "%"), lex) == "the battery level is below 30 %"


def test_obstacle_condition(lex):
    text = realize_condition(Condition("obstacle_range", "<", 29.0, "m"), lex)
    assert text == "the distance to the nearest obstacle is below 29 m"


def test_stale_condition_marked(lex):
    text = realize_condition(Condition("gps_fix_age", ">=", 600.0, "s", stale=True), lex)
    assert text == "the time since the last GPS fix is at least 600 s (last known value)"


def test_boolean_and_category_phrasing(lex):
    assert realize_condition(Condition("objective_complete", "==", 1.0), lex) == "an objective has just been completed"
    assert realize_condition(Condition("in_exclusion_zone", "==", 0.0), lex) == "the vehicle is outside every exclusion zone"
    assert realize_condition(Condition("objective_id", "!=", "Survey1"), lex) == "the active objective is not Survey1"
    assert realize_condition(Condition("objective_id", "==", "none"), lex) == \
        "the active objective is none (every objective is complete)"


def test_obstacle_sentence(lex):
    sentence = realize(cs(L.AVOID_OBSTACLES, [Condition("obstacle_range", "<", 29.0, "m")], 725.0), lex)
    assert sentence.text == ("At 00:12:05, the vehicle switched to avoiding an obstacle because "
                             "the distance to the nearest obstacle is below 29 m.")


def test_default_sentence(lex):
    assert realize(cs(L.WAIT, [], 0.0), lex).text == "At 00:00:00, the vehicle switched to holding position as the default behaviour."


def test_two_conditions_one_and(lex):
    text = realize(cs(L.GPS, [Condition("battery", ">=", 20.0, "%"), Condition("gps_fix_age", ">=", 300.5, "s")], 10.0), lex).text
    assert text.count(" and ") == 1
    assert not re.search(r"[,\s]and\s*\.$|,\s*\.$", text)


def test_join_shape_over_many(lex):
    rng = np.random.default_rng(4)
    for _ in range(300):
        c = random_concept_set(rng)
        text = realize(c, lex).text
        assert text.endswith(".") and not text.endswith("..")
        if len(c.causality) >= 2:
            assert text.count(", ") >= len(c.causality) - 2
            assert " and " in text


def test_slots_point_at_concept_fields(lex):
    rng = np.random.default_rng(6)
    for _ in range(100):
        c = random_concept_set(rng)
        for _, source in realize(c, lex).slots:
            m = re.fullmatch(r"(\w+)(?:\[(\d+)\])?", source)
            value = getattr(c, m.group(1))
            if m.group(2) is not None:
                assert int(m.group(2)) < len(value)


def test_no_meta_leakage(lex):
    rng = np.random.default_rng(7)
    for _ in range(200):
        text = realize(random_concept_set(rng), lex).text
        assert not re.search(r"node|feature\s*\d|\[\d+\]|_|\{|\}", text)


def test_wall_mode_sentence(lex):
    text = TemplateRealizer(lex, "wall").realize(cs(L.WAIT, [], 725.0)).text
    assert text.startswith("At 2022-06-01T12:12:05Z,")


def test_faithful_numerals(lex):
    rng = np.random.default_rng(8)
    for _ in range(200):
        c = random_concept_set(rng)
        text = realize(c, lex).text.replace(format_time(c.t), "", 1)
        allowed = {float(x.value) for x in c.causality if not isinstance(x.value, str)}
        for num in re.findall(NUMERAL, text):
            assert float(num) in allowed, (num, text)


def test_question_template(lex):
    assert realize_question(Condition("obstacle_range", "<", 29.0, "m"), lex) == \
        "Was it the case that the distance to the nearest obstacle is below 29 m?"


def test_shipped_lexicon_total(lex):
    lex.check(DEFAULT_SCHEMA)
    lex.check(schema_from_names(list(DEFAULT_SCHEMA.names) + ["x", "y", "heading"]))
    assert set(lex.behaviours) == {l.value for l in LABELS}


@pytest.mark.parametrize("drop", [
    ("behaviours", "gps"), ("features", "battery"), ("relations", "!="), ("templates", "default"),
])
def test_incomplete_lexicon_rejected(drop):
    d = json.loads(DEFAULT_LEXICON_PATH.read_text())
    del d[drop[0]][drop[1]]
    with pytest.raises(LexiconError):
        Lexicon.from_dict(d)


def test_boolean_needs_clauses():
    d = json.loads(DEFAULT_LEXICON_PATH.read_text())
    del d["features"]["objective_complete"]["true"]
    with pytest.raises(LexiconError):
        Lexicon.from_dict(d)


def test_missing_section_and_bad_json(tmp_path):
    d = json.loads(DEFAULT_LEXICON_PATH.read_text())
    del d["stale_marker"]
    with pytest.raises(LexiconError):
        Lexicon.from_dict(d)
    p = tmp_path / "lex.json"
    p.write_text("{")
    with pytest.raises(LexiconError):
        Lexicon.load(p)


def test_agent_substitution():
    d = json.loads(DEFAULT_LEXICON_PATH.read_text())
    d["agent"] = "AUV-7"
    text = realize(cs(L.WAIT, [], 0.0), Lexicon.from_dict(d)).text
    assert text.startswith("At 00:00:00, AUV-7 switched")


def test_deterministic(lex):
    rng = np.random.default_rng(9)
    sets = [random_concept_set(rng) for _ in range(100)]
    assert [realize(c, lex) for c in sets] == [realize(c, Lexicon.load()) for c in sets]
