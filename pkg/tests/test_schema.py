import json

import pytest
from hypothesis import given, strategies as st

from speechdiag.schema import (
    Layer,
    LevelOutOfRange,
    MalformedSchema,
    MissingCriterion,
    MissingDimension,
    DuplicateDimension,
    Semantics,
    UnknownDimension,
    builtin_schema,
    dump_schema,
    load_schema,
    schema_to_dict,
    validate_score,
)

CANONICAL = [
    "Pronunciation Accuracy", "Audio Clarity", "Intonation", "Pauses", "Speech Rate",
    "Speaker Consistency", "Style Consistency", "Emotion Consistency",
    "Stress", "Lengthening", "Paralinguistics", "Emotion Expression",
]


def test_twelve_dimensions_in_canonical_order(schema):
    assert [d.name for d in schema] == CANONICAL
    assert [d.id for d in schema] == list(range(1, 13))
    assert len(schema.layer_ids(Layer.BASIC)) == 8
    assert len(schema.layer_ids(Layer.ADVANCED)) == 4
    assert all(d.layer == (Layer.BASIC if d.id <= 8 else Layer.ADVANCED) for d in schema)


def test_scales(schema):
    stress = schema.scale("Stress")
    assert (stress.min, stress.max, stress.semantics) == (0, 2, Semantics.BONUS)
    pron = schema.scale(1)
    assert (pron.min, pron.max, pron.semantics) == (1, 5, Semantics.QUALITY)


def test_published_anchor_text(schema):
    assert "stationary noise floor" in schema.rubric("Audio Clarity").level_criteria[4]
    assert 4 not in schema.rubric("Audio Clarity").authored
    assert 2 not in schema.rubric("Audio Clarity").authored
    assert schema.rubric("Stress").authored == frozenset({0})
    # everything else is marked as harness-authored
    assert schema.rubric("Pauses").authored == frozenset(range(1, 6))


def test_every_level_has_a_criterion(schema):
    for d in schema:
        rub = schema.rubrics[d.id]
        assert set(rub.level_criteria) == set(schema.scales[d.id].levels())
        assert all(t.strip() for t in rub.level_criteria.values())


def test_builtin_is_deterministic():
    assert builtin_schema() == builtin_schema()


@pytest.mark.parametrize("dim,score,ok", [
    ("Pauses", 5, True),
    ("Lengthening", 3, False),
    ("Pronunciation Accuracy", 0, False),
    ("Stress", 0, True),
    (4, 1, True),
])
def test_validate_score(schema, dim, score, ok):
    assert validate_score(schema, dim, score) is ok


def test_validate_score_rejects_non_integers(schema):
    assert not validate_score(schema, "Pauses", 4.0)
    assert not validate_score(schema, "Pauses", True)


def test_validate_score_unknown_dimension(schema):
    with pytest.raises(UnknownDimension):
        validate_score(schema, 13, 1)
    with pytest.raises(UnknownDimension):
        validate_score(schema, "Loudness", 1)


def test_each_dimension_accepts_exactly_its_range(schema):
    for d in schema:
        sc = schema.scales[d.id]
        accepted = [s for s in range(-10, 11) if validate_score(schema, d.id, s)]
        assert len(accepted) == sc.max - sc.min + 1


def test_round_trip(schema):
    assert load_schema(dump_schema(schema)) == schema


def test_export_is_byte_stable(schema):
    assert dump_schema(schema) == dump_schema(builtin_schema())


def _doc(schema):
    return json.loads(dump_schema(schema))


def test_missing_dimension(schema):
    doc = _doc(schema)
    doc["dimensions"] = [d for d in doc["dimensions"] if d["id"] != 7]
    with pytest.raises(MissingDimension) as exc:
        load_schema(json.dumps(doc))
    assert exc.value.dimension_id == 7


def test_level_out_of_range(schema):
    doc = _doc(schema)
    doc["dimensions"][8]["rubric"]["3"] = "too much stress"
    with pytest.raises(LevelOutOfRange):
        load_schema(json.dumps(doc))


def test_missing_criterion(schema):
    doc = _doc(schema)
    del doc["dimensions"][0]["rubric"]["3"]
    with pytest.raises(MissingCriterion):
        load_schema(json.dumps(doc))
    doc = _doc(schema)
    doc["dimensions"][0]["rubric"]["3"] = "   "
    with pytest.raises(MissingCriterion):
        load_schema(json.dumps(doc))


def test_duplicate_dimension(schema):
    doc = _doc(schema)
    doc["dimensions"].append(doc["dimensions"][0])
    with pytest.raises(DuplicateDimension):
        load_schema(json.dumps(doc))


@pytest.mark.parametrize("bad", ["not json", "[]", '{"version": "1"}', '{"dimensions": []}'])
def test_malformed(bad):
    with pytest.raises((MalformedSchema, MissingDimension)):
        load_schema(bad)


def test_layer_scale_mismatch_rejected(schema):
    doc = _doc(schema)
    doc["dimensions"][0]["scale"]["max"] = 10
    with pytest.raises(MalformedSchema):
        load_schema(json.dumps(doc))


@given(st.dictionaries(st.integers(1, 12), st.text(min_size=1).filter(str.strip), max_size=12))
def test_round_trip_with_edited_rubrics(edits):
    base = builtin_schema()
    doc = schema_to_dict(base)
    for did, text in edits.items():
        entry = doc["dimensions"][did - 1]
        level = next(iter(entry["rubric"]))
        entry["rubric"][level] = text
    loaded = load_schema(json.dumps(doc))
    assert load_schema(dump_schema(loaded)) == loaded
