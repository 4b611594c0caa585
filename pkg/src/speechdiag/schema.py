"""The 12-dimension evaluation taxonomy: dimensions, score scales and rubrics.

Everything else in the package (prompts, parsers, metrics, profiles) reads
dimension ids, names and scales from a :class:`Schema` instead of hard-coding
them. The canonical schema is :func:`builtin_schema`; alternative or localized
rubrics can be loaded from a JSON document with :func:`load_schema`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Mapping, Union

from .errors import ValidationError

SCHEMA_VERSION = "1.0"


class Layer(str, Enum):
    BASIC = "Basic"
    ADVANCED = "Advanced"


class DomainGroup(str, Enum):
    AUDIO_CLARITY = "AudioClarity"
    PRONUNCIATION = "Pronunciation"
    PROSODY = "Prosody"
    CONSISTENCY = "Consistency"
    ADVANCED_EXPRESSIVENESS = "AdvancedExpressiveness"


class Semantics(str, Enum):
    QUALITY = "Quality"
    BONUS = "Bonus"


class SchemaError(ValidationError):
    pass


class MalformedSchema(SchemaError):
    pass


class MissingDimension(SchemaError):
    def __init__(self, dimension_id: int):
        super().__init__(f"schema is missing dimension {dimension_id}")
        self.dimension_id = dimension_id


class DuplicateDimension(SchemaError):
    def __init__(self, dimension_id: int):
        super().__init__(f"dimension {dimension_id} is defined more than once")
        self.dimension_id = dimension_id


class LevelOutOfRange(SchemaError):
    def __init__(self, dimension_id: int, level: int, scale: "ScoreScale"):
        super().__init__(
            f"dimension {dimension_id}: rubric level {level} outside scale "
            f"{scale.min}..{scale.max}"
        )
        self.dimension_id = dimension_id
        self.level = level


class MissingCriterion(SchemaError):
    def __init__(self, dimension_id: int, level: int):
        super().__init__(f"dimension {dimension_id}: no criterion for level {level}")
        self.dimension_id = dimension_id
        self.level = level


class UnknownDimension(SchemaError, KeyError):
    def __init__(self, ref: Any):
        super().__init__(f"unknown dimension {ref!r}")
        self.ref = ref

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Dimension:
    id: int
    name: str
    domain_group: DomainGroup
    layer: Layer


@dataclass(frozen=True)
class ScoreScale:
    min: int
    max: int
    semantics: Semantics

    @property
    def span(self) -> int:
        return self.max - self.min

    def levels(self) -> range:
        return range(self.min, self.max + 1)

    def contains(self, score: int) -> bool:
        return self.min <= score <= self.max


BASIC_SCALE = ScoreScale(1, 5, Semantics.QUALITY)
ADVANCED_SCALE = ScoreScale(0, 2, Semantics.BONUS)


@dataclass(frozen=True)
class Rubric:
    dimension_id: int
    level_criteria: Mapping[int, str]
    # levels whose criterion text was written for this harness rather than
    # taken from a published anchor
    authored: frozenset = frozenset()


DimensionRef = Union[int, str, Dimension]


@dataclass(frozen=True)
class Schema:
    dimensions: tuple
    scales: Mapping[int, ScoreScale]
    rubrics: Mapping[int, Rubric]
    version: str = SCHEMA_VERSION
    _by_name: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_by_name", {d.name.casefold(): d for d in self.dimensions}
        )

    def __iter__(self) -> Iterator[Dimension]:
        return iter(self.dimensions)

    def __len__(self) -> int:
        return len(self.dimensions)

    @property
    def ids(self) -> list[int]:
        return [d.id for d in self.dimensions]

    def dimension(self, ref: DimensionRef) -> Dimension:
        """Resolve a dimension by id, name (case-insensitive) or instance."""
        if isinstance(ref, Dimension):
            ref = ref.id
        if isinstance(ref, str):
            stripped = ref.strip()
            if stripped.isdigit():
                ref = int(stripped)
            else:
                try:
                    return self._by_name[stripped.casefold()]
                except KeyError:
                    raise UnknownDimension(ref) from None
        if isinstance(ref, int) and not isinstance(ref, bool):
            for d in self.dimensions:
                if d.id == ref:
                    return d
        raise UnknownDimension(ref)

    def scale(self, ref: DimensionRef) -> ScoreScale:
        return self.scales[self.dimension(ref).id]

    def rubric(self, ref: DimensionRef) -> Rubric:
        return self.rubrics[self.dimension(ref).id]

    def layer_ids(self, layer: Layer) -> list[int]:
        return [d.id for d in self.dimensions if d.layer == layer]


def validate_score(schema: Schema, dim: DimensionRef, score: int) -> bool:
    """True iff ``score`` is an integer inside the dimension's scale.

    Raises :class:`UnknownDimension` for an id the schema does not define.
    """
    scale = schema.scale(dim)
    if isinstance(score, bool) or not isinstance(score, int):
        return False
    return scale.contains(score)


# (id, name, domain group, layer)
_DIMENSIONS = [
    (1, "Pronunciation Accuracy", DomainGroup.PRONUNCIATION, Layer.BASIC),
    (2, "Audio Clarity", DomainGroup.AUDIO_CLARITY, Layer.BASIC),
    (3, "Intonation", DomainGroup.PROSODY, Layer.BASIC),
    (4, "Pauses", DomainGroup.PROSODY, Layer.BASIC),
    (5, "Speech Rate", DomainGroup.PROSODY, Layer.BASIC),
    (6, "Speaker Consistency", DomainGroup.CONSISTENCY, Layer.BASIC),
    (7, "Style Consistency", DomainGroup.CONSISTENCY, Layer.BASIC),
    (8, "Emotion Consistency", DomainGroup.CONSISTENCY, Layer.BASIC),
    (9, "Stress", DomainGroup.ADVANCED_EXPRESSIVENESS, Layer.ADVANCED),
    (10, "Lengthening", DomainGroup.ADVANCED_EXPRESSIVENESS, Layer.ADVANCED),
    (11, "Paralinguistics", DomainGroup.ADVANCED_EXPRESSIVENESS, Layer.ADVANCED),
    (12, "Emotion Expression", DomainGroup.ADVANCED_EXPRESSIVENESS, Layer.ADVANCED),
]

# Published anchors: Audio Clarity levels 4 and 2, Stress levels 2 and 1.
# Every other level is authored and listed in Rubric.authored.
_PUBLISHED = {(2, 4), (2, 2), (9, 2), (9, 1)}

_CRITERIA: dict[int, dict[int, str]] = {
    1: {
        5: "Every syllable is articulated completely and correctly, including tones, "
           "tone sandhi and polyphonic characters; no sub-phoneme anomalies.",
        4: "One subtle slip (a slightly weak final, a marginal tone contour) that a "
           "careful listener notices but that never changes the word heard.",
        3: "Occasional clear errors such as a wrong tone, an n/l confusion or a "
           "misread polyphone; meaning is still recoverable from context.",
        2: "Frequent errors or incomplete articulation (swallowed or truncated "
           "syllables) that make several words hard to identify.",
        1: "Pronunciation is largely wrong or unintelligible; the text cannot be "
           "followed from the audio.",
    },
    2: {
        5: "Clean signal: no audible background noise, distortion or non-target "
           "vocal residue.",
        4: "A stationary noise floor with uniform distribution and constant energy "
           "(for example slight Gaussian white noise or electrical hum); speech "
           "itself is undistorted.",
        3: "Noticeable non-stationary noise or mild distortion (occasional clicks, "
           "light clipping, fluctuating background) that distracts but does not "
           "impair intelligibility.",
        2: "Destructive signal distortion, including frequent popping and metallic "
           "artifacts, that directly hinders intelligibility.",
        1: "Signal is dominated by noise or distortion; speech is barely audible "
           "or unusable.",
    },
    3: {
        5: "Pitch contour follows the syntactic structure naturally: questions, "
           "statements and clause boundaries are all marked appropriately.",
        4: "Intonation is natural overall with a minor contour that is slightly "
           "flat or slightly exaggerated.",
        3: "Noticeably unnatural contours in places (misplaced rises or falls, "
           "monotone stretches) that do not mislead the listener.",
        2: "Intonation frequently contradicts the sentence structure or sounds "
           "mechanical across most of the utterance.",
        1: "Intonation is chaotic or entirely flat, obscuring sentence structure.",
    },
    4: {
        5: "Pauses fall at semantic boundaries with natural durations.",
        4: "Pausing is appropriate except for one slightly long or slightly "
           "missing break.",
        3: "Some pauses are misplaced or noticeably too long/short, disturbing "
           "the semantic segmentation locally.",
        2: "Frequent misplaced or excessive pauses break phrases apart.",
        1: "Pausing is erratic enough that the segmentation of the sentence is "
           "lost.",
    },
    5: {
        5: "Speech rate is natural and steady, with rhythmic fluency throughout.",
        4: "Slightly fast or slow overall, or a small local rate wobble.",
        3: "Clearly too fast or too slow, or audible rate changes within the "
           "utterance.",
        2: "Rate is strongly off or changes abruptly, disrupting rhythm.",
        1: "Rate makes the speech hard to follow (rushed, dragged, or jerky).",
    },
    6: {
        5: "A single consistent speaker identity for the whole utterance.",
        4: "Timbre drifts very slightly but the speaker is clearly the same.",
        3: "A noticeable shift in timbre or voice quality in part of the "
           "utterance.",
        2: "Part of the utterance sounds like a different speaker.",
        1: "Speaker identity changes repeatedly or is incoherent.",
    },
    7: {
        5: "Speaking style (register, energy, delivery) is uniform throughout.",
        4: "Minor style fluctuation that does not stand out.",
        3: "A noticeable change in energy or delivery style mid-utterance.",
        2: "An abrupt style break that sounds like a separate recording.",
        1: "Style is incoherent across the utterance.",
    },
    8: {
        5: "The emotional category stays consistent for the whole utterance.",
        4: "Emotion intensity wavers slightly but the category is stable.",
        3: "A noticeable unmotivated emotional shift in part of the utterance.",
        2: "The utterance switches to a different emotional category.",
        1: "Emotional category is incoherent or switches repeatedly.",
    },
    9: {
        2: "Keyword emphasis with significant energy concentration or pitch "
           "excursion.",
        1: "Perceptible but weak emphasis that lacks sufficient acoustic "
           "prominence.",
        0: "Neutral: no perceptible emphasis on keywords.",
    },
    10: {
        2: "Clear, natural syllabic lengthening at phrase boundaries or emphatic "
           "points that smooths the rhythm.",
        1: "Some lengthening is present but it is weak or only partly natural.",
        0: "Neutral: no perceptible expressive lengthening.",
    },
    11: {
        2: "Natural non-verbal cues (laughter, sighs, breaths, coughs) well "
           "integrated with the speech.",
        1: "Non-verbal cues are present but sparse, weak or slightly artificial.",
        0: "Neutral: no non-verbal vocal cues.",
    },
    12: {
        2: "The sentiment of the text is fully realized with rich, intense "
           "expression.",
        1: "The sentiment is conveyed but with limited fullness or intensity.",
        0: "Neutral: the delivery does not express the sentiment beyond plain "
           "reading.",
    },
}


def builtin_schema() -> Schema:
    """Return the canonical 12-dimension schema."""
    dims = tuple(Dimension(i, n, g, l) for i, n, g, l in _DIMENSIONS)
    scales = {d.id: BASIC_SCALE if d.layer == Layer.BASIC else ADVANCED_SCALE for d in dims}
    rubrics = {}
    for d in dims:
        criteria = dict(sorted(_CRITERIA[d.id].items()))
        authored = frozenset(lvl for lvl in criteria if (d.id, lvl) not in _PUBLISHED)
        rubrics[d.id] = Rubric(d.id, criteria, authored)
    return Schema(dims, scales, rubrics, SCHEMA_VERSION)


def schema_to_dict(schema: Schema) -> dict:
    dims = []
    for d in schema.dimensions:
        scale = schema.scales[d.id]
        rubric = schema.rubrics[d.id]
        dims.append({
            "id": d.id,
            "name": d.name,
            "domain_group": d.domain_group.value,
            "layer": d.layer.value,
            "scale": {"min": scale.min, "max": scale.max, "semantics": scale.semantics.value},
            "rubric": {str(k): v for k, v in sorted(rubric.level_criteria.items())},
            "authored": sorted(rubric.authored),
        })
    return {"version": schema.version, "dimensions": dims}


def dump_schema(schema: Schema) -> str:
    return json.dumps(schema_to_dict(schema), indent=2, ensure_ascii=False) + "\n"


def load_schema(document: Union[str, bytes, Mapping]) -> Schema:
    """Parse a schema document (JSON text or an already-decoded mapping).

    The result satisfies every schema invariant or a :class:`SchemaError`
    subclass is raised.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedSchema(f"schema is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping) or not isinstance(doc.get("dimensions"), list):
        raise MalformedSchema("schema must be an object with a 'dimensions' list")
    version = doc.get("version")
    if not isinstance(version, str) or not version:
        raise MalformedSchema("schema 'version' must be a nonempty string")

    dims: dict[int, Dimension] = {}
    scales: dict[int, ScoreScale] = {}
    rubrics: dict[int, Rubric] = {}
    for entry in doc["dimensions"]:
        try:
            did = entry["id"]
            if not isinstance(did, int) or isinstance(did, bool):
                raise MalformedSchema(f"dimension id must be an integer, got {did!r}")
            if did in dims:
                raise DuplicateDimension(did)
            dim = Dimension(
                did,
                str(entry["name"]),
                DomainGroup(entry["domain_group"]),
                Layer(entry["layer"]),
            )
            sc = entry["scale"]
            scale = ScoreScale(int(sc["min"]), int(sc["max"]), Semantics(sc["semantics"]))
            raw_rubric = entry["rubric"]
            if not isinstance(raw_rubric, Mapping):
                raise MalformedSchema(f"dimension {did}: rubric must be an object")
            criteria = {int(k): v for k, v in raw_rubric.items()}
            authored = frozenset(int(x) for x in entry.get("authored", []))
        except SchemaError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSchema(f"malformed dimension entry {entry!r}: {exc}") from exc
        if scale.min > scale.max:
            raise MalformedSchema(f"dimension {did}: scale min exceeds max")
        if 1 <= did <= 12:
            expected_scale = BASIC_SCALE if did <= 8 else ADVANCED_SCALE
            if scale != expected_scale:
                raise MalformedSchema(
                    f"dimension {did}: {dim.layer.value} layer requires scale "
                    f"{expected_scale.min}..{expected_scale.max} ({expected_scale.semantics.value})"
                )
        for level, text in criteria.items():
            if not scale.contains(level):
                raise LevelOutOfRange(did, level, scale)
            if not isinstance(text, str) or not text.strip():
                raise MissingCriterion(did, level)
        for level in scale.levels():
            if level not in criteria:
                raise MissingCriterion(did, level)
        dims[did] = dim
        scales[did] = scale
        rubrics[did] = Rubric(did, dict(sorted(criteria.items())), authored)

    for expected in range(1, 13):
        if expected not in dims:
            raise MissingDimension(expected)
    extra = sorted(set(dims) - set(range(1, 13)))
    if extra:
        raise MalformedSchema(f"unexpected dimension ids {extra}")
    ordered = tuple(dims[i] for i in range(1, 13))
    names = [d.name.casefold() for d in ordered]
    if len(set(names)) != len(names):
        raise MalformedSchema("dimension names must be unique")
    for d in ordered:
        expected_layer = Layer.BASIC if d.id <= 8 else Layer.ADVANCED
        if d.layer != expected_layer:
            raise MalformedSchema(f"dimension {d.id} must be in the {expected_layer.value} layer")
        expected_scale = BASIC_SCALE if d.layer == Layer.BASIC else ADVANCED_SCALE
        if scales[d.id] != expected_scale:
            raise MalformedSchema(
                f"dimension {d.id}: {d.layer.value} layer requires scale "
                f"{expected_scale.min}..{expected_scale.max} ({expected_scale.semantics.value})"
            )
    return Schema(ordered, scales, rubrics, version)
