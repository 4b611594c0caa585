"""Judge prompts and the interleaved rationale/score block grammar.

A judge reply is a sequence of blocks, one per dimension::

    [DIM 2: Audio Clarity]
    Rationale: steady faint hiss under the voice, speech undistorted.
    Score: 4

Blocks are separated by a blank line. In scores-only mode the ``Rationale``
line is omitted.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .audio import file_digest
from .dataset import SampleRecord
from .errors import ParseError, ValidationError
from .schema import Schema, validate_score

SINGLE_PASS = "single_pass"
SCORES_ONLY = "scores_only"
DIMENSION_WISE = "dimension_wise"
_KINDS = (SINGLE_PASS, SCORES_ONLY, DIMENSION_WISE)


@dataclass(frozen=True)
class PromptMode:
    kind: str
    # set for a single dimension-wise request; None on an assembled 12-dimension
    # dimension-wise report
    dimension: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValidationError(f"unknown prompt mode {self.kind!r}")
        if self.kind != DIMENSION_WISE and self.dimension is not None:
            raise ValidationError(f"{self.kind} mode takes no dimension")

    @classmethod
    def single_pass(cls) -> "PromptMode":
        return cls(SINGLE_PASS)

    @classmethod
    def scores_only(cls) -> "PromptMode":
        return cls(SCORES_ONLY)

    @classmethod
    def dimension_wise(cls, dimension: Optional[int] = None) -> "PromptMode":
        return cls(DIMENSION_WISE, dimension)

    @classmethod
    def parse(cls, text: str) -> "PromptMode":
        """Accept ``single-pass``, ``scores-only``, ``dimension-wise`` or ``dimension-wise:<id>``."""
        name, _, dim = text.strip().replace("-", "_").partition(":")
        if name not in _KINDS:
            raise ValidationError(f"unknown prompt mode {text!r}")
        return cls(name, int(dim) if dim else None)

    @property
    def with_rationale(self) -> bool:
        return self.kind != SCORES_ONLY

    def __str__(self) -> str:
        return self.kind if self.dimension is None else f"{self.kind}:{self.dimension}"


@dataclass(frozen=True)
class ReportEntry:
    dimension_id: int
    rationale: str
    score: int


@dataclass(frozen=True)
class DiagnosisReport:
    entries: tuple
    mode: PromptMode
    raw_text: str = field(default="", compare=False)

    def scores(self) -> dict[int, int]:
        return {e.dimension_id: e.score for e in self.entries}

    def entry(self, dimension_id: int) -> ReportEntry:
        for e in self.entries:
            if e.dimension_id == dimension_id:
                return e
        raise KeyError(dimension_id)


# ---------------------------------------------------------------- errors


class ReportParseError(ParseError):
    def __init__(self, message: str, dimension_id: Optional[int] = None, line: Optional[int] = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)
        self.dimension_id = dimension_id
        self.line = line


class NoBlocksFound(ReportParseError):
    def __init__(self):
        super().__init__("no [DIM <id>: <name>] blocks found")


class MissingDimension(ReportParseError):
    def __init__(self, dimension_id: int):
        super().__init__(f"missing block for dimension {dimension_id}", dimension_id)


class DuplicateDimension(ReportParseError):
    def __init__(self, dimension_id: int, line: int):
        super().__init__(f"dimension {dimension_id} appears more than once", dimension_id, line)


class UnexpectedDimension(ReportParseError):
    def __init__(self, dimension_id: int, line: int):
        super().__init__(f"block for unknown or unrequested dimension {dimension_id}", dimension_id, line)


class ScoreOutOfRange(ReportParseError):
    def __init__(self, dimension_id: int, value: int, line: int):
        super().__init__(f"dimension {dimension_id}: score {value} outside its scale", dimension_id, line)
        self.value = value


class UnparsableScore(ReportParseError):
    def __init__(self, dimension_id: Optional[int], text: Optional[str], line: Optional[int]):
        what = "no score line" if text is None else f"score {text!r} is not an integer"
        super().__init__(f"dimension {dimension_id}: {what}", dimension_id, line)
        self.text = text


class ReportError(ValidationError):
    pass


# ---------------------------------------------------------------- grammar

_HEADER = re.compile(r"^\s*\[DIM\s+(\d{1,6})\s*:\s*([^\]\n]*)\]\s*$")
_SCORE = re.compile(r"^\s*Score\s*:\s*(.*?)\s*$", re.IGNORECASE)
_RATIONALE = re.compile(r"^\s*Rationale\s*:[ \t]?(.*)$", re.IGNORECASE)
_INTEGER = re.compile(r"^[+-]?\d{1,9}$")


@dataclass
class _Block:
    dimension_id: Optional[int]
    line: Optional[int]  # 1-based line of the header
    lines: list  # (lineno, text) for lines after the header


def _split_blocks(text: str) -> tuple[list[_Block], list]:
    """Return header-delimited blocks plus the (lineno, text) lines before the first header."""
    blocks: list[_Block] = []
    preamble = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        m = _HEADER.match(line)
        if m:
            blocks.append(_Block(int(m.group(1)), lineno, []))
        elif blocks:
            blocks[-1].lines.append((lineno, line))
        else:
            preamble.append((lineno, line))
    return blocks, preamble


def _read_block(dimension_id: Optional[int], lines: Sequence, schema: Schema,
                header_line: Optional[int], want_rationale: bool) -> tuple[str, int]:
    score_at = None
    for i in range(len(lines) - 1, -1, -1):
        if _SCORE.match(lines[i][1]):
            score_at = i
            break
    if score_at is None:
        raise UnparsableScore(dimension_id, None, header_line)
    lineno, line = lines[score_at]
    value = _SCORE.match(line).group(1)
    if not _INTEGER.match(value):
        raise UnparsableScore(dimension_id, value, lineno)
    score = int(value)
    if dimension_id is not None and not validate_score(schema, dimension_id, score):
        raise ScoreOutOfRange(dimension_id, score, lineno)
    if not want_rationale:
        return "", score
    body = [t for _, t in lines[:score_at]]
    for i, t in enumerate(body):
        m = _RATIONALE.match(t)
        if m:
            body = [m.group(1)] + body[i + 1:]
            break
    return "\n".join(body).strip(), score


def _coerce_text(text: Union[str, bytes]) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    return text


def parse_interleaved(text: Union[str, bytes], schema: Schema,
                      mode: Optional[PromptMode] = None) -> DiagnosisReport:
    """Parse a full 12-block judge reply into a report in canonical order.

    Text before the first header and after the last score line is ignored.
    Blocks may come in any order; a repeated dimension is an error.
    """
    mode = mode or PromptMode.single_pass()
    text = _coerce_text(text)
    blocks, _ = _split_blocks(text)
    if not blocks:
        raise NoBlocksFound()
    known = set(schema.ids)
    found: dict[int, ReportEntry] = {}
    for block in blocks:
        did = block.dimension_id
        if did not in known:
            raise UnexpectedDimension(did, block.line)
        if did in found:
            raise DuplicateDimension(did, block.line)
        rationale, score = _read_block(did, block.lines, schema, block.line, mode.with_rationale)
        found[did] = ReportEntry(did, rationale, score)
    for did in schema.ids:
        if did not in found:
            raise MissingDimension(did)
    entries = tuple(found[d] for d in schema.ids)
    return DiagnosisReport(entries, mode, text)


def parse_single_dimension(text: Union[str, bytes], dim, schema: Schema) -> tuple[str, int]:
    """Extract one (rationale, score) pair for ``dim`` from a dimension-wise reply.

    A ``[DIM ...]`` header is optional; if headers are present the block for
    ``dim`` is used.
    """
    did = schema.dimension(dim).id
    text = _coerce_text(text)
    blocks, preamble = _split_blocks(text)
    if not blocks:
        return _read_block(did, preamble, schema, None, True)
    mine = [b for b in blocks if b.dimension_id == did]
    if not mine:
        raise MissingDimension(did)
    if len(mine) > 1:
        raise DuplicateDimension(did, mine[1].line)
    return _read_block(did, mine[0].lines, schema, mine[0].line, True)


def _rationale_problem(rationale: str) -> Optional[str]:
    if rationale != rationale.strip():
        return "has surrounding whitespace"
    if "\r" in rationale:
        return "contains a carriage return"
    for line in rationale.split("\n"):
        if _HEADER.match(line) or _SCORE.match(line):
            return f"line {line!r} collides with the block grammar"
    return None


def validate_report(report: DiagnosisReport, schema: Schema) -> None:
    ids = [e.dimension_id for e in report.entries]
    mode = report.mode
    if mode.kind == DIMENSION_WISE and mode.dimension is not None:
        expected = [schema.dimension(mode.dimension).id]
    else:
        expected = schema.ids
    if ids != expected:
        raise ReportError(f"{mode} report must contain dimensions {expected} in order, got {ids}")
    for e in report.entries:
        if not validate_score(schema, e.dimension_id, e.score):
            raise ReportError(f"dimension {e.dimension_id}: invalid score {e.score!r}")
        if not mode.with_rationale and e.rationale:
            raise ReportError(f"scores-only report has a rationale for dimension {e.dimension_id}")
        problem = _rationale_problem(e.rationale)
        if problem:
            raise ReportError(f"dimension {e.dimension_id}: rationale {problem}")


def render_block(schema: Schema, dimension_id: int, rationale: Optional[str], score: int) -> str:
    name = schema.dimension(dimension_id).name
    out = f"[DIM {dimension_id}: {name}]\n"
    if rationale is not None:
        out += f"Rationale: {rationale}\n"
    return out + f"Score: {score}\n"


def serialize_report(report: DiagnosisReport, schema: Schema) -> str:
    """Canonical block text; ``parse_interleaved`` inverts it exactly."""
    order = {d: i for i, d in enumerate(schema.ids)}
    entries = sorted(report.entries, key=lambda e: order[e.dimension_id])
    blocks = [
        render_block(schema, e.dimension_id, e.rationale if report.mode.with_rationale else None, e.score)
        for e in entries
    ]
    return "\n".join(blocks)


# ---------------------------------------------------------------- prompts


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    audio_ref: str  # sha256 of the audio file bytes
    mode: PromptMode
    schema_version: str
    template_hash: str
    audio_path: str = field(default="", compare=False)


def _template_text(name: str, template_dir: Optional[Path]) -> str:
    if template_dir is not None:
        return (Path(template_dir) / name).read_text(encoding="utf-8")
    return resources.files("speechdiag").joinpath("templates", name).read_text(encoding="utf-8")


def load_templates(template_dir: Optional[Path] = None) -> dict[str, str]:
    names = ["system", SINGLE_PASS, SCORES_ONLY, DIMENSION_WISE, "rsc_verify"]
    return {n: _template_text(f"{n}.txt", template_dir) for n in names}


def template_hash(*texts: str) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


def render_rubric(schema: Schema, dimension_ids: Sequence[int]) -> str:
    parts = []
    for did in dimension_ids:
        dim = schema.dimension(did)
        scale = schema.scales[did]
        lines = [f"{dim.name} (dimension {did}, integer score {scale.min}-{scale.max}):"]
        criteria = schema.rubrics[did].level_criteria
        for level in sorted(criteria, reverse=True):
            lines.append(f"  {level}: {criteria[level]}")
        parts.append("\n".join(lines))
    return "\n\n".join(parts)


def render_output_grammar(schema: Schema, dimension_ids: Sequence[int], with_rationale: bool) -> str:
    blocks = []
    for did in dimension_ids:
        scale = schema.scales[did]
        rationale = "<reasoning grounded in the criteria>" if with_rationale else None
        blocks.append(render_block(schema, did, rationale, f"<integer {scale.min}-{scale.max}>"))
    return "\n".join(blocks).rstrip("\n")


def _fill(template: str, **values: str) -> str:
    for key, value in values.items():
        template = template.replace("{{" + key + "}}", value)
    return template


def build_prompt(sample: SampleRecord, mode: PromptMode, schema: Schema,
                 audio_path: Union[str, Path, None] = None,
                 templates: Optional[dict] = None) -> PromptBundle:
    """Render the judge prompt for one sample.

    ``audio_path`` overrides ``sample.audio_path`` (use it to pass a path
    already resolved against the manifest directory).
    """
    if not sample.source_text or not sample.source_text.strip():
        raise ValidationError(f"sample {sample.id!r} has no source text")
    path = Path(audio_path if audio_path is not None else sample.audio_path or "")
    if not sample.audio_path or not path.is_file():
        raise ValidationError(f"sample {sample.id!r}: audio {str(path)!r} not found")
    if mode.kind == DIMENSION_WISE and mode.dimension is None:
        raise ValidationError("a dimension-wise prompt needs a dimension")
    templates = templates or load_templates()
    dims = [schema.dimension(mode.dimension).id] if mode.kind == DIMENSION_WISE else schema.ids
    user_template = templates[mode.kind]
    user_text = _fill(
        user_template,
        source_text=sample.source_text.strip(),
        rubric=render_rubric(schema, dims),
        output_grammar=render_output_grammar(schema, dims, mode.with_rationale),
    )
    return PromptBundle(
        system_text=templates["system"].strip(),
        user_text=user_text,
        audio_ref=file_digest(path),
        mode=mode,
        schema_version=schema.version,
        template_hash=template_hash(templates["system"], user_template),
        audio_path=str(path),
    )


def build_rsc_prompt(dimension, rationale: str, gt_score: int, schema: Schema,
                     templates: Optional[dict] = None) -> tuple[str, str]:
    templates = templates or load_templates()
    dim = schema.dimension(dimension)
    text = _fill(
        templates["rsc_verify"],
        dimension=dim.name,
        rubric=render_rubric(schema, [dim.id]),
        rationale=rationale.strip(),
        score=str(gt_score),
    )
    return text, template_hash(templates["rsc_verify"])
