"""Per-system capability profiles, rule-based diagnostic flags and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

from .errors import ValidationError
from .schema import Layer, Schema, builtin_schema

PRONUNCIATION = 1
CONSISTENCY_DIMS = (6, 7, 8)
STRESS, LENGTHENING, PARALINGUISTICS, EMOTION_EXPRESSION = 9, 10, 11, 12
ADVANCED_PROSODY = (STRESS, LENGTHENING)


class ProfileError(ValidationError):
    pass


@dataclass(frozen=True)
class SystemProfile:
    name: str
    means: Mapping[int, float]
    n: Mapping[int, int]
    suggested_flag: str = ""
    manual_override: Optional[str] = None
    schema_version: str = "1.0"

    @property
    def flag(self) -> str:
        return self.manual_override or self.suggested_flag


def system_profile(system_name: str, reports: Sequence, schema: Optional[Schema] = None,
                   sample_ids: Optional[Sequence[str]] = None) -> SystemProfile:
    """Average each dimension over complete reports.

    Every report must score all schema dimensions; incomplete ones are
    rejected with their sample ids (when ``sample_ids`` is given) or indices.
    """
    schema = schema or builtin_schema()
    if not reports:
        raise ProfileError(f"system {system_name!r}: no reports")
    expected = set(schema.ids)
    incomplete = []
    for i, r in enumerate(reports):
        if set(r.scores()) != expected:
            incomplete.append(sample_ids[i] if sample_ids is not None else f"#{i}")
    if incomplete:
        raise ProfileError(f"system {system_name!r}: incomplete reports for {incomplete}")
    means, counts = {}, {}
    for did in schema.ids:
        values = [r.scores()[did] for r in reports]
        means[did] = math.fsum(values) / len(values)
        counts[did] = len(values)
    for did, m in means.items():
        sc = schema.scales[did]
        if not (sc.min <= m <= sc.max):
            raise ProfileError(f"system {system_name!r}: mean {m} outside scale for dimension {did}")
    return SystemProfile(system_name, means, counts, schema_version=schema.version)


# ---------------------------------------------------------------- flag rules

Predicate = Callable[[SystemProfile, Sequence[SystemProfile]], bool]


@dataclass(frozen=True)
class FlagRule:
    name: str
    predicate: Predicate = field(compare=False)
    priority: int


def _is_max(p: SystemProfile, cohort: Sequence[SystemProfile], did: int) -> bool:
    return p.means[did] >= max(q.means[did] for q in cohort)


def _in_top(p: SystemProfile, cohort: Sequence[SystemProfile], did: int, k: int) -> bool:
    # ties share a place: top-k means fewer than k systems strictly better
    return sum(1 for q in cohort if q.means[did] > p.means[did]) < k


def _paralinguistic_enhanced(p, cohort) -> bool:
    if not _is_max(p, cohort, PARALINGUISTICS):
        return False
    others = [q.means[PARALINGUISTICS] for q in cohort if q is not p]
    runner_up = max(others) if others else 0.0
    return p.means[PARALINGUISTICS] >= 2 * runner_up


def _prosody_limited(p, cohort) -> bool:
    return any(p.means[d] < 0.1 for d in ADVANCED_PROSODY)


def _highly_expressive(p, cohort) -> bool:
    return _is_max(p, cohort, EMOTION_EXPRESSION) and _is_max(p, cohort, LENGTHENING)


def _pronunciation_accurate(p, cohort) -> bool:
    advanced = (STRESS, LENGTHENING, PARALINGUISTICS, EMOTION_EXPRESSION)
    return _is_max(p, cohort, PRONUNCIATION) and not any(_is_max(p, cohort, d) for d in advanced)


def _stable_but_flat(p, cohort) -> bool:
    return all(_in_top(p, cohort, d, 2) for d in CONSISTENCY_DIMS) and p.means[PARALINGUISTICS] < 0.15


DEFAULT_RULES: tuple = (
    FlagRule("Paralinguistic-Enhanced", _paralinguistic_enhanced, 60),
    FlagRule("Prosody-Limited", _prosody_limited, 50),
    FlagRule("Highly Expressive", _highly_expressive, 40),
    FlagRule("Pronunciation-Accurate", _pronunciation_accurate, 30),
    FlagRule("Stable but Flat", _stable_but_flat, 20),
    FlagRule("Balanced", lambda p, cohort: True, 0),
)


def suggest_flag(profile: SystemProfile, cohort: Sequence[SystemProfile],
                 rules: Sequence[FlagRule] = DEFAULT_RULES) -> str:
    """Name of the highest-priority rule that matches; "Balanced" if none does."""
    if not any(q is profile for q in cohort):
        cohort = list(cohort) + [profile]
    for rule in sorted(rules, key=lambda r: -r.priority):
        if rule.predicate(profile, cohort):
            return rule.name
    return "Balanced"


def assign_flags(profiles: Sequence[SystemProfile], rules: Sequence[FlagRule] = DEFAULT_RULES,
                 overrides: Optional[Mapping[str, str]] = None) -> list[SystemProfile]:
    overrides = overrides or {}
    return [
        replace(p, suggested_flag=suggest_flag(p, profiles, rules),
                manual_override=overrides.get(p.name, p.manual_override))
        for p in profiles
    ]


# ---------------------------------------------------------------- rendering


def _check_versions(profiles: Sequence[SystemProfile]) -> None:
    versions = {p.schema_version for p in profiles}
    if len(versions) > 1:
        raise ProfileError(f"profiles mix schema versions {sorted(versions)}")


def _markers(values: list[float]) -> list[str]:
    """"best" / "second" / "" per value, comparing at printed (3 dp) precision."""
    shown = [round(v, 3) for v in values]
    distinct = sorted(set(shown), reverse=True)
    best = distinct[0] if distinct else None
    second = distinct[1] if len(distinct) > 1 else None
    out = []
    for v in shown:
        out.append("best" if v == best else "second" if v == second else "")
    return out


def render_markdown(profiles: Sequence[SystemProfile], schema: Schema) -> str:
    names = [p.name for p in profiles]
    lines = ["| Dimension | " + " | ".join(names) + " |",
             "|---|" + "---|" * len(names)]
    for layer in (Layer.BASIC, Layer.ADVANCED):
        for did in schema.layer_ids(layer):
            values = [p.means[did] for p in profiles]
            marks = _markers(values) if len(profiles) > 1 else ["best"] * len(profiles)
            cells = []
            for v, m in zip(values, marks):
                text = f"{v:.3f}"
                cells.append(f"**{text}**" if m == "best" else f"<u>{text}</u>" if m == "second" else text)
            lines.append(f"| {schema.dimension(did).name} | " + " | ".join(cells) + " |")
    flags = []
    for p in profiles:
        flags.append(f"**{p.manual_override}**" if p.manual_override else f"{p.suggested_flag} (suggested)")
    lines.append("| **Diagnostic Flag** | " + " | ".join(flags) + " |")
    return "\n".join(lines) + "\n"


def render_json(profiles: Sequence[SystemProfile]) -> str:
    doc = {
        "schema_version": profiles[0].schema_version if profiles else "",
        "systems": [
            {
                "name": p.name,
                "means": {str(k): v for k, v in sorted(p.means.items())},
                "n": {str(k): v for k, v in sorted(p.n.items())},
                "flag": {"suggested": p.suggested_flag, "manual_override": p.manual_override},
            }
            for p in profiles
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_json(text: str) -> list[SystemProfile]:
    doc = json.loads(text)
    version = doc.get("schema_version", "")
    return [
        SystemProfile(
            s["name"],
            {int(k): float(v) for k, v in s["means"].items()},
            {int(k): int(v) for k, v in s["n"].items()},
            s["flag"].get("suggested", ""),
            s["flag"].get("manual_override"),
            version,
        )
        for s in doc["systems"]
    ]


def render_csv(profiles: Sequence[SystemProfile], schema: Schema) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dimension"] + [p.name for p in profiles])
    for did in schema.ids:
        w.writerow([schema.dimension(did).name] + [f"{p.means[did]:.3f}" for p in profiles])
    w.writerow(["diagnostic_flag"] + [p.flag for p in profiles])
    w.writerow(["flag_source"] + ["manual" if p.manual_override else "suggested" for p in profiles])
    return buf.getvalue()


def render_report(profiles: Sequence[SystemProfile], fmt: str, schema: Optional[Schema] = None) -> str:
    schema = schema or builtin_schema()
    _check_versions(profiles)
    if fmt == "markdown":
        return render_markdown(profiles, schema)
    if fmt == "json":
        return render_json(profiles)
    if fmt == "csv":
        return render_csv(profiles, schema)
    raise ProfileError(f"unknown report format {fmt!r}")
