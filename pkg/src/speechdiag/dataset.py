"""Sample manifests (JSONL), gold-set construction and split hygiene checks."""

from __future__ import annotations

import json
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .audio import file_digest
from .errors import ValidationError
from .perturb import PerturbationRecord
from .schema import Schema, UnknownDimension, builtin_schema, validate_score

LABEL_SOURCES = ("expert", "synthetic", "judge")
SPLITS = ("train", "test")
DISTRIBUTIONS = ("ID", "OOD")
TEXT_DOMAINS = ("literary", "conversational", "web")


class ManifestError(ValidationError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InsufficientRecords(ValidationError):
    def __init__(self, deficits: Mapping[tuple, int]):
        self.deficits = dict(deficits)
        detail = ", ".join(f"{'/'.join(map(str, k))}: short by {v}" for k, v in self.deficits.items())
        super().__init__(f"not enough records to fill strata ({detail})")


@dataclass(frozen=True)
class Label:
    score: int
    rationale: str = ""
    label_source: str = "expert"

    def to_dict(self) -> dict:
        return {"score": self.score, "rationale": self.rationale, "label_source": self.label_source}


@dataclass(frozen=True)
class SampleRecord:
    id: str
    audio_path: str
    source_text: str = ""
    source_system: str = ""
    labels: Mapping[int, Label] = field(default_factory=dict)
    split: str = "train"
    distribution: str = "ID"
    perturbations: tuple = ()
    text_domain: str = "conversational"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "audio_path": self.audio_path,
            "source_text": self.source_text,
            "source_system": self.source_system,
            "labels": {str(k): v.to_dict() for k, v in sorted(self.labels.items())},
            "split": self.split,
            "distribution": self.distribution,
            "perturbations": [p.to_dict() for p in self.perturbations],
            "text_domain": self.text_domain,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SampleRecord":
        labels = {}
        for k, v in (d.get("labels") or {}).items():
            labels[int(k)] = Label(v["score"], v.get("rationale", ""), v.get("label_source", "expert"))
        return cls(
            id=str(d["id"]),
            audio_path=str(d["audio_path"]),
            source_text=d.get("source_text", ""),
            source_system=d.get("source_system", ""),
            labels=labels,
            split=d.get("split", "train"),
            distribution=d.get("distribution", "ID"),
            perturbations=tuple(PerturbationRecord.from_dict(p) for p in d.get("perturbations", [])),
            text_domain=d.get("text_domain", "conversational"),
        )

    def gt_scores(self, sources: Iterable[str] = ("expert", "synthetic")) -> dict[int, int]:
        allowed = set(sources)
        return {k: v.score for k, v in self.labels.items() if v.label_source in allowed}


@dataclass
class Manifest:
    records: list
    schema_version: str = "1.0"
    # directory that relative audio paths resolve against; not serialized
    base_dir: Optional[Path] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.audio_path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.id: r for r in self.records}


def _record_problems(rec: SampleRecord, schema: Schema) -> list[str]:
    problems = []
    for dim, label in rec.labels.items():
        try:
            ok = validate_score(schema, dim, label.score)
        except UnknownDimension:
            problems.append(f"unknown dimension {dim}")
            continue
        if not ok:
            problems.append(f"score {label.score!r} invalid for dimension {dim}")
        if label.label_source not in LABEL_SOURCES:
            problems.append(f"dimension {dim}: unknown label_source {label.label_source!r}")
    for p in rec.perturbations:
        lab = rec.labels.get(p.target_dimension)
        if lab is not None and lab.label_source != "synthetic":
            problems.append(
                f"perturbed dimension {p.target_dimension} must carry label_source=synthetic"
            )
    if rec.split not in SPLITS:
        problems.append(f"split {rec.split!r} not in {SPLITS}")
    if rec.distribution not in DISTRIBUTIONS:
        problems.append(f"distribution {rec.distribution!r} not in {DISTRIBUTIONS}")
    if rec.text_domain not in TEXT_DOMAINS:
        problems.append(f"text_domain {rec.text_domain!r} not in {TEXT_DOMAINS}")
    return problems


def validate_manifest(manifest: Manifest, schema: Optional[Schema] = None,
                      check_audio: bool = False) -> None:
    schema = schema or builtin_schema()
    problems = []
    seen: dict[str, int] = {}
    for i, rec in enumerate(manifest.records, start=1):
        if rec.id in seen:
            problems.append(f"record {i}: duplicate id {rec.id!r} (first at record {seen[rec.id]})")
        else:
            seen[rec.id] = i
        problems.extend(f"record {i} ({rec.id}): {p}" for p in _record_problems(rec, schema))
        if check_audio and not manifest.resolve(rec).is_file():
            problems.append(f"record {i} ({rec.id}): audio {rec.audio_path!r} not found")
    if problems:
        raise ManifestError(problems)


def load_manifest(path, schema: Optional[Schema] = None) -> Manifest:
    """Read a JSONL manifest; problems are reported with 1-based line numbers.

    An optional first line ``{"schema_version": ...}`` without an ``id`` is a
    header.
    """
    schema = schema or builtin_schema()
    path = Path(path)
    records = []
    version = "1.0"
    problems = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                problems.append(f"line {lineno}: expected an object")
                continue
            if "id" not in obj and "schema_version" in obj and not records:
                version = str(obj["schema_version"])
                continue
            try:
                rec = SampleRecord.from_dict(obj)
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"line {lineno}: malformed record ({exc})")
                continue
            if rec.id in seen:
                problems.append(f"line {lineno}: duplicate id {rec.id!r} (also on line {seen[rec.id]})")
            else:
                seen[rec.id] = lineno
            problems.extend(f"line {lineno}: {p}" for p in _record_problems(rec, schema))
            records.append(rec)
    if problems:
        raise ManifestError(problems)
    return Manifest(records, version, base_dir=path.parent)


def dumps_manifest(manifest: Manifest) -> str:
    lines = [json.dumps({"schema_version": manifest.schema_version})]
    lines += [json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=False) for r in manifest.records]
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(manifest: Manifest, path) -> None:
    atomic_write_text(path, dumps_manifest(manifest))


# ---------------------------------------------------------------- gold set


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def largest_remainder(total: int, weights: Mapping[Any, int]) -> dict:
    """Split ``total`` across keys in proportion to ``weights``.

    Floors first, then hands the leftover units to the largest fractional
    remainders; ties go to the key that sorts first.
    """
    keys = sorted(weights)
    denom = sum(weights.values())
    if total == 0 or denom == 0:
        return {k: 0 for k in keys}
    exact = {k: total * weights[k] / denom for k in keys}
    alloc = {k: int(math.floor(exact[k])) for k in keys}
    leftover = total - sum(alloc.values())
    # stable sort: equal remainders keep sorted-key order
    order = sorted(keys, key=lambda k: -(exact[k] - alloc[k]))
    for k in order[:leftover]:
        alloc[k] += 1
    return alloc


def _stratum(rec: SampleRecord, strata: Sequence[str]) -> tuple:
    return tuple(getattr(rec, s) for s in strata)


def build_gold_set(
    manifest: Manifest,
    n: int,
    ood_fraction: float,
    strata: Sequence[str] = ("source_system", "text_domain"),
    seed: int = 0,
    ood_systems: Optional[Iterable[str]] = None,
) -> Manifest:
    """Select a stratified test set of exactly ``n`` records.

    ``round(ood_fraction * n)`` records come from the OOD pool and the rest
    from the ID pool. Within each pool the count is spread over strata in
    proportion to their pool sizes (largest-remainder rounding), and records
    inside a stratum are drawn uniformly with ``seed``. When ``ood_systems``
    is given it overrides each record's ``distribution`` tag.
    """
    if n < 0 or not (0.0 <= ood_fraction <= 1.0):
        raise ValidationError(f"need n >= 0 and 0 <= ood_fraction <= 1 (got {n}, {ood_fraction})")
    ood_set = set(ood_systems) if ood_systems is not None else None
    pools: dict[str, dict[tuple, list[int]]] = {"ID": defaultdict(list), "OOD": defaultdict(list)}
    tagged = []
    for i, rec in enumerate(manifest.records):
        if ood_set is not None:
            rec = replace(rec, distribution="OOD" if rec.source_system in ood_set else "ID")
        tagged.append(rec)
        pools[rec.distribution][_stratum(rec, strata)].append(i)

    n_ood = round_half_up(ood_fraction * n)
    targets = {"ID": n - n_ood, "OOD": n_ood}
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    deficits = {}
    for dist in ("ID", "OOD"):
        pool = pools[dist]
        sizes = {k: len(v) for k, v in pool.items()}
        if targets[dist] > sum(sizes.values()):
            deficits[(dist, "*")] = targets[dist] - sum(sizes.values())
            continue
        quotas = largest_remainder(targets[dist], sizes)
        for key in sorted(pool):
            q = quotas[key]
            if q > sizes[key]:
                deficits[(dist,) + key] = q - sizes[key]
                continue
            picks = rng.choice(len(pool[key]), size=q, replace=False)
            chosen.extend(pool[key][j] for j in picks)
    if deficits:
        raise InsufficientRecords(deficits)
    selected = [replace(tagged[i], split="test") for i in sorted(chosen)]
    return Manifest(selected, manifest.schema_version, base_dir=manifest.base_dir)


def stratum_counts(manifest: Manifest, strata: Sequence[str] = ("source_system", "text_domain")) -> dict:
    counts: dict[tuple, int] = defaultdict(int)
    for rec in manifest.records:
        counts[(rec.distribution,) + _stratum(rec, strata)] += 1
    return dict(counts)


@dataclass
class DisjointnessReport:
    id_overlaps: list = field(default_factory=list)
    digest_overlaps: list = field(default_factory=list)  # (train_id, test_id, digest)

    @property
    def clean(self) -> bool:
        return not self.id_overlaps and not self.digest_overlaps

    def to_dict(self) -> dict:
        return {
            "id_overlaps": list(self.id_overlaps),
            "digest_overlaps": [list(t) for t in self.digest_overlaps],
        }


def _digests(manifest: Manifest) -> dict[str, str]:
    out = {}
    for rec in manifest.records:
        path = manifest.resolve(rec)
        if path.is_file():
            out[rec.id] = file_digest(path)
    return out


def split_disjointness_check(train: Manifest, test: Manifest) -> DisjointnessReport:
    """Report ids and audio payloads that appear on both sides of a split."""
    report = DisjointnessReport()
    train_ids = {r.id for r in train.records}
    report.id_overlaps = sorted(r.id for r in test.records if r.id in train_ids)
    by_digest: dict[str, list[str]] = defaultdict(list)
    for rid, dg in _digests(train).items():
        by_digest[dg].append(rid)
    for test_id, dg in _digests(test).items():
        for train_id in by_digest.get(dg, []):
            report.digest_overlaps.append((train_id, test_id, dg))
    report.digest_overlaps.sort()
    return report


def rebase_paths(manifest: Manifest, new_base) -> Manifest:
    """Rewrite relative audio paths so they resolve from ``new_base``."""
    new_base = Path(new_base)
    old_base = manifest.base_dir or Path(".")

    def moved(path: str) -> str:
        if Path(path).is_absolute():
            return path
        return Path(os.path.relpath((old_base / path).resolve(), new_base.resolve())).as_posix()

    records = []
    for rec in manifest.records:
        perts = []
        for p in rec.perturbations:
            # splice records point at their foreign source the same way rows point at audio
            if "other_path" in p.params:
                p = replace(p, params={**p.params, "other_path": moved(p.params["other_path"])})
            perts.append(p)
        records.append(replace(rec, audio_path=moved(rec.audio_path), perturbations=tuple(perts)))
    return Manifest(records, manifest.schema_version, base_dir=new_base)
