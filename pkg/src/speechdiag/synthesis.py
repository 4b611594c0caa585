"""Batch negative synthesis: turn clean manifest rows into weakly labeled negatives."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .audio import AudioBuffer, read_wav, write_wav
from .dataset import Label, Manifest, SampleRecord
from .errors import ValidationError
from .perturb import PerturbationRecord, run_step
from .schema import Schema, builtin_schema

# Catalog operations that may be drawn for each targeted dimension.
DEFAULT_KINDS: dict[int, list[str]] = {
    1: ["remove_segment"],
    2: ["add_white_noise", "hard_clip", "inject_pops"],
    3: ["pitch_shift"],
    4: ["insert_silence"],
    5: ["time_stretch", "piecewise_rate_warp"],
    6: ["splice_foreign"],
    7: ["gain_step"],
}

# [lo, hi] is a uniform range; {"choices": [...]} picks one value.
# Time parameters ending in _frac are fractions of the source duration.
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "add_white_noise": {"snr_db": [0.0, 30.0]},
    "add_hum": {"freq_hz": {"choices": [50.0, 60.0]}, "level_dbfs": [-45.0, -20.0]},
    "hard_clip": {"threshold_frac": [0.2, 0.8]},
    "inject_pops": {"rate_per_s": [0.5, 8.0], "amplitude": [0.3, 0.9]},
    "time_stretch": {"factor": {"choices": [0.6, 0.7, 0.8, 0.85, 1.15, 1.2, 1.4, 1.6]}},
    "piecewise_rate_warp": {"factor": [0.6, 1.6], "segments": {"choices": [2, 3]}},
    "pitch_shift": {"semitones": {"choices": [-5.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 5.0]}},
    "insert_silence": {"at_frac": [0.2, 0.8], "dur_s": [0.2, 1.2]},
    "remove_segment": {"at_frac": [0.2, 0.7], "dur_s": [0.05, 0.3]},
    "splice_foreign": {"at_frac": [0.3, 0.7]},
    "gain_step": {"at_frac": [0.3, 0.7], "delta_db": [-12.0, 12.0]},
}


class SynthesisError(ValidationError):
    pass


@dataclass
class SynthesisConfig:
    quotas: dict = field(default_factory=dict)  # dimension id -> count
    params: dict = field(default_factory=dict)  # kind -> {param: range}
    kinds: dict = field(default_factory=dict)  # dimension id -> [kind, ...]
    reuse_sources: bool = False
    seed: Optional[int] = None

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any], schema: Optional[Schema] = None) -> "SynthesisConfig":
        schema = schema or builtin_schema()
        quotas = {schema.dimension(k).id: int(v) for k, v in (doc.get("quotas") or {}).items()}
        kinds = {schema.dimension(k).id: list(v) for k, v in (doc.get("kinds") or {}).items()}
        return cls(
            quotas=quotas,
            params={k: dict(v) for k, v in (doc.get("params") or {}).items()},
            kinds=kinds,
            reuse_sources=bool(doc.get("reuse_sources", False)),
            seed=doc.get("seed"),
        )

    @classmethod
    def load(cls, path, schema: Optional[Schema] = None) -> "SynthesisConfig":
        text = Path(path).read_text(encoding="utf-8")
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_mapping(doc or {}, schema)

    def kinds_for(self, dim: int) -> list[str]:
        return self.kinds.get(dim) or DEFAULT_KINDS.get(dim, [])

    def ranges_for(self, kind: str) -> dict[str, Any]:
        merged = dict(DEFAULT_PARAMS.get(kind, {}))
        merged.update(self.params.get(kind, {}))
        return merged


def _draw(rng: np.random.Generator, spec: Any) -> Any:
    if isinstance(spec, Mapping):
        choices = list(spec["choices"])
        return choices[int(rng.integers(len(choices)))]
    if isinstance(spec, (list, tuple)) and len(spec) == 2:
        return float(rng.uniform(spec[0], spec[1]))
    return spec


def _sample_params(kind: str, ranges: Mapping[str, Any], buf: AudioBuffer,
                   rng: np.random.Generator) -> dict[str, Any]:
    drawn = {name: _draw(rng, spec) for name, spec in sorted(ranges.items())}
    dur = buf.duration_s
    params: dict[str, Any] = {}
    if kind == "piecewise_rate_warp":
        segs = int(drawn.get("segments", 2))
        spec = ranges.get("factor", [0.6, 1.6])
        factors = [float(_draw(rng, spec)) for _ in range(segs)]
        params["boundaries_s"] = [round(dur * (i + 1) / segs, 6) for i in range(segs - 1)]
        params["factors"] = factors
        return params
    for name, value in drawn.items():
        if name.endswith("_frac") and name != "threshold_frac":
            params[name[: -len("_frac")] + "_s"] = round(float(value) * dur, 6)
        else:
            params[name] = value
    if kind == "remove_segment":
        params["dur_s"] = min(params["dur_s"], max(dur - params["at_s"], 0.0))
    if kind == "gain_step" and params["delta_db"] > 0:
        tail = buf.samples[int(round(params["at_s"] * buf.sample_rate)):]
        peak = float(np.max(np.abs(tail))) if tail.size else 0.0
        if peak > 0:
            # keep the boosted tail below full scale
            headroom = 20 * np.log10(0.999 / peak)
            params["delta_db"] = float(min(params["delta_db"], headroom))
    return params


@dataclass
class _Job:
    dimension: int
    index: int
    source: SampleRecord
    kind: str
    seed: int
    other: Optional[SampleRecord]
    new_id: str


def _plan_jobs(manifest: Manifest, config: SynthesisConfig, seed: int) -> list[_Job]:
    jobs = []
    records = manifest.records
    for dim in sorted(config.quotas):
        quota = config.quotas[dim]
        if quota <= 0:
            continue
        kinds = config.kinds_for(dim)
        if not kinds:
            raise SynthesisError(f"no perturbation kinds configured for dimension {dim}")
        if not records:
            raise SynthesisError("manifest has no source rows")
        if quota > len(records) and not config.reuse_sources:
            raise SynthesisError(
                f"dimension {dim}: quota {quota} exceeds {len(records)} source rows and reuse is disabled"
            )
        rng = np.random.default_rng([seed, dim])
        picks = rng.choice(len(records), size=quota, replace=config.reuse_sources)
        for k, src_idx in enumerate(picks):
            src = records[int(src_idx)]
            kind = kinds[int(rng.integers(len(kinds)))]
            job_seed = int(rng.integers(0, 2**63 - 1))
            other = None
            if kind == "splice_foreign":
                others = [r for r in records if r.id != src.id and r.source_system != src.source_system]
                others = others or [r for r in records if r.id != src.id]
                if not others:
                    raise SynthesisError("splice_foreign needs at least two source rows")
                other = others[int(rng.integers(len(others)))]
            jobs.append(_Job(dim, k, src, kind, job_seed, other, f"{src.id}__neg{dim:02d}_{k:04d}"))
    return jobs


def _run_job(job: _Job, manifest: Manifest, config: SynthesisConfig, audio_dir: Path,
             rel_prefix: str) -> SampleRecord:
    try:
        buf = read_wav(manifest.resolve(job.source))
        other = read_wav(manifest.resolve(job.other)) if job.other is not None else None
    except (OSError, ValidationError) as exc:
        raise SynthesisError(f"row {job.source.id}: cannot read audio ({exc})") from exc
    rng = np.random.default_rng(job.seed)
    params = _sample_params(job.kind, config.ranges_for(job.kind), buf, rng)
    if job.kind == "splice_foreign":
        params["at_s"] = min(params["at_s"], buf.duration_s)
        params["other_path"] = job.other.audio_path
    out, record = run_step(buf, job.kind, params, job.seed, other=other)
    if record.target_dimension != job.dimension:
        record = replace(record, target_dimension=job.dimension)
    write_wav(out, audio_dir / f"{job.new_id}.wav")
    lo, hi = record.target_score_band
    labels = dict(job.source.labels)
    labels[job.dimension] = Label((lo + hi) // 2, "", "synthetic")
    return replace(
        job.source,
        id=job.new_id,
        audio_path=f"{rel_prefix}{job.new_id}.wav",
        labels=labels,
        perturbations=tuple(job.source.perturbations) + (record,),
    )


def synthesize_negatives(manifest: Manifest, config: SynthesisConfig, seed: int,
                         out_dir, workers: int = 1) -> Manifest:
    """Return ``manifest`` extended with perturbed copies of its rows.

    For each dimension with a positive quota, that many source rows are drawn
    (without replacement unless ``reuse_sources``), one catalog operation is
    applied to each, and the perturbed audio is written under
    ``out_dir/audio``. The targeted dimension gets a synthetic label at the
    lower midpoint of the record's band; other labels are inherited. Output
    depends only on (manifest, config, seed).
    """
    out_dir = Path(out_dir)
    jobs = _plan_jobs(manifest, config, seed)
    if not jobs:
        return Manifest(list(manifest.records), manifest.schema_version, base_dir=manifest.base_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    base = manifest.base_dir or Path(".")
    # relative even when out_dir lies outside the manifest directory, so the
    # rows do not depend on where the run happened
    rel_prefix = Path(os.path.relpath(audio_dir.resolve(), base.resolve())).as_posix() + "/"
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            new = list(pool.map(lambda j: _run_job(j, manifest, config, audio_dir, rel_prefix), jobs))
    else:
        new = [_run_job(j, manifest, config, audio_dir, rel_prefix) for j in jobs]
    return Manifest(list(manifest.records) + new, manifest.schema_version, base_dir=manifest.base_dir)


def manifest_delta(before: Manifest, after: Manifest) -> Manifest:
    known = {r.id for r in before.records}
    return Manifest([r for r in after.records if r.id not in known], after.schema_version,
                    base_dir=after.base_dir)
