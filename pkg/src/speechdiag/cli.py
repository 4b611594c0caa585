"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 transport error, 3 judge-output
parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import dataset, metrics, profile, protocol, schema as schema_mod, synthesis
from .errors import HarnessError, ValidationError
from .judge_client import BatchItem, JudgeClient, JudgeEndpoint
from .protocol import DiagnosisReport, PromptMode

log = logging.getLogger("speechdiag")

EXIT_OK, EXIT_VALIDATION, EXIT_TRANSPORT, EXIT_PARSE = 0, 1, 2, 3


@dataclass
class RunConfig:
    schema_path: Optional[Path] = None
    cache_dir: Optional[Path] = None
    endpoints: dict = field(default_factory=dict)
    seed: int = 0
    concurrency: Optional[int] = None

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if not path:
            return cls()
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {p}: {exc}") from exc
        doc = (json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)) or {}
        base = p.parent

        def rel(v: Optional[str]) -> Optional[Path]:
            if v is None:
                return None
            q = Path(v)
            return q if q.is_absolute() else base / q

        endpoints = {
            name: JudgeEndpoint.from_mapping(name, dict(spec))
            for name, spec in (doc.get("endpoints") or {}).items()
        }
        return cls(rel(doc.get("schema")), rel(doc.get("cache_dir")), endpoints,
                   int(doc.get("seed", 0)), doc.get("concurrency"))

    def schema(self) -> schema_mod.Schema:
        if self.schema_path is None:
            return schema_mod.builtin_schema()
        return schema_mod.load_schema(self.schema_path.read_text(encoding="utf-8"))

    def endpoint(self, name: Optional[str], base_url: Optional[str] = None,
                 model: Optional[str] = None) -> JudgeEndpoint:
        if base_url:
            ep = JudgeEndpoint(name or "default", base_url, model or "judge")
        elif name and name in self.endpoints:
            ep = self.endpoints[name]
        else:
            raise ValidationError(f"unknown endpoint {name!r}; define it in the config or pass --base-url")
        if self.concurrency:
            ep = JudgeEndpoint(ep.name, ep.base_url, ep.model_name, ep.api_key_env,
                               int(self.concurrency), ep.timeout_s, ep.temperature)
        return ep


def _write_new(path: Path, text: str, force: bool) -> None:
    if path.exists() and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")
    dataset.atomic_write_text(path, text)


# ---------------------------------------------------------------- reports JSONL


def report_line(item: BatchItem, mode: PromptMode, schema: schema_mod.Schema) -> dict:
    line: dict[str, Any] = {"sample_id": item.sample_id, "mode": str(mode)}
    if item.report is not None:
        line["report"] = protocol.serialize_report(item.report, schema)
        line["raw_text"] = item.report.raw_text
        line["error"] = None
    else:
        err = item.error
        line["report"] = None
        line["raw_text"] = getattr(err, "raw_text", None)
        line["error"] = {"type": type(err).__name__, "message": str(err)}
    return line


def load_reports(path, schema: schema_mod.Schema) -> dict[str, DiagnosisReport]:
    """Read an evaluate-output JSONL into {sample_id: report}; error rows are skipped."""
    out: dict[str, DiagnosisReport] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if obj.get("report") is None:
                continue
            mode = PromptMode.parse(obj.get("mode", "single_pass"))
            rep = protocol.parse_interleaved(obj["report"], schema, mode)
            out[obj["sample_id"]] = DiagnosisReport(rep.entries, mode, obj.get("raw_text") or "")
    return out


# ---------------------------------------------------------------- commands


def cmd_schema_export(args, cfg: RunConfig) -> int:
    text = schema_mod.dump_schema(cfg.schema())
    if args.out == "-":
        sys.stdout.write(text)
    else:
        _write_new(Path(args.out), text, args.force)
    return EXIT_OK


def cmd_synthesize(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    manifest = dataset.load_manifest(args.manifest, sch)
    conf = synthesis.SynthesisConfig.load(args.config_file, sch)
    seed = args.seed if args.seed is not None else conf.seed if conf.seed is not None else cfg.seed
    out_dir = Path(args.out)
    try:
        result = synthesis.synthesize_negatives(manifest, conf, int(seed), out_dir, workers=args.workers)
    except synthesis.SynthesisError as exc:
        log.error("synthesis failed: %s", exc)
        raise
    delta = dataset.rebase_paths(synthesis.manifest_delta(manifest, result), out_dir)
    dataset.write_manifest(delta, out_dir / "manifest_delta.jsonl")
    print(f"wrote {len(delta)} synthesized rows to {out_dir / 'manifest_delta.jsonl'}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    manifest = dataset.load_manifest(args.manifest, sch)
    mode = PromptMode.parse(args.mode)
    ep = cfg.endpoint(args.endpoint, args.base_url, args.model)
    cache_dir = Path(args.cache_dir) if args.cache_dir else cfg.cache_dir
    with JudgeClient(ep, cache_dir=cache_dir) as client:
        items = client.run_batch(manifest, mode, sch)
        lines = [json.dumps(report_line(it, mode, sch), ensure_ascii=False, sort_keys=True) for it in items]
        dataset.atomic_write_text(args.out, "".join(l + "\n" for l in lines))
        failed = [it for it in items if not it.ok]
        log.info("requests: %d, cache hits: %d", client.request_count, client.cache_hits)
        print(f"scored {len(items) - len(failed)}/{len(items)} samples; "
              f"upstream requests: {client.request_count}")
    for it in failed:
        log.warning("sample %s failed: %s", it.sample_id, it.error)
    if failed:
        return failed[0].error.exit_code
    return EXIT_OK


def _rsc_rows(rows, reports, gts, client: JudgeClient, sch) -> list:
    verdicts: dict[int, list] = {d: [] for d in sch.ids}
    for sid in sorted(reports):
        gt = gts.get(sid, {})
        for entry in reports[sid].entries:
            if entry.rationale and entry.dimension_id in gt:
                verdicts[entry.dimension_id].append(
                    client.rsc_verify(entry.dimension_id, entry.rationale, gt[entry.dimension_id], sch, sid)
                )
    out = []
    for r in rows:
        v = verdicts.get(r.dimension_id) or []
        out.append(metrics.AlignmentRow(r.dimension_id, r.lcc, r.srcc, r.mse_norm, r.n,
                                        metrics.rsc_aggregate(v) if v else None))
    return out


def cmd_metrics(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    if args.rows:
        rows = metrics.rows_from_json(Path(args.rows).read_text(encoding="utf-8"))
    else:
        if not (args.reports and args.manifest):
            raise ValidationError("metrics needs --reports and --manifest (or --rows)")
        manifest = dataset.load_manifest(args.manifest, sch)
        reports = load_reports(args.reports, sch)
        gts = {r.id: r.gt_scores(args.label_source) for r in manifest.records}
        rows = metrics.alignment_table(reports, gts, sch)
        if args.rsc:
            ep = cfg.endpoint(args.verifier, args.verifier_url, args.verifier_model)
            cache_dir = Path(args.cache_dir) if args.cache_dir else cfg.cache_dir
            with JudgeClient(ep, cache_dir=cache_dir) as client:
                rows = _rsc_rows(rows, reports, gts, client, sch)
    undefined = [r.dimension_id for r in rows if not r.defined]
    averages = None
    if undefined:
        log.warning("metrics undefined for dimensions %s; layer averages omitted", undefined)
    else:
        averages = metrics.layer_averages(rows, sch)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.atomic_write_text(out.with_suffix(".json"), metrics.rows_to_json(rows, sch, averages))
    dataset.atomic_write_text(out.with_suffix(".csv"), metrics.rows_to_csv(rows, sch))
    text = metrics.rows_to_text(rows, sch, averages)
    dataset.atomic_write_text(out.with_suffix(".txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def _parse_system_arg(value: str) -> tuple[str, Path]:
    name, sep, path = value.partition("=")
    if not sep or not name or not path:
        raise ValidationError(f"--system expects NAME=REPORTS.jsonl, got {value!r}")
    return name, Path(path)


def cmd_profile(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    profiles = []
    for spec in args.system:
        name, path = _parse_system_arg(spec)
        reports = load_reports(path, sch)
        ids = sorted(reports)
        profiles.append(profile.system_profile(name, [reports[i] for i in ids], sch, ids))
    overrides = {}
    if args.flags_override:
        text = Path(args.flags_override).read_text(encoding="utf-8")
        overrides = (json.loads(text) if args.flags_override.endswith(".json") else yaml.safe_load(text)) or {}
    profiles = profile.assign_flags(profiles, overrides=overrides)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    suffix = {"markdown": ".md", "json": ".json", "csv": ".csv"}
    for fmt in args.format:
        dataset.atomic_write_text(out.with_suffix(suffix[fmt]), profile.render_report(profiles, fmt, sch))
    sys.stdout.write(profile.render_report(profiles, "markdown", sch))
    return EXIT_OK


def cmd_gold_set(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    manifest = dataset.load_manifest(args.manifest, sch)
    seed = args.seed if args.seed is not None else cfg.seed
    gold = dataset.build_gold_set(manifest, args.n, args.ood_fraction, tuple(args.strata), seed,
                                  args.ood_system or None)
    gold = dataset.rebase_paths(gold, Path(args.out).parent)
    dataset.write_manifest(gold, args.out)
    n_ood = sum(1 for r in gold.records if r.distribution == "OOD")
    print(f"selected {len(gold)} records ({len(gold) - n_ood} ID, {n_ood} OOD) -> {args.out}")
    return EXIT_OK


def cmd_manifest_check(args, cfg: RunConfig) -> int:
    sch = cfg.schema()
    manifest = dataset.load_manifest(args.manifest, sch)
    dataset.validate_manifest(manifest, sch, check_audio=True)
    print(f"{args.manifest}: {len(manifest)} records OK")
    if args.against:
        other = dataset.load_manifest(args.against, sch)
        report = dataset.split_disjointness_check(other, manifest)
        print(json.dumps(report.to_dict(), indent=2))
        if not report.clean:
            log.error("manifests overlap: %d ids, %d audio payloads",
                      len(report.id_overlaps), len(report.digest_overlaps))
            return EXIT_VALIDATION
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS so a nested action parser does not reset values given before it
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="run config file (YAML or JSON): schema, cache_dir, endpoints, seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log debug output")

    parser = argparse.ArgumentParser(
        prog="speechdiag",
        description="Diagnostic evaluation harness for generative speech.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p_schema = sub.add_parser("schema", help="schema utilities", parents=[common])
    schema_sub = p_schema.add_subparsers(dest="schema_command", required=True, metavar="ACTION")
    p = schema_sub.add_parser("export", help="write the evaluation schema as JSON", parents=[common])
    p.add_argument("out", help="output path, or - for stdout")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_schema_export)

    p = sub.add_parser("synthesize", help="generate perturbed negatives from a manifest", parents=[common])
    p.add_argument("--manifest", required=True, help="source manifest (JSONL)")
    p.add_argument("--synth-config", dest="config_file", required=True,
                   help="perturbation config: quotas, params, reuse_sources, seed")
    p.add_argument("--seed", type=int, help="random seed (overrides config files)")
    p.add_argument("--out", required=True, help="output directory for audio and manifest_delta.jsonl")
    p.add_argument("--workers", type=int, default=1, help="parallel worker threads")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="score manifest samples with a judge endpoint", parents=[common])
    p.add_argument("--manifest", required=True, help="manifest of samples to score")
    p.add_argument("--endpoint", help="endpoint name from the config file")
    p.add_argument("--base-url", help="endpoint base URL (instead of a configured endpoint)")
    p.add_argument("--model", help="model name sent with --base-url")
    p.add_argument("--mode", default="single-pass",
                   help="single-pass, scores-only, dimension-wise or dimension-wise:<id>")
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--out", required=True, help="output reports JSONL")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("metrics", help="alignment table and layer averages", parents=[common])
    p.add_argument("--reports", help="reports JSONL from evaluate")
    p.add_argument("--manifest", help="manifest holding ground-truth labels")
    p.add_argument("--rows", help="existing alignment JSON; recompute layer averages only")
    p.add_argument("--label-source", action="append", default=None,
                   help="label sources used as ground truth (repeatable; default expert and synthetic)")
    p.add_argument("--rsc", action="store_true", help="also verify rationales and add an RSC column")
    p.add_argument("--verifier", help="verifier endpoint name from the config file")
    p.add_argument("--verifier-url", help="verifier base URL")
    p.add_argument("--verifier-model", help="verifier model name")
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--out", required=True, help="output path prefix (.json, .csv, .txt)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("profile", help="per-system profiles and diagnostic flags", parents=[common])
    p.add_argument("--system", action="append", required=True, metavar="NAME=REPORTS",
                   help="system name and its reports JSONL (repeatable)")
    p.add_argument("--flags-override", help="YAML/JSON mapping of system name to flag")
    p.add_argument("--format", action="append", choices=["markdown", "json", "csv"], default=None,
                   help="report formats to write (repeatable; default all)")
    p.add_argument("--out", required=True, help="output path prefix (.md, .json, .csv)")
    p.set_defaults(func=cmd_profile)

    p_gold = sub.add_parser("gold-set", help="gold test set utilities", parents=[common])
    gold_sub = p_gold.add_subparsers(dest="gold_command", required=True, metavar="ACTION")
    p = gold_sub.add_parser("build", help="stratified test-set selection with OOD share", parents=[common])
    p.add_argument("--manifest", required=True, help="candidate pool manifest")
    p.add_argument("--n", type=int, required=True, help="number of records to select")
    p.add_argument("--ood-fraction", type=float, default=0.2, help="share of OOD records")
    p.add_argument("--ood-system", action="append",
                   help="source_system treated as OOD (repeatable; default: use record tags)")
    p.add_argument("--strata", nargs="+", default=["source_system", "text_domain"],
                   help="record fields that define strata")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", required=True, help="output manifest")
    p.set_defaults(func=cmd_gold_set)

    p_man = sub.add_parser("manifest", help="manifest utilities", parents=[common])
    man_sub = p_man.add_subparsers(dest="manifest_command", required=True, metavar="ACTION")
    p = man_sub.add_parser("check", help="validate a manifest and optionally test disjointness",
                           parents=[common])
    p.add_argument("--manifest", required=True, help="manifest to validate")
    p.add_argument("--against", help="training manifest that must not overlap")
    p.set_defaults(func=cmd_manifest_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "format", None) is None and args.command == "profile":
        args.format = ["markdown", "json", "csv"]
    if getattr(args, "label_source", "unset") is None:
        args.label_source = ["expert", "synthetic"]
    try:
        cfg = RunConfig.load(getattr(args, "config", None))
        return args.func(args, cfg)
    except HarnessError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
