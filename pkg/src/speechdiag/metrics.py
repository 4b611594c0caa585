"""Alignment metrics between predicted and ground-truth scores.

LCC (Pearson), SRCC (Spearman on average ranks), range-normalized MSE, RSC,
and the per-layer averages used to summarize a 12-dimension table.
Correlations of a constant series are undefined and come back as ``None``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .schema import Layer, Schema, ScoreScale


class MetricError(ValidationError):
    pass


def _as_pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise MetricError(f"series lengths differ ({a.shape} vs {b.shape})")
    if a.size == 0:
        raise MetricError("series are empty")
    return a, b


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Pearson product-moment correlation, or None if either series is constant."""
    a, b = _as_pair(x, y)
    # test constancy exactly; a float mean of equal values can still round off them
    if np.all(a == a[0]) or np.all(b == b[0]):
        return None
    da = a - a.mean()
    db = b - b.mean()
    # np.sum uses pairwise summation; BLAS dot does not
    saa = float(np.sum(da * da))
    sbb = float(np.sum(db * db))
    if saa == 0.0 or sbb == 0.0:
        return None
    r = float(np.sum(da * db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they span."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    sorted_vals = a[order]
    ranks = np.empty(a.size, dtype=np.float64)
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], a.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    a, b = _as_pair(x, y)
    return pearson(average_ranks(a), average_ranks(b))


def mse_norm(pairs: Iterable[tuple[int, int]], scale: ScoreScale) -> float:
    """Mean of ((pred - gt) / (max - min))**2 over (pred, gt) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("mse_norm of an empty series")
    for p, g in pairs:
        if not (scale.contains(p) and scale.contains(g)):
            raise MetricError(f"pair ({p}, {g}) outside scale {scale.min}..{scale.max}")
    arr = np.asarray(pairs, dtype=np.float64)
    diff = (arr[:, 0] - arr[:, 1]) / scale.span
    return float(np.mean(np.square(diff)))


def rsc_aggregate(verdicts: Sequence) -> float:
    """Fraction of verdicts that support the ground-truth score."""
    if not verdicts:
        raise MetricError("rsc_aggregate of no verdicts")
    return sum(1 for v in verdicts if v.verdict == "Supports") / len(verdicts)


@dataclass(frozen=True)
class AlignmentRow:
    dimension_id: int
    lcc: Optional[float]
    srcc: Optional[float]
    mse_norm: Optional[float]
    n: int
    rsc: Optional[float] = None

    @property
    def defined(self) -> bool:
        return self.lcc is not None and self.srcc is not None and self.mse_norm is not None


def alignment_table(reports: Mapping[str, object], gts: Mapping[str, Mapping[int, int]],
                    schema: Schema) -> list[AlignmentRow]:
    """One row per schema dimension over samples that have both sides.

    ``reports`` maps sample id to a DiagnosisReport (or a plain
    ``{dimension_id: score}`` mapping); ``gts`` maps sample id to the
    ground-truth scores available for that sample.
    """
    pred_scores = {
        sid: (r.scores() if hasattr(r, "scores") else dict(r)) for sid, r in reports.items()
    }
    rows = []
    for did in schema.ids:
        pairs = []
        for sid in sorted(pred_scores):
            gt = gts.get(sid)
            if gt is None or did not in gt or did not in pred_scores[sid]:
                continue
            pairs.append((pred_scores[sid][did], gt[did]))
        if not pairs:
            rows.append(AlignmentRow(did, None, None, None, 0))
            continue
        pred = [p for p, _ in pairs]
        true = [g for _, g in pairs]
        rows.append(AlignmentRow(
            did,
            pearson(pred, true),
            spearman(pred, true),
            mse_norm(pairs, schema.scales[did]),
            len(pairs),
        ))
    return rows


@dataclass(frozen=True)
class LayerMetrics:
    lcc: float
    srcc: float
    mse_norm: float


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def layer_averages(rows: Sequence[AlignmentRow], schema: Schema) -> dict[str, LayerMetrics]:
    """Unweighted means over the basic rows, the advanced rows, and all rows."""
    by_dim = {r.dimension_id: r for r in rows}
    missing = [d for d in schema.ids if d not in by_dim]
    if missing:
        raise MetricError(f"alignment rows missing for dimensions {missing}")
    undefined = [d for d in schema.ids if not by_dim[d].defined]
    if undefined:
        raise MetricError(f"undefined metrics for dimensions {undefined}; cannot average")

    def avg(ids: list[int]) -> LayerMetrics:
        sel = [by_dim[d] for d in ids]
        return LayerMetrics(
            _mean([r.lcc for r in sel]),
            _mean([r.srcc for r in sel]),
            _mean([r.mse_norm for r in sel]),
        )

    return {
        "basic": avg(schema.layer_ids(Layer.BASIC)),
        "advanced": avg(schema.layer_ids(Layer.ADVANCED)),
        "overall": avg(schema.ids),
    }


# ---------------------------------------------------------------- rendering


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def rows_to_json(rows: Sequence[AlignmentRow], schema: Schema,
                 averages: Optional[Mapping[str, LayerMetrics]] = None) -> str:
    doc = {
        "schema_version": schema.version,
        "rows": [{"dimension": schema.dimension(r.dimension_id).name, **asdict(r)} for r in rows],
    }
    if averages is not None:
        doc["layer_averages"] = {k: asdict(v) for k, v in averages.items()}
    return json.dumps(doc, indent=2) + "\n"


def rows_from_json(text: str) -> list[AlignmentRow]:
    doc = json.loads(text)
    rows = doc["rows"] if isinstance(doc, dict) else doc
    return [
        AlignmentRow(int(r["dimension_id"]), r.get("lcc"), r.get("srcc"), r.get("mse_norm"),
                     int(r.get("n", 0)), r.get("rsc"))
        for r in rows
    ]


def rows_to_csv(rows: Sequence[AlignmentRow], schema: Schema) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    with_rsc = any(r.rsc is not None for r in rows)
    w.writerow(["dimension_id", "dimension", "lcc", "srcc", "mse_norm", "n"] + (["rsc"] if with_rsc else []))
    for r in rows:
        vals = ["" if v is None else repr(v) for v in (r.lcc, r.srcc, r.mse_norm)]
        extra = ["" if r.rsc is None else repr(r.rsc)] if with_rsc else []
        w.writerow([r.dimension_id, schema.dimension(r.dimension_id).name, *vals, r.n, *extra])
    return buf.getvalue()


def rows_to_text(rows: Sequence[AlignmentRow], schema: Schema,
                 averages: Optional[Mapping[str, LayerMetrics]] = None) -> str:
    with_rsc = any(r.rsc is not None for r in rows)
    header = ["Dimension", "LCC", "SRCC", "MSE_norm", "n"] + (["RSC"] if with_rsc else [])
    table = []
    for r in rows:
        line = [schema.dimension(r.dimension_id).name, _fmt(r.lcc), _fmt(r.srcc), _fmt(r.mse_norm), str(r.n)]
        if with_rsc:
            line.append(_fmt(r.rsc))
        table.append(line)
    if averages is not None:
        for name, m in averages.items():
            line = [f"[{name}]", _fmt(m.lcc), _fmt(m.srcc), _fmt(m.mse_norm), ""]
            if with_rsc:
                line.append("")
            table.append(line)
    widths = [max(len(header[i]), *(len(t[i]) for t in table)) for i in range(len(header))]
    out = []
    for line in [header] + table:
        cells = [line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"
