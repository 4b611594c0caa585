"""Published reference numbers used as fixtures, plus report builders."""

import json

from speechdiag.dataset import atomic_write_text
from speechdiag.protocol import DiagnosisReport, PromptMode, ReportEntry, serialize_report

# Per-dimension alignment of the fine-tuned judge, dimensions 1..12.
TABLE1_LCC = [0.511, 0.815, 0.658, 0.701, 0.733, 0.759, 0.789, 0.806, 0.648, 0.618, 0.723, 0.841]
TABLE1_SRCC = [0.492, 0.826, 0.668, 0.712, 0.773, 0.752, 0.785, 0.794, 0.651, 0.620, 0.737, 0.838]
TABLE1_MSE = [0.073, 0.018, 0.057, 0.063, 0.039, 0.022, 0.038, 0.032, 0.027, 0.085, 0.023, 0.056]
FULL_ROW = (0.717, 0.721, 0.044)

# System profiles, dimensions 1..12, in published column order.
TABLE2 = {
    "F5-TTS": [4.843, 4.612, 4.595, 4.583, 4.508, 4.993, 4.916, 4.987, 1.187, 0.844, 0.114, 0.960],
    "CosyVoice 3": [4.850, 4.803, 4.700, 4.829, 4.590, 4.987, 4.900, 4.983, 1.390, 0.880, 0.735, 1.003],
    "MaskGCT": [4.797, 4.560, 4.550, 4.683, 4.393, 4.987, 4.867, 4.950, 0.990, 0.067, 0.190, 0.967],
    "Qwen3-TTS": [4.860, 4.750, 4.630, 4.783, 4.680, 4.993, 4.887, 4.973, 1.210, 0.890, 0.297, 0.990],
    "FireRedTTS-2": [4.809, 4.580, 4.611, 4.618, 4.458, 4.962, 4.683, 4.733, 1.191, 0.810, 0.266, 0.966],
    "IndexTTS2": [4.853, 4.697, 4.787, 4.767, 4.600, 4.993, 4.907, 4.983, 1.270, 1.033, 0.227, 1.043],
}
TABLE2_FLAGS = {
    "F5-TTS": "Stable but Flat",
    "CosyVoice 3": "Paralinguistic-Enhanced",
    "MaskGCT": "Prosody-Limited",
    "Qwen3-TTS": "Pronunciation-Accurate",
    "FireRedTTS-2": "Balanced",
    "IndexTTS2": "Highly Expressive",
}
# Published markers per dimension row: B = bold (best), U = underlined (second), . = plain.
TABLE2_MARKERS = [
    "...B.U", ".B.U..", ".U...B", ".B.U..", "...B.U", "BUUB.B",
    "B....U", "BU...U", ".B...U", "...U.B", ".B.U..", ".U...B",
]


def reports_with_means(means, n=1000, scales=None):
    """n complete reports whose per-dimension means equal ``means`` exactly at 3 dp.

    Each dimension mixes two adjacent integer levels; with n=1000 any
    3-dp mean inside the scale is reachable.
    """
    per_dim = []
    for did, m in enumerate(means, start=1):
        total = round(m * n)
        base = total // n
        high = total - base * n
        per_dim.append([base + 1] * high + [base] * (n - high))
    reports = []
    for i in range(n):
        # shift each column differently so reports are not all alike
        entries = tuple(ReportEntry(did, "", col[(i + 37 * did) % n]) for did, col in enumerate(per_dim, 1))
        reports.append(DiagnosisReport(entries, PromptMode.scores_only()))
    return reports


def write_reports_jsonl(path, reports, schema, prefix="s"):
    lines = []
    for i, r in enumerate(reports):
        lines.append(json.dumps({"sample_id": f"{prefix}{i:05d}", "mode": str(r.mode),
                                 "report": serialize_report(r, schema), "raw_text": "", "error": None},
                                sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")
