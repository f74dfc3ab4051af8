"""JSON-lines trace files: one peak-mode CIR frame per line.

An optional first line ``{"meta": {...}}`` carries free-form metadata. Each
frame line is ``{"t": seconds, "peaks": [{"bin", "re", "im", "aod", "kind"}]}``
with an optional ``"path"`` label per peak that disambiguates several static
paths.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .channel import PEAK_KINDS, CirFrame, Peak
from .errors import TraceError, TraceOrderError


def frame_to_record(frame: CirFrame) -> dict:
    peaks = []
    for p in frame.peaks or []:
        rec = {
            "bin": int(p.delay_bin),
            "re": float(p.value.real),
            "im": float(p.value.imag),
            "aod": float(p.aod),
            "kind": p.kind,
        }
        if p.path is not None:
            rec["path"] = p.path
        peaks.append(rec)
    return {"t": float(frame.t), "peaks": peaks}


def write_trace(frames, path, meta=None) -> None:
    with open(path, "w") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}) + "\n")
        for frame in frames:
            fh.write(json.dumps(frame_to_record(frame)) + "\n")


def _parse_peak(rec, line):
    if not isinstance(rec, dict):
        raise TraceError("peak entry must be an object", line)
    try:
        b = rec["bin"]
        value = complex(float(rec["re"]), float(rec["im"]))
        aod = float(rec.get("aod", math.nan))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"bad peak entry: {exc}", line) from None
    if not isinstance(b, int) or isinstance(b, bool) or b < 0:
        raise TraceError(f"peak bin must be a non-negative integer, got {b!r}", line)
    kind = rec.get("kind", "unknown")
    if kind not in PEAK_KINDS:
        raise TraceError(f"unknown peak kind {kind!r}", line)
    label = rec.get("path")
    if label is not None and not isinstance(label, str):
        raise TraceError("peak path label must be a string", line)
    return Peak(b, value, aod, kind, label)


def read_trace(path):
    """Parse a trace file into ``(frames, meta)``.

    Raises :class:`TraceError` citing the 1-based line number of the first
    schema violation and :class:`TraceOrderError` when timestamps do not
    strictly increase.
    """
    frames, meta = [], {}
    last_t = -math.inf
    text = Path(path).read_text()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceError(f"invalid JSON ({exc.msg})", line_no) from None
        if not isinstance(rec, dict):
            raise TraceError("each line must be a JSON object", line_no)
        if "meta" in rec and not frames and not meta:
            meta = dict(rec["meta"])
            continue
        if "t" not in rec or "peaks" not in rec:
            raise TraceError("frame needs 't' and 'peaks'", line_no)
        try:
            t = float(rec["t"])
        except (TypeError, ValueError):
            raise TraceError(f"bad timestamp {rec['t']!r}", line_no) from None
        if not math.isfinite(t):
            raise TraceError("timestamp must be finite", line_no)
        if t <= last_t:
            raise TraceOrderError(f"timestamp {t} does not follow {last_t}", line_no)
        if not isinstance(rec["peaks"], list):
            raise TraceError("'peaks' must be a list", line_no)
        peaks = [_parse_peak(p, line_no) for p in rec["peaks"]]
        frames.append(CirFrame(t=t, peaks=peaks))
        last_t = t
    return frames, meta


# the harness-facing name
ingest_trace = read_trace
