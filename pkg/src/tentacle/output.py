"""Deterministic file emission: CSV, JSON, SVG and the run manifest."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path


def fmt(x) -> str:
    """Shortest round-trip decimal text for a number."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, int)) or (hasattr(x, "dtype") and x.dtype.kind in "iub"):
        return str(int(x))
    return repr(float(x))


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def svg_polylines(polylines, closed=None, strokes=None, width=600) -> str:
    """Polylines in the fixed view box [-1.1, 1.1]^2, y pointing up."""
    closed = closed or [False] * len(polylines)
    strokes = strokes or ["#000000"] * len(polylines)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{width}" '
        'viewBox="-1.1 -1.1 2.2 2.2">',
        '<g transform="scale(1,-1)" fill="none" stroke-width="0.006">',
    ]
    for pts, is_closed, color in zip(polylines, closed, strokes):
        coords = " ".join(f"{fmt(float(x))},{fmt(float(y))}" for x, y in pts)
        tag = "polygon" if is_closed else "polyline"
        out.append(f'<{tag} points="{coords}" stroke="{color}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def gray(level: float) -> str:
    """Hex gray, ``level`` 0 (light) .. 1 (black)."""
    v = int(round(200 * (1.0 - min(max(level, 0.0), 1.0))))
    return f"#{v:02x}{v:02x}{v:02x}"


class Writer:
    """Single writer for one run directory; records every file in the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = {}

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def manifest(self, extra=None) -> Path:
        entries = [{"path": k, "sha256": v} for k, v in sorted(self.files.items())]
        body = {"files": entries}
        if extra:
            body.update(extra)
        return self.write("manifest.json", json_text(body))
