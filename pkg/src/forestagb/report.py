"""SVG scatter plots of predicted vs reference AGB.

Points and lines are drawn inside a group whose transform maps data units
(Mg/ha) to the page, so every ``cx``/``cy``/``x1``... attribute in the plot
group is a data value. A display cap clips values to ``cap`` at render time
only; the numbers stored elsewhere are never altered.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from xml.sax.saxutils import escape, unescape

import numpy as np

from .agreement import EvalPairs, GmfrLine, gmfr
from .errors import DegenerateInput

log = logging.getLogger(__name__)

PAIR_COLUMNS = ["model", "scale", "unit_id", "reference", "predicted"]

SIZE = 420
MARGIN = 60


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    mag = 10 ** math.floor(math.log10(v))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= v:
            return m * mag
    return 10 * mag


def _num(v: float) -> str:
    return format(float(v), ".6g")


def scatter_svg(ref, pred, title: str, line: GmfrLine | None = None, cap: float | None = None,
                meta: dict | None = None) -> str:
    """Predicted (x) against reference (y) with a solid red 1:1 line and a
    dashed GMFR line."""
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if cap is not None:
        ref = np.minimum(ref, cap)
        pred = np.minimum(pred, cap)
        hi = float(cap)
    else:
        hi = _nice_max(float(max(ref.max(initial=0.0), pred.max(initial=0.0))) * 1.02)
    lo = min(0.0, float(min(ref.min(initial=0.0), pred.min(initial=0.0))))
    span = hi - lo
    s = (SIZE - 2 * MARGIN) / span
    tx = MARGIN - lo * s
    ty = SIZE - MARGIN + lo * s
    r = span * 0.006
    md = dict(meta or {})
    md.update({"cap": cap, "axis_min": lo, "axis_max": hi, "n": int(ref.size)})
    if line is not None:
        md.update({"gmfr_slope": line.slope, "gmfr_intercept": line.intercept})
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f"<metadata>{escape(json.dumps(md, sort_keys=True))}</metadata>",
        f'<text x="{SIZE / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{SIZE / 2}" y="{SIZE - 14}" text-anchor="middle" font-size="12">'
        "Predicted AGB (Mg ha⁻¹)</text>",
        f'<text x="16" y="{SIZE / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {SIZE / 2})">Reference AGB (Mg ha⁻¹)</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE - 2 * MARGIN}" height="{SIZE - 2 * MARGIN}" '
        'fill="none" stroke="black"/>',
        f'<text x="{MARGIN}" y="{SIZE - MARGIN + 16}" font-size="10" text-anchor="middle">{_num(lo)}</text>',
        f'<text x="{SIZE - MARGIN}" y="{SIZE - MARGIN + 16}" font-size="10" text-anchor="middle">{_num(hi)}</text>',
        f'<text x="{MARGIN - 6}" y="{SIZE - MARGIN}" font-size="10" text-anchor="end">{_num(lo)}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" font-size="10" text-anchor="end">{_num(hi)}</text>',
        f'<g id="plot" transform="translate({_num(tx)} {_num(ty)}) scale({_num(s)} {_num(-s)})">',
    ]
    for x, y in zip(pred.tolist(), ref.tolist()):
        out.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" fill="#1f4e79" fill-opacity="0.6"/>')
    out.append(f'<line class="one-to-one" x1="{_num(lo)}" y1="{_num(lo)}" x2="{_num(hi)}" y2="{_num(hi)}" '
               'stroke="red" stroke-width="1.5" vector-effect="non-scaling-stroke"/>')
    if line is not None and math.isfinite(line.slope):
        seg = _clip_line(line, lo, hi)
        if seg is not None:
            (x1, y1), (x2, y2) = seg
            out.append(f'<line class="gmfr" x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
                       'stroke="black" stroke-width="1.5" stroke-dasharray="6 4" '
                       'vector-effect="non-scaling-stroke"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _clip_line(line: GmfrLine, lo: float, hi: float):
    """Segment of y = a + b x inside the square [lo, hi]^2, or None."""
    a, b = line.intercept, line.slope
    pts = []
    for x in (lo, hi):
        y = a + b * x
        if lo <= y <= hi:
            pts.append((x, y))
    if b != 0:
        for y in (lo, hi):
            x = (y - a) / b
            if lo < x < hi:
                pts.append((x, y))
    pts = sorted(set(pts))
    if len(pts) < 2:
        return None
    return pts[0], pts[-1]


def write_pairs(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for r in rows:
            w.writerow([r["model"], r["scale"], r["unit_id"], repr(float(r["reference"])),
                        repr(float(r["predicted"]))])


def read_pairs(path) -> dict:
    """{(model, scale): (reference array, predicted array)} in file order."""
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            key = (rec["model"], rec["scale"])
            groups.setdefault(key, ([], []))
            groups[key][0].append(float(rec["reference"]))
            groups[key][1].append(float(rec["predicted"]))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in groups.items()}


def emit_report(pairs_csv, out_dir, cap: float | None = None, scales=None) -> list[Path]:
    """One SVG per (model, scale) found in the pairs file. Requested scales
    that are missing are skipped with a log note."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = read_pairs(pairs_csv)
    if scales is not None:
        present = {s for _, s in groups}
        for s in scales:
            if s not in present:
                log.info("scale %s not in %s; skipped", s, pairs_csv)
        groups = {k: v for k, v in groups.items() if k[1] in set(scales)}
    written = []
    for (model, scale), (ref, pred) in sorted(groups.items()):
        try:
            line = gmfr(EvalPairs(ref, pred))
        except DegenerateInput:
            line = None
        svg = scatter_svg(ref, pred, f"{model} {scale}", line, cap, {"model": model, "scale": scale})
        name = f"scatter_{model}_{scale.replace(':', '-')}.svg"
        (out / name).write_text(svg, encoding="utf-8")
        written.append(out / name)
    return written


def svg_metadata(text: str) -> dict:
    start = text.index("<metadata>") + len("<metadata>")
    end = text.index("</metadata>")
    return json.loads(unescape(text[start:end]))
