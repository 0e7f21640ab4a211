"""GeoJSON property joins and static SVG choropleths.

Maps use a plain equirectangular projection (x from longitude, y from
latitude) fitted into a fixed viewport. Output bytes depend only on the
inputs: coordinates are printed with fixed precision and features are drawn
in file order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ColumnTypeError, FormatError, ParameterError, RenderError

CLASS_COLORS = {
    "HH": "#d7191c",
    "LL": "#2c7bb6",
    "HL": "#fdae61",
    "LH": "#abd9e9",
    "NS": "#eeeeee",
    "ISOLATE": "#999999",
}
# 9-class sequential ramp (light to dark); fewer classes take evenly spaced picks
SEQUENTIAL = ("#ffffcc", "#ffeda0", "#fed976", "#feb24c", "#fd8d3c",
              "#fc4e2a", "#e31a1c", "#bd0026", "#800026")
NO_DATA_COLOR = "#ffffff"


# -- joins ------------------------------------------------------------------------------


def load_geojson(path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    _check_collection(doc, path)
    return doc


def _check_collection(doc, where="geometry"):
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise FormatError(f"{where}: expected a GeoJSON FeatureCollection")
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if "fips" not in props:
            raise FormatError(f"{where}: feature {k} has no fips property")


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.str_):
        return str(v)
    return v


def read_csv_table(path, key: str = "fips") -> dict[str, dict]:
    """Rows of a CSV keyed by ``key``; numeric-looking cells become floats."""
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or key not in reader.fieldnames:
            raise FormatError(f"{path}: no {key!r} column")
        for row in reader:
            rec = {}
            for col, cell in row.items():
                if col == key:
                    continue
                try:
                    rec[col] = float(cell) if cell != "" else None
                except ValueError:
                    rec[col] = cell
            out[row[key]] = rec
    return out


def columns_to_rows(fips: Sequence[str], **columns) -> dict[str, dict]:
    """Build a join table from parallel column vectors."""
    return {code: {name: _json_value(col[i]) for name, col in columns.items()}
            for i, code in enumerate(fips)}


@dataclass(frozen=True)
class JoinResult:
    geojson: dict
    unmatched: tuple[str, ...]

    @property
    def warning_count(self) -> int:
        return len(self.unmatched)


def export_geojson(geometry: dict, table: Mapping[str, Mapping]) -> JoinResult:
    """Join per-county columns into feature properties.

    Features whose fips is absent from ``table`` get every joined column set
    to null and are counted in ``unmatched``. The input is not modified.
    """
    _check_collection(geometry)
    columns: list[str] = []
    for rec in table.values():
        for c in rec:
            if c not in columns and c != "fips":
                columns.append(c)
    features, unmatched = [], []
    for feat in geometry.get("features", []):
        props = dict(feat.get("properties") or {})
        code = str(props["fips"])
        rec = table.get(code)
        if rec is None:
            unmatched.append(code)
        for c in columns:
            props[c] = _json_value(rec.get(c)) if rec is not None else None
        features.append({"type": "Feature", "properties": props, "geometry": feat.get("geometry")})
    doc = {"type": "FeatureCollection", "features": features}
    return JoinResult(doc, tuple(unmatched))


def write_geojson(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


# -- rendering ----------------------------------------------------------------------------


def _rings(geometry):
    if not geometry:
        return []
    kind = geometry.get("type")
    coords = geometry.get("coordinates", [])
    if kind == "Polygon":
        return [ring for ring in coords]
    if kind == "MultiPolygon":
        return [ring for poly in coords for ring in poly]
    raise RenderError(f"unsupported geometry type {kind!r}")


def quantile_breaks(values, n_classes: int = 5) -> np.ndarray:
    """Unique interior quantile cut points (empty for a constant column)."""
    v = np.asarray(values, dtype=float)
    cuts = np.unique(np.quantile(v, np.arange(1, n_classes) / n_classes))
    return cuts[cuts < v.max()]


def _numeric(values, column):
    out = []
    for v in values:
        if v is None:
            out.append(np.nan)
        elif isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
            raise ColumnTypeError(f"column {column!r} holds non-numeric value {v!r}")
        else:
            out.append(float(v))
    return np.array(out)


def _fmt_num(x):
    return f"{x:.4g}"


def _legend_numeric(breaks, present, vmin, vmax):
    edges = [vmin, *breaks, vmax]
    colors = _ramp(len(breaks) + 1)
    items = []
    for k in present:
        lo, hi = edges[k], edges[k + 1]
        label = _fmt_num(lo) if lo == hi else f"{_fmt_num(lo)} to {_fmt_num(hi)}"
        items.append((label, colors[k]))
    return items


def _ramp(n):
    if n == 1:
        return [SEQUENTIAL[4]]
    idx = np.round(np.linspace(0, len(SEQUENTIAL) - 1, n)).astype(int)
    return [SEQUENTIAL[i] for i in idx]


def render_choropleth_svg(geojson: dict, column: str, breaks="auto", n_classes: int = 5,
                          width: int = 960, height: int = 600, title: str | None = None,
                          path=None) -> str:
    """Draw ``column`` as a choropleth and return the SVG text.

    ``breaks`` is ``"auto"`` (class colors for HH/LL/HL/LH/NS/ISOLATE
    labels, quantiles otherwise), ``"class"``, ``"quantile"`` or an explicit
    increasing list of cut points. The legend lists only classes that occur.
    Null values are drawn white and listed as "no data".
    """
    _check_collection(geojson)
    feats = [f for f in geojson.get("features", []) if _rings(f.get("geometry"))]
    if not feats:
        raise RenderError("nothing to draw: empty geometry set")
    if not 1 <= n_classes <= len(SEQUENTIAL):
        raise ParameterError(f"n_classes must be in 1..{len(SEQUENTIAL)}")
    raw = [(f.get("properties") or {}).get(column) for f in feats]
    if all(v is None for v in raw) and column not in (feats[0].get("properties") or {}):
        raise FormatError(f"features have no {column!r} property")

    mode = breaks
    if isinstance(breaks, str) and breaks == "auto":
        labels = {v for v in raw if v is not None}
        mode = "class" if labels and all(isinstance(v, str) for v in labels) else "quantile"
    fills, legend = [], []
    if isinstance(mode, str) and mode == "class":
        bad = {v for v in raw if v is not None and v not in CLASS_COLORS}
        if bad:
            raise ColumnTypeError(f"column {column!r} has unknown class labels {sorted(map(str, bad))}")
        fills = [CLASS_COLORS[v] if v is not None else NO_DATA_COLOR for v in raw]
        legend = [(c, CLASS_COLORS[c]) for c in CLASS_COLORS if c in set(raw)]
    else:
        values = _numeric(raw, column)
        finite = values[~np.isnan(values)]
        if len(finite) == 0:
            raise RenderError(f"column {column!r} has no numeric values")
        if isinstance(mode, str):
            if mode != "quantile":
                raise ParameterError(f"unknown breaks mode {mode!r}")
            cuts = quantile_breaks(finite, n_classes)
        else:
            cuts = np.asarray(mode, dtype=float)
            if np.any(np.diff(cuts) <= 0):
                raise ParameterError("explicit breaks must be strictly increasing")
        colors = _ramp(len(cuts) + 1)
        cls = np.searchsorted(cuts, values, side="left")
        fills = [NO_DATA_COLOR if np.isnan(v) else colors[k] for v, k in zip(values, cls)]
        present = sorted({int(k) for v, k in zip(values, cls) if not np.isnan(v)})
        legend = _legend_numeric(list(cuts), present, float(finite.min()), float(finite.max()))
    if any(v is None for v in raw):
        legend.append(("no data", NO_DATA_COLOR))

    svg = _svg(feats, fills, legend, width, height, title or column)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    return svg


def _svg(feats, fills, legend, width, height, title):
    margin = 10.0
    legend_w = 170.0
    pts = np.array([pt[:2] for f in feats for ring in _rings(f["geometry"]) for pt in ring], dtype=float)
    lon0, lat0 = pts.min(axis=0)
    lon1, lat1 = pts.max(axis=0)
    span_x = max(lon1 - lon0, 1e-12)
    span_y = max(lat1 - lat0, 1e-12)
    scale = min((width - legend_w - 2 * margin) / span_x, (height - 2 * margin - 20) / span_y)

    def xy(pt):
        return f"{margin + (pt[0] - lon0) * scale:.2f},{margin + 20 + (lat1 - pt[1]) * scale:.2f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{escape(str(title))}</title>',
        f'<text x="{margin:.0f}" y="16" font-family="sans-serif" font-size="14">{escape(str(title))}</text>',
        '<g id="map" stroke="#555555" stroke-width="0.3">',
    ]
    for f, fill in zip(feats, fills):
        d = " ".join("M" + " L".join(xy(pt) for pt in ring) + " Z" for ring in _rings(f["geometry"]))
        fips = escape(str(f["properties"]["fips"]), {'"': "&quot;"})
        out.append(f'<path data-fips="{fips}" fill="{fill}" fill-rule="evenodd" d="{d}"/>')
    out.append("</g>")
    lx = width - legend_w + margin
    out.append(f'<g id="legend" font-family="sans-serif" font-size="12">')
    for k, (label, color) in enumerate(legend):
        y = margin + 20 + 20 * k
        out.append(f'<rect x="{lx:.0f}" y="{y:.0f}" width="14" height="14" fill="{color}" '
                   f'stroke="#555555" stroke-width="0.5"/>')
        out.append(f'<text x="{lx + 20:.0f}" y="{y + 11:.0f}">{escape(label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
