"""VIA 2.x CSV ingestion and polygon rasterization.

The VIA export is a 7-column CSV whose shape and attribute cells hold
embedded JSON. Only regions with shape name "polygon" are kept; other
shapes are skipped with a logged warning. Rasterization fills pixel
(i, j) when its center (j + 0.5, i + 0.5) lies inside the polygon under
the even-odd rule, so the result is deterministic and oracle-checkable.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegeneratePolygonError, EmptyAnnotationError, FormatError, RowError

log = logging.getLogger(__name__)

VIA_COLUMNS = (
    "filename",
    "file_size",
    "file_attributes",
    "region_count",
    "region_id",
    "region_shape_attributes",
    "region_attributes",
)

# file_attributes keys are matched case-insensitively against these aliases
_METADATA_ALIASES = {
    "age": ("age",),
    "sex": ("sex", "gender"),
    "acquisition_date": ("acquisition_date", "acquisition date", "date"),
    "disease_present": ("disease_present", "disease_presence", "disease presence", "disease"),
}

_TRUE_WORDS = {"1", "true", "yes", "y", "t"}
_FALSE_WORDS = {"0", "false", "no", "n", "f"}


@dataclass
class PolygonAnnotation:
    """One polygon region tied to an image, in pixel coordinates."""

    image_id: str
    vertices: list[tuple[float, float]]
    region_attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise DegeneratePolygonError(
                f"{self.image_id}: polygon needs >= 3 vertices, got {len(self.vertices)}"
            )


def _iter_via_rows(csv_path):
    """Yield (line_number, row_dict) for each data row, validating the header."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{csv_path}: empty file, no header row")
        missing = [c for c in VIA_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{csv_path}: missing VIA column(s): {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row


def _row_json(cell: str, line: int, column: str):
    if not cell or cell == "{}":
        return {}
    try:
        return json.loads(cell)
    except json.JSONDecodeError as exc:
        raise RowError(f"malformed JSON in column '{column}': {exc.msg}", line=line) from exc


def parse_via_csv(csv_path) -> list[PolygonAnnotation]:
    """Parse a VIA CSV export into polygon annotations.

    Raises FormatError when standard columns are missing, RowError (with
    the line number) on malformed embedded JSON, and EmptyAnnotationError
    when no polygon region survives.
    """
    annotations = []
    for line, row in _iter_via_rows(csv_path):
        shape = _row_json(row["region_shape_attributes"], line, "region_shape_attributes")
        if not shape:
            continue  # rows with region_count 0 carry no geometry
        name = shape.get("name")
        if name != "polygon":
            log.warning("%s line %d: skipping non-polygon region of shape %r", csv_path, line, name)
            continue
        xs, ys = shape.get("all_points_x"), shape.get("all_points_y")
        if xs is None or ys is None or len(xs) != len(ys):
            raise RowError("polygon region without matching all_points_x/all_points_y", line=line)
        attrs = _row_json(row["region_attributes"], line, "region_attributes")
        annotations.append(
            PolygonAnnotation(
                image_id=row["filename"],
                vertices=list(zip(map(float, xs), map(float, ys))),
                region_attributes={str(k): str(v) for k, v in attrs.items()},
            )
        )
    if not annotations:
        raise EmptyAnnotationError(f"{csv_path}: no polygon regions found")
    return annotations


def extract_file_metadata(file_attributes: dict) -> dict:
    """Normalize a VIA file_attributes dict into SampleRecord metadata.

    Keys are matched case-insensitively; anything missing or unparseable
    becomes None rather than an error.
    """
    lowered = {str(k).strip().lower(): v for k, v in file_attributes.items()}
    meta = {}
    for target, aliases in _METADATA_ALIASES.items():
        value = None
        for alias in aliases:
            if alias in lowered:
                value = lowered[alias]
                break
        meta[target] = _coerce_metadata(target, value)
    return meta


def _coerce_metadata(key, value):
    if value is None or value == "":
        return None
    if key == "age":
        try:
            return int(str(value).strip())
        except ValueError:
            return None
    if key == "disease_present":
        word = str(value).strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        return None
    return str(value).strip()


def parse_via_metadata(csv_path) -> dict[str, dict]:
    """Per-image metadata from the file_attributes column, keyed by filename."""
    meta = {}
    for line, row in _iter_via_rows(csv_path):
        attrs = _row_json(row["file_attributes"], line, "file_attributes")
        if row["filename"] not in meta or any(v is not None for v in extract_file_metadata(attrs).values()):
            meta[row["filename"]] = extract_file_metadata(attrs)
    return meta


def rasterize_polygon(poly: PolygonAnnotation, width: int, height: int) -> np.ndarray:
    """Rasterize one polygon to a {0,1} mask of the given size.

    Even-odd (crossing number) rule evaluated at pixel centers. Vertices
    outside [0, width] x [0, height] are clipped with a warning.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"mask size must be positive, got {width}x{height}")
    verts = np.asarray(poly.vertices, dtype=np.float64)
    if verts.shape[0] < 3:
        raise DegeneratePolygonError(
            f"{poly.image_id}: polygon needs >= 3 vertices, got {verts.shape[0]}"
        )
    clipped = np.clip(verts, [0.0, 0.0], [float(width), float(height)])
    if not np.array_equal(clipped, verts):
        log.warning("%s: clipped %d out-of-bounds vertices", poly.image_id,
                    int(np.any(clipped != verts, axis=1).sum()))
        verts = clipped

    px = np.arange(width, dtype=np.float64) + 0.5
    py = (np.arange(height, dtype=np.float64) + 0.5)[:, None]
    crossings = np.zeros((height, width), dtype=np.int64)
    x1, y1 = verts[:, 0], verts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        if ay == by:
            continue  # horizontal edges never cross the horizontal test ray
        straddles = (ay > py) != (by > py)
        x_at_ray = ax + (py - ay) * (bx - ax) / (by - ay)
        crossings += straddles & (px < x_at_ray)
    return (crossings % 2).astype(np.uint8)


def rasterize_annotations(annotations, width: int, height: int) -> np.ndarray:
    """Union of several polygons for one image."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for poly in annotations:
        mask |= rasterize_polygon(poly, width, height)
    return mask
