"""Annotation CSV parsing against a hand-written fixture.

The fixture mirrors a real VIA 2.x export: 7 columns, JSON-encoded
shape and attribute cells, one row per region.
"""

import numpy as np
import pytest

from sinusseg.data.via import (
    PolygonAnnotation,
    extract_file_metadata,
    parse_via_csv,
    parse_via_metadata,
)
from sinusseg.errors import (
    DegeneratePolygonError,
    EmptyAnnotationError,
    FormatError,
    RowError,
)

HEADER = "filename,file_size,file_attributes,region_count,region_id,region_shape_attributes,region_attributes"


def _write(tmp_path, rows, header=HEADER):
    path = tmp_path / "annotations.csv"
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


def _quote(obj: str) -> str:
    return '"' + obj.replace('"', '""') + '"'


def _row(filename, file_attrs, shape, region_attrs="{}", region_count=1, region_id=0):
    return ",".join([
        filename, "1024", _quote(file_attrs), str(region_count), str(region_id),
        _quote(shape), _quote(region_attrs),
    ])


FIXTURE_ROWS = [
    _row("scan_a.png", '{"age":"45","sex":"F","acquisition_date":"2021-03-04","disease_present":"true"}',
         '{"name":"polygon","all_points_x":[0,4,4,0],"all_points_y":[0,0,4,4]}',
         '{"side":"left"}'),
    _row("scan_a.png", '{"age":"45","sex":"F","acquisition_date":"2021-03-04","disease_present":"true"}',
         '{"name":"polygon","all_points_x":[6,9,6],"all_points_y":[6,6,9]}',
         '{"side":"right"}', region_count=2, region_id=1),
    _row("scan_b.png", '{"Age":"61","SEX":"M"}',
         '{"name":"polygon","all_points_x":[1,5,5,1],"all_points_y":[1,1,5,5]}'),
]


def test_fixture_parses_to_three_polygons(tmp_path):
    path = _write(tmp_path, FIXTURE_ROWS)
    anns = parse_via_csv(path)
    assert len(anns) == 3
    assert anns[0].image_id == "scan_a.png"
    assert anns[0].vertices == [(0, 0), (4, 0), (4, 4), (0, 4)]
    assert anns[0].region_attributes == {"side": "left"}
    assert len(anns[1].vertices) == 3
    assert anns[2].image_id == "scan_b.png"


def test_fixture_metadata_mapping(tmp_path):
    path = _write(tmp_path, FIXTURE_ROWS)
    meta = parse_via_metadata(path)
    assert meta["scan_a.png"] == {
        "age": 45,
        "sex": "F",
        "acquisition_date": "2021-03-04",
        "disease_present": True,
    }
    # keys matched case-insensitively, absent fields become None
    assert meta["scan_b.png"]["age"] == 61
    assert meta["scan_b.png"]["sex"] == "M"
    assert meta["scan_b.png"]["acquisition_date"] is None
    assert meta["scan_b.png"]["disease_present"] is None


def test_unparseable_metadata_values_become_none():
    meta = extract_file_metadata({"age": "forty", "disease_present": "maybe"})
    assert meta["age"] is None
    assert meta["disease_present"] is None


def test_non_polygon_region_skipped_with_warning(tmp_path, caplog):
    rows = [
        _row("a.png", "{}", '{"name":"circle","cx":10,"cy":10,"r":4}'),
        _row("a.png", "{}", '{"name":"polygon","all_points_x":[0,2,2],"all_points_y":[0,0,2]}',
             region_id=1),
    ]
    path = _write(tmp_path, rows)
    with caplog.at_level("WARNING"):
        anns = parse_via_csv(path)
    assert len(anns) == 1
    assert any("circle" in r.message for r in caplog.records)


def test_missing_column_names_the_column(tmp_path):
    bad_header = HEADER.replace(",region_shape_attributes", "")
    path = _write(tmp_path, [], header=bad_header)
    with pytest.raises(FormatError, match="region_shape_attributes"):
        parse_via_csv(path)


def test_malformed_json_reports_line_number(tmp_path):
    rows = [
        _row("a.png", "{}", '{"name":"polygon","all_points_x":[0,2,2],"all_points_y":[0,0,2]}'),
        _row("b.png", "{}", '{"name":"polygon", busted'),
    ]
    path = _write(tmp_path, rows)
    with pytest.raises(RowError) as err:
        parse_via_csv(path)
    assert err.value.line == 3  # header is line 1


def test_zero_polygons_is_an_error(tmp_path):
    rows = [_row("a.png", "{}", '{"name":"rect","x":0,"y":0,"width":5,"height":5}')]
    path = _write(tmp_path, rows)
    with pytest.raises(EmptyAnnotationError):
        parse_via_csv(path)


def test_two_vertex_polygon_rejected():
    with pytest.raises(DegeneratePolygonError):
        PolygonAnnotation(image_id="x", vertices=[(0, 0), (1, 1)])


def test_rows_without_geometry_are_ignored(tmp_path):
    rows = [
        ",".join(["empty.png", "10", '"{}"', "0", "0", '"{}"', '"{}"']),
        _row("a.png", "{}", '{"name":"polygon","all_points_x":[0,2,2],"all_points_y":[0,0,2]}'),
    ]
    path = _write(tmp_path, rows)
    assert len(parse_via_csv(path)) == 1
