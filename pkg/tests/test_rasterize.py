import numpy as np
import pytest

from sinusseg.data.via import PolygonAnnotation, rasterize_annotations, rasterize_polygon
from sinusseg.errors import DegeneratePolygonError


def point_in_polygon(x, y, verts):
    """Even-odd crossing test for a single point, written independently."""
    inside = False
    n = len(verts)
    for i in range(n):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % n]
        if (ay > y) != (by > y):
            x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < x_cross:
                inside = not inside
    return inside


def oracle_mask(verts, width, height):
    out = np.zeros((height, width), dtype=np.uint8)
    for i in range(height):
        for j in range(width):
            if point_in_polygon(j + 0.5, i + 0.5, verts):
                out[i, j] = 1
    return out


def test_unit_square_example():
    poly = PolygonAnnotation("sq", [(0, 0), (2, 0), (2, 2), (0, 2)])
    mask = rasterize_polygon(poly, 4, 4)
    expected = np.zeros((4, 4), dtype=np.uint8)
    expected[0:2, 0:2] = 1
    assert np.array_equal(mask, expected)


def test_matches_oracle_on_random_polygons():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = rng.integers(3, 9)
        verts = [(float(x), float(y)) for x, y in rng.uniform(0, 32, size=(n, 2))]
        poly = PolygonAnnotation("r", verts)
        got = rasterize_polygon(poly, 32, 32)
        assert np.array_equal(got, oracle_mask(verts, 32, 32))


def test_polygon_covering_image_is_all_foreground():
    poly = PolygonAnnotation("all", [(0, 0), (16, 0), (16, 16), (0, 16)])
    assert rasterize_polygon(poly, 16, 16).all()


def test_two_vertices_rejected():
    with pytest.raises(DegeneratePolygonError):
        PolygonAnnotation("bad", [(0, 0), (3, 3)])
    # the rasterizer re-checks in case vertices were mutated after construction
    poly = PolygonAnnotation("ok", [(0, 0), (3, 0), (3, 3)])
    poly.vertices = poly.vertices[:2]
    with pytest.raises(DegeneratePolygonError):
        rasterize_polygon(poly, 8, 8)


def test_out_of_bounds_vertices_clipped_with_warning(caplog):
    poly = PolygonAnnotation("oob", [(-5, -5), (40, -5), (40, 40), (-5, 40)])
    with caplog.at_level("WARNING"):
        mask = rasterize_polygon(poly, 16, 16)
    assert mask.all()
    assert any("clip" in r.message for r in caplog.records)


def test_vertices_near_rasterized_foreground():
    # star-shaped polygons only: a self-intersecting outline under even-odd
    # fill can legitimately leave a crossing vertex far from any filled pixel
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 7))
        # jittered evenly spaced angles keep every vertex wedge wider than
        # ~0.4 * 2pi/n, so each vertex has covered pixels nearby
        base = 2.0 * np.pi * np.arange(n) / n
        theta = base + rng.uniform(-0.3, 0.3, size=n) * 2.0 * np.pi / n
        radius = rng.uniform(7.0, 12.0, size=n)
        verts = [(float(16.0 + r * np.cos(t)), float(16.0 + r * np.sin(t)))
                 for r, t in zip(radius, theta)]
        mask = rasterize_polygon(PolygonAnnotation("v", verts), 32, 32)
        assert mask.sum() > 0
        fg = np.argwhere(mask)
        for vx, vy in verts:
            i = min(max(int(round(vy)), 0), 31)
            j = min(max(int(round(vx)), 0), 31)
            dist = np.hypot(fg[:, 0] - i, fg[:, 1] - j).min()
            # an x/y convention bug would put this tens of pixels off
            assert dist <= 4.0


def test_union_of_annotations():
    a = PolygonAnnotation("u", [(0, 0), (2, 0), (2, 2), (0, 2)])
    b = PolygonAnnotation("u", [(4, 4), (6, 4), (6, 6), (4, 6)])
    mask = rasterize_annotations([a, b], 8, 8)
    assert mask.sum() == 8
    assert mask[0, 0] == 1 and mask[5, 5] == 1
