import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pistonsim.geometry import (
    Arc,
    Container,
    GeometryError,
    Segment,
    _contains_many,
    first_hit,
    specular_reflect,
    subdomain_measure,
)


def test_square_measure(square):
    assert subdomain_measure(square, 1, 0.5) == 0.5


def test_stadium_measure(stadium):
    assert subdomain_measure(stadium, 1, 0.3) == pytest.approx(math.pi * 0.25 / 2 + 0.3, abs=1e-14)
    assert subdomain_measure(stadium, 1, 0.3) == pytest.approx(0.692699, abs=1e-6)


def test_box_measure(cube):
    assert subdomain_measure(cube, 2, 0.25) == pytest.approx(0.75, abs=1e-15)


def test_dome_measure_matches_cap_formula(domes):
    a, h = 0.45, 0.25
    R = (a * a + h * h) / (2 * h)
    cap = math.pi * h * h * (3 * R - h) / 3
    assert domes.subdomain_measure(1, 0.4) == pytest.approx(0.4 + cap, rel=1e-12)
    assert domes.subdomain_measure(2, 0.4) == pytest.approx(0.6 + cap, rel=1e-12)


def test_triangle_cap_matches_shoelace():
    cap = (Segment((0.0, 1.0), (-0.5, 0.5)), Segment((-0.5, 0.5), (0.0, 0.0)))
    c = Container(2, 1.0, cap)
    assert c.subdomain_measure(1, 0.2) == pytest.approx(0.25 + 0.2, abs=1e-15)
    # boundary: two legs + piston + two tube walls
    assert c.boundary_measure(1, 0.2) == pytest.approx(2 * math.sqrt(0.5) + 1.0 + 0.4, abs=1e-14)


@pytest.mark.parametrize("name", ["square", "stadium", "cube", "domes"])
def test_affine_measure_law(name, request):
    c = request.getfixturevalue(name)
    r = np.random.default_rng(1)
    for q, q2 in r.uniform(0, 1, size=(100, 2)):
        d1 = c.subdomain_measure(1, q2) - c.subdomain_measure(1, q)
        d2 = c.subdomain_measure(2, q2) - c.subdomain_measure(2, q)
        assert abs(d1 - c.ell * (q2 - q)) <= 1e-12
        assert abs(d2 + c.ell * (q2 - q)) <= 1e-12


def test_invalid_q_rejected(stadium):
    with pytest.raises(ValueError):
        stadium.subdomain_measure(1, 1.5)
    with pytest.raises(ValueError):
        stadium.subdomain_measure(3, 0.5)


def test_open_cap_rejected():
    with pytest.raises(GeometryError):
        Container(2, 1.0, (Segment((0.0, 1.0), (-0.5, 0.5)),))


def test_invalid_primitives_rejected():
    with pytest.raises(GeometryError):
        Segment((0.0, 0.0), (0.0, 0.0))
    with pytest.raises(GeometryError):
        Arc((0.0, 0.0), -1.0, 0.0, 1.0)


@pytest.mark.parametrize("name,side,q", [("stadium", 1, 0.6), ("domes", 2, 0.3)])
def test_measure_monte_carlo(name, side, q, request):
    c = request.getfixturevalue(name)
    lo, hi = c.bounding_box(side, q)
    n = 1_000_000
    pts = np.random.default_rng(7).uniform(lo, hi, size=(n, len(lo)))
    inside = _contains_many(*c.table(side, q).arrays(), pts)
    box = float(np.prod(np.asarray(hi) - np.asarray(lo)))
    p = inside.mean()
    est, se = box * p, box * math.sqrt(p * (1 - p) / n)
    assert abs(est - c.subdomain_measure(side, q)) < 3 * se


def test_first_hit_examples(square, stadium):
    h = first_hit(square, 1, 1.0, (0.5, 0.5), (1.0, 0.0))
    assert h.time == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(h.point, (1.0, 0.5), atol=1e-15)
    np.testing.assert_allclose(h.normal, (-1.0, 0.0), atol=1e-15)
    assert not h.singular

    d = np.array([1.0, 1.0]) / math.sqrt(2)
    h = first_hit(square, 1, 1.0, (0.5, 0.5), d)
    assert h.time == pytest.approx(0.5 * math.sqrt(2), abs=1e-12)
    np.testing.assert_allclose(h.point, (1.0, 1.0), atol=1e-12)
    assert h.singular

    h = first_hit(stadium, 1, 1.0, (0.2, 0.5), (-1.0, 0.0))
    assert h.time == pytest.approx(0.7, abs=1e-14)
    np.testing.assert_allclose(h.point, (-0.5, 0.5), atol=1e-14)
    np.testing.assert_allclose(h.normal, (1.0, 0.0), atol=1e-14)


def test_specular_examples():
    np.testing.assert_array_equal(specular_reflect((1.0, -1.0), (0.0, 1.0))[0], (1.0, 1.0))
    np.testing.assert_array_equal(specular_reflect((0.0, -3.0), (0.0, 1.0))[0], (0.0, 3.0))
    np.testing.assert_array_equal(specular_reflect((1.0, -1.0, 2.0), (0.0, 1.0, 0.0))[0], (1.0, 1.0, 2.0))
    assert specular_reflect((1.0, 0.0), (0.0, 1.0))[1]


unit = st.floats(0.0, 1.0, allow_nan=False)
_CONTAINERS = {"stadium": Container.stadium(1.0), "domes": Container.box_with_domes(), "cube": Container.box()}


def _interior(c, side, q, u):
    lo, hi = c.bounding_box(side, q)
    lo, hi = np.asarray(lo), np.asarray(hi)
    # shrink towards the tube centre so the start is well inside
    mid = np.array([0.5 * q if side == 1 else 0.5 * (1 + q), *(0.5 * np.asarray(hi[1:]))])
    p = mid + 0.3 * (np.asarray(u[: len(lo)]) - 0.5) * (hi - lo) * 0.5
    return p


@settings(max_examples=150, deadline=None)
@given(u=st.lists(unit, min_size=3, max_size=3), ang=st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3),
       name=st.sampled_from(["stadium", "domes", "cube"]), side=st.sampled_from([1, 2]))
def test_reflection_properties(u, ang, name, side):
    c = _CONTAINERS[name]
    q = 0.5
    p = _interior(c, side, q, u)
    d = np.asarray(ang[: c.dimension])
    if np.linalg.norm(d) < 1e-3:
        return
    d = d / np.linalg.norm(d)
    h = first_hit(c, side, q, p, d)
    if h.singular:
        return
    v2, grazing = specular_reflect(d, h.normal)
    assert not grazing
    assert abs(np.linalg.norm(v2) - 1.0) <= 1e-15 * 4
    assert float(v2 @ h.normal) == pytest.approx(-float(d @ h.normal), abs=1e-15)
    dv = v2 - d
    assert np.linalg.norm(np.cross(np.pad(dv, (0, 3 - len(dv))), np.pad(h.normal, (0, 3 - len(dv))))) <= 1e-14
    # a small step along the reflected ray lands inside; the next hit is ahead
    assert c.contains(side, q, h.point + 1e-7 * v2)
    h2 = first_hit(c, side, q, h.point, v2)
    assert h2.time > 0.0

