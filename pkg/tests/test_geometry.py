import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from enclosure.geometry import (
    AxisBox,
    GeometryError,
    Point,
    SceneGeometry,
    Sphere,
    Union,
    broken_path_length,
    d_point,
    dist_sets,
    dist_sets_numeric,
    min_observation_time,
)

coords = st.floats(-5, 5, allow_nan=False)
vec = st.tuples(coords, coords, coords)


def _dense_boundary(shape, n):
    return shape.sample_boundary(n)


def _brute_dist(A, B, n=120):
    pa, pb = _dense_boundary(A, n), _dense_boundary(B, n)
    return float(cKDTree(pb).query(pa)[0].min())


class TestShapes:
    def test_sphere_sign(self):
        s = Sphere((1, 2, 3), 0.5)
        assert s.sdf(s.center) < 0
        assert s.sdf(np.array(s.center) + [1.0, 0, 0]) > 0

    def test_invalid(self):
        with pytest.raises(GeometryError):
            Sphere((0, 0, 0), 0.0)
        with pytest.raises(GeometryError):
            AxisBox((0, 0, 0), (1, 0, 1))
        with pytest.raises(GeometryError):
            Union(())

    def test_box_sdf_exact_outside(self):
        b = AxisBox((0, 0, 0), (1, 1, 1))
        assert b.sdf([2.0, 0.5, 0.5]) == pytest.approx(1.0)
        assert b.sdf([2.0, 2.0, 0.5]) == pytest.approx(np.sqrt(2.0))
        assert b.sdf([0.5, 0.5, 0.5]) == pytest.approx(-0.5)

    def test_union_overlap_flag(self):
        assert not Union((Sphere((-4, 0, 0), 1), Sphere((4, 0, 0), 1))).overlapping
        assert Union((Sphere((0, 0, 0), 1), Sphere((1, 0, 0), 1))).overlapping

    @given(vec, st.floats(0.1, 3))
    def test_sdf_sign_convention(self, c, r):
        s = Sphere(c, r)
        assert s.sdf(np.asarray(c)) < 0
        assert s.sdf(np.asarray(c) + [2 * r, 0, 0]) > 0


class TestDistances:
    def test_sphere_sphere(self):
        assert dist_sets(Sphere((0, 0, 0), 1), Sphere((5, 0, 0), 1)) == 3.0

    def test_identical(self):
        s = Sphere((0, 0, 0), 1)
        assert dist_sets(s, s) == 0.0

    def test_sphere_box_against_brute_force(self):
        A = Sphere((0, 0, 0), 1)
        B = AxisBox((2, -1, -1), (3, 1, 1))
        brute = _brute_dist(A, B, 160)
        assert brute == pytest.approx(1.0, abs=2e-3)
        assert dist_sets(A, B) == pytest.approx(1.0, abs=1e-12)
        val, bound = dist_sets_numeric(A, B)
        assert abs(val - 1.0) <= bound
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_box_box(self):
        a = AxisBox((0, 0, 0), (1, 1, 1))
        b = AxisBox((2, 3, 0.5), (4, 5, 2))
        assert dist_sets(a, b) == pytest.approx(np.hypot(1, 2))
        assert dist_sets_numeric(a, b)[0] == pytest.approx(np.hypot(1, 2), abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(vec, st.floats(0.1, 2), vec, st.floats(0.1, 2))
    def test_sphere_closed_form_matches_numeric(self, c1, r1, c2, r2):
        A, B = Sphere(c1, r1), Sphere(c2, r2)
        exact = max(0.0, np.linalg.norm(np.subtract(c1, c2)) - r1 - r2)
        assert dist_sets(A, B) == pytest.approx(exact, abs=1e-12)
        val, bound = dist_sets_numeric(A, B)
        assert val == pytest.approx(exact, abs=max(1e-6, 1e-3 * bound))

    def test_d_point_examples(self):
        s = Sphere((0, 0, 0), 1)
        assert d_point(s, (3, 0, 0)) == 2.0
        assert d_point(s, (0.2, 0.1, 0)) == 0.0
        u = Union((Sphere((-4, 0, 0), 1), Sphere((4, 0, 0), 1)))
        assert d_point(u, (0, 0, 0)) == 3.0

    @given(vec)
    def test_d_point_equals_point_shape_distance(self, p):
        for A in (Sphere((0.5, 0, 0), 1.2), AxisBox((-1, -1, 0), (1, 2, 1)),
                  Union((Sphere((-4, 0, 0), 1), AxisBox((2, 2, 2), (3, 3, 3))))):
            assert d_point(A, p) == pytest.approx(dist_sets(A, Point(p)), abs=1e-12)


class TestBrokenPath:
    def test_axis_example(self):
        B, D, Om = Sphere((6, 0, 0), 1), Sphere((0, 0, 0), 1), Sphere((0, 0, 0), 3)
        # axis-restricted: x=(5,0,0), y=(1,0,0), z=(3,0,0) -> 4 + 2
        val, bound = broken_path_length(B, D, Om)
        assert val == pytest.approx(6.0, abs=1e-7)
        # independent brute force over all three boundaries
        xb, yd, zo = B.sample_boundary(60), D.sample_boundary(60), Om.sample_boundary(60)
        legs = cKDTree(xb).query(yd)[0] + cKDTree(zo).query(yd)[0]
        assert legs.min() >= val - 1e-9
        assert legs.min() == pytest.approx(6.0, abs=0.1)

    def test_tangent_obstacle(self):
        B, D, Om = Sphere((6, 0, 0), 1), Sphere((2, 0, 0), 1), Sphere((0, 0, 0), 3)
        val, _ = broken_path_length(B, D, Om)
        assert val == pytest.approx(2.0, abs=1e-7)

    def test_union_obstacle(self):
        B, Om = Sphere((6, 0, 0), 0.5), Sphere((0, 0, 0), 3)
        D = Union((Sphere((1, 0, 0), 0.5), Sphere((-1, 0, 0), 0.5)))
        val, _ = broken_path_length(B, D, Om)
        assert val == pytest.approx(4.0 + 1.5, abs=1e-6)

    def test_observation_time_bound_random(self):
        rng = np.random.default_rng(1234)
        checked = 0
        while checked < 200:
            R = rng.uniform(2, 4)
            om = Sphere((0, 0, 0), R)
            rd = rng.uniform(0.2, 0.45 * R)
            cd = rng.normal(size=3)
            cd *= rng.uniform(0, R - rd - 0.05) / np.linalg.norm(cd)
            D = Sphere(tuple(cd), rd)
            rb = rng.uniform(0.2, 1.0)
            dirb = rng.normal(size=3)
            cb = dirb / np.linalg.norm(dirb) * (R + rb + rng.uniform(0.05, 3))
            B = Sphere(tuple(cb), rb)
            scale = np.linalg.norm(cb) + R
            lhs = min_observation_time(D, B, om)
            l, _ = broken_path_length(B, D, om, n=32)
            assert lhs >= l - 1e-6 * scale
            checked += 1


class TestObservationTime:
    def test_example(self):
        D, Om = Sphere((0, 0, 0), 1), Sphere((0, 0, 0), 3.5)
        B = Sphere((6, 0, 0), 0.5)
        assert dist_sets(D, B) == 4.5 and dist_sets(Om, B) == 2.0
        assert min_observation_time(D, B, Om) == pytest.approx(7.0)

    def test_touching_surface(self):
        D, Om, B = Sphere((0, 0, 0), 1), Sphere((0, 0, 0), 3), Sphere((4, 0, 0), 1)
        assert min_observation_time(D, B, Om) == pytest.approx(2 * dist_sets(D, B))

    def test_scene_validation(self):
        D, Om = Sphere((0, 0, 0), 1), Sphere((0, 0, 0), 3)
        SceneGeometry(D, Om, Sphere((6, 0, 0), 0.5)).validate(h=0.1)
        with pytest.raises(GeometryError):
            SceneGeometry(D, Om, Sphere((3.2, 0, 0), 0.5)).validate()
        with pytest.raises(GeometryError):
            SceneGeometry(Sphere((1.9, 0, 0), 1), Om, Sphere((6, 0, 0), 0.5)).validate(h=0.1)
