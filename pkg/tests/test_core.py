import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klayer.core import (
    Params,
    RadialGrid,
    RadialProfile,
    SteadyState,
    ball_volume,
    integrate_radial,
    interpolate_monotone,
    make_graded_grid,
    refine_grid,
    unit_sphere_area,
)
from klayer.errors import NoCrossingError


def uniform_grid(R, n, count):
    return make_graded_grid(R, n, 10.0 * R / (count - 1), count)


class TestParams:
    def test_valid(self):
        p = Params(epsilon=0.01, p=2, b=1, m=1, n=2)
        assert p.n == 2

    @pytest.mark.parametrize(
        "kw",
        [
            dict(epsilon=0.0),
            dict(epsilon=-1.0),
            dict(p=0.0),
            dict(b=-2.0),
            dict(m=0.0),
            dict(n=0),
            dict(n=1.5),
        ],
    )
    def test_invalid(self, kw):
        base = dict(epsilon=0.01, p=2, b=1, m=1, n=2)
        base.update(kw)
        with pytest.raises(ValueError):
            Params(**base)


def test_unit_sphere_area():
    assert unit_sphere_area(1) == pytest.approx(2.0, abs=1e-14)
    assert unit_sphere_area(2) == pytest.approx(2 * np.pi, abs=1e-14)
    assert unit_sphere_area(3) == pytest.approx(4 * np.pi, abs=1e-13)
    assert ball_volume(1.0, 3) == pytest.approx(4 * np.pi / 3, rel=1e-14)


class TestGradedGrid:
    def test_boundary_spacing_rule(self):
        g = make_graded_grid(1.0, 2, 0.1, 64)
        assert g.nodes[-1] - g.nodes[-2] == pytest.approx(0.01, abs=1e-15)

    def test_last_interval_example(self):
        g = make_graded_grid(2.0, 3, 0.02, 400)
        assert abs((g.nodes[-1] - g.nodes[-2]) - 0.002) <= 1e-12

    def test_layer_width_too_large(self):
        with pytest.raises(ValueError):
            make_graded_grid(1.0, 1, 1.1, 64)

    def test_count_too_small(self):
        with pytest.raises(ValueError):
            make_graded_grid(1.0, 1, 0.1, 15)

    def test_collapsing_interior_rejected(self):
        # boundary spacing times the interval count far exceeds R
        with pytest.raises(ValueError):
            make_graded_grid(1.0, 2, 0.5, 400)

    def test_endpoints_and_monotonicity(self):
        g = make_graded_grid(3.0, 1, 0.05, 200)
        assert g.nodes[0] == 0.0
        assert g.nodes[-1] == 3.0
        assert np.all(np.diff(g.nodes) > 0)

    def test_spacing_grows_inward(self):
        g = make_graded_grid(1.0, 2, 0.01, 100)
        h = np.diff(g.nodes)
        assert np.all(np.diff(h) < 0)  # spacings decrease toward R

    @settings(max_examples=40, deadline=None)
    @given(
        R=st.floats(0.5, 50.0),
        frac=st.floats(0.01, 0.4),
        count=st.integers(16, 800),
    )
    def test_spacing_rule_property(self, R, frac, count):
        layer = frac * R
        if (layer / 10.0) * (count - 1) > 0.9 * R:
            return  # grid would need shrinking spacings; rejected by design
        g = make_graded_grid(R, 2, layer, count)
        assert g.nodes[-1] - g.nodes[-2] == pytest.approx(layer / 10.0, rel=1e-12)
        assert np.all(np.diff(g.nodes) > 0)

    def test_refine_is_nested(self):
        g = make_graded_grid(1.0, 2, 0.1, 32)
        g2 = refine_grid(g)
        assert g2.count == 2 * g.count - 1
        assert np.array_equal(g2.nodes[::2], g.nodes)


class TestRadialGridValidation:
    def test_bad_first_node(self):
        with pytest.raises(ValueError):
            RadialGrid(R=1.0, nodes=np.array([0.1, 0.5, 1.0]), n=2)

    def test_not_increasing(self):
        with pytest.raises(ValueError):
            RadialGrid(R=1.0, nodes=np.array([0.0, 0.5, 0.5, 1.0]), n=2)

    def test_profile_shape_and_finiteness(self):
        g = uniform_grid(1.0, 2, 16)
        with pytest.raises(ValueError):
            RadialProfile(grid=g, values=np.ones(5))
        bad = np.ones(16)
        bad[3] = np.inf
        with pytest.raises(ValueError):
            RadialProfile(grid=g, values=bad)


class TestIntegrateRadial:
    def test_disk_area(self):
        g = uniform_grid(1.0, 2, 400)
        f = RadialProfile(g, np.ones(g.count))
        assert integrate_radial(f) == pytest.approx(np.pi, abs=1e-6)

    def test_ball_volume(self):
        g = uniform_grid(1.0, 3, 2000)
        f = RadialProfile(g, np.ones(g.count))
        assert integrate_radial(f) == pytest.approx(4 * np.pi / 3, abs=1e-6)

    def test_symmetric_interval(self):
        # omega_1 = 2 counts both ends of [-R, R]
        g = uniform_grid(1.0, 1, 400)
        f = RadialProfile(g, g.nodes.copy())
        assert integrate_radial(f) == pytest.approx(1.0, abs=1e-10)

    def test_second_order_convergence(self):
        errs = []
        for count in (101, 201, 401):
            g = uniform_grid(1.0, 3, count)
            f = RadialProfile(g, np.ones(g.count))
            errs.append(abs(integrate_radial(f) - 4 * np.pi / 3))
        order1 = np.log2(errs[0] / errs[1])
        order2 = np.log2(errs[1] / errs[2])
        assert order1 > 1.9 and order2 > 1.9


class TestInterpolateMonotone:
    def test_identity(self):
        g = uniform_grid(1.0, 1, 33)
        f = RadialProfile(g, g.nodes.copy())
        assert interpolate_monotone(f, 0.5) == pytest.approx(0.5, abs=1e-14)

    def test_node_hit_exact(self):
        g = RadialGrid(R=1.0, nodes=np.array([0.0, 0.5, 1.0]), n=1)
        f = RadialProfile(g, np.array([0.0, 0.25, 1.0]))  # r^2 sampled
        assert interpolate_monotone(f, 0.25) == 0.5

    def test_no_crossing(self):
        g = uniform_grid(1.0, 1, 17)
        f = RadialProfile(g, g.nodes.copy())  # range [0, 1]
        with pytest.raises(NoCrossingError):
            interpolate_monotone(f, 2.0)

    @settings(max_examples=60, deadline=None)
    @given(data=st.data())
    def test_node_roundtrip(self, data):
        count = data.draw(st.integers(8, 60))
        incs = data.draw(
            st.lists(st.floats(1e-3, 1.0), min_size=count - 1, max_size=count - 1)
        )
        vals = np.concatenate([[0.0], np.cumsum(incs)])
        nodes = np.linspace(0.0, 1.0, count)
        g = RadialGrid(R=1.0, nodes=nodes, n=1)
        f = RadialProfile(g, vals)
        i = data.draw(st.integers(0, count - 1))
        assert interpolate_monotone(f, vals[i]) == pytest.approx(nodes[i], abs=1e-12)


class TestSteadyStateInvariants:
    def test_positive_constants_required(self):
        g = uniform_grid(1.0, 2, 16)
        W = RadialProfile(g, np.ones(16))
        with pytest.raises(ValueError):
            SteadyState(W=W, U=W, amplitude=-1.0, lambda_eps=1.0, sigma=1.0)
