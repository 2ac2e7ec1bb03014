import numpy as np
import pytest
from hypothesis import given, strategies as st

from td3lab.diagnostics import SweepCurves
from td3lab.harness import Curve, aggregate
from td3lab.plotting import plot_bias, plot_summaries, plot_sweep, plot_tabular, smooth


class TestSmooth:
    @given(st.floats(-1e3, 1e3), st.integers(1, 20), st.integers(1, 9))
    def test_constant_is_fixed(self, c, n, w):
        np.testing.assert_allclose(smooth(np.full(n, c), w), c, rtol=1e-12, atol=1e-9)

    def test_window_one_is_identity(self):
        y = np.random.default_rng(0).normal(size=17)
        np.testing.assert_array_equal(smooth(y, 1), y)

    def test_interior_is_moving_average(self):
        y = np.arange(10.0) ** 2
        assert smooth(y, 3)[4] == pytest.approx((9 + 16 + 25) / 3)

    def test_does_not_modify_input(self):
        y = np.arange(5.0)
        smooth(y, 3)
        np.testing.assert_array_equal(y, np.arange(5.0))


def summary():
    steps = np.arange(0, 50, 10)
    return aggregate([Curve(steps, np.linspace(-100, -20, 5) + k, k, "h") for k in range(3)])


class TestFigures:
    def test_summary_svg_is_stable(self, tmp_path):
        plot_summaries({"td3": summary()}, tmp_path / "a.svg", title="t", window=2)
        plot_summaries({"td3": summary()}, tmp_path / "b.svg", title="t", window=2)
        a = (tmp_path / "a.svg").read_bytes()
        assert a.startswith(b"<?xml") and a == (tmp_path / "b.svg").read_bytes()

    def test_single_seed_summary(self, tmp_path):
        s = aggregate([Curve(np.arange(3), np.ones(3), 0, "h")])
        plot_summaries({"x": s}, tmp_path / "one.svg")
        assert (tmp_path / "one.svg").stat().st_size > 0

    def test_other_figures(self, tmp_path):
        steps = np.arange(4)
        plot_bias({"td3": (steps, steps * 1.0, steps * 0.5)}, tmp_path / "bias.svg")
        sweep = SweepCurves([1.0, 0.1], steps, {1.0: np.ones((2, 4)), 0.1: np.zeros((2, 4))}, True)
        plot_sweep(sweep, tmp_path / "sweep.svg")
        plot_tabular({"q": (steps, steps * 0.1)}, tmp_path / "tab.svg")
        for name in ("bias.svg", "sweep.svg", "tab.svg"):
            assert (tmp_path / name).read_bytes().startswith(b"<?xml")
