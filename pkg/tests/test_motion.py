import math

import numpy as np
import pytest

from rfslam.geometry import SPEED_OF_LIGHT as C, UEState, wrap_angle
from rfslam.motion import (
    ControlInput,
    MotionNoise,
    propagate_mean,
    sample_transition,
    sample_transition_array,
    transition_logpdf,
)

# simulation-study defaults
V, PHI, DT = 22.22, math.pi / 10.0, 0.5
Q = np.diag([0.2**2, 0.2**2, 0.0035**2, (0.2 / C) ** 2])


def paper_control():
    return ControlInput(V, PHI)


def paper_start():
    return UEState(V / PHI, 0.0, math.pi / 2, 300.0 / C)


class TestPropagateMean:
    def test_closed_form_step(self):
        s1 = propagate_mean(paper_start(), paper_control(), DT)
        chord = (2 * V / PHI) * math.sin(PHI * DT / 2)
        assert s1.x == pytest.approx(V / PHI + chord * math.cos(math.pi / 2 + PHI * DT / 2))
        assert s1.y == pytest.approx(chord * math.sin(math.pi / 2 + PHI * DT / 2))
        assert s1.heading == pytest.approx(math.pi / 2 + math.pi / 20)
        assert s1.clock_bias == pytest.approx(300.0 / C)

    def test_zero_speed(self):
        s = UEState(3.0, -4.0, 0.3, 1e-9)
        s1 = propagate_mean(s, ControlInput(0.0, PHI), DT)
        assert (s1.x, s1.y) == (3.0, -4.0)
        assert s1.heading == pytest.approx(0.3 + PHI * DT)
        assert s1.clock_bias == 1e-9

    def test_straight_line_limit(self):
        s = UEState(1.0, 2.0, 0.7, 0.0)
        turn = propagate_mean(s, ControlInput(V, 1e-12), DT)
        straight = UEState(1.0 + V * DT * math.cos(0.7), 2.0 + V * DT * math.sin(0.7), 0.7, 0.0)
        assert abs(turn.x - straight.x) < 1e-9
        assert abs(turn.y - straight.y) < 1e-9

    def test_continuity_at_threshold(self):
        # below the switch the straight-line limit is used exactly; the jump
        # across the switch is bounded by the first-order arc correction
        s = UEState(0.0, 0.0, -1.1, 0.0)
        below = propagate_mean(s, ControlInput(V, 0.999e-9), DT)
        straight = propagate_mean(s, ControlInput(V, 0.0), DT)
        assert (below.x, below.y) == (straight.x, straight.y)
        above = propagate_mean(s, ControlInput(V, 1.001e-9), DT)
        bound = V * DT**2 * 1.001e-9  # ~ v dt (phi dt / 2) lateral correction
        assert math.hypot(above.x - below.x, above.y - below.y) < bound

    def test_full_circle_closure(self):
        # 40 noiseless steps at the study controls complete one revolution
        s = paper_start()
        for _ in range(40):
            s = propagate_mean(s, paper_control(), DT)
        start = paper_start()
        assert abs(s.x - start.x) < 1e-6
        assert abs(s.y - start.y) < 1e-6
        assert wrap_angle(s.heading - start.heading) == pytest.approx(0.0, abs=1e-12)


class TestSampleTransition:
    def test_zero_noise_equals_mean(self):
        noise = MotionNoise(np.zeros((4, 4)), DT)
        rng = np.random.default_rng(0)
        s1 = sample_transition(paper_start(), paper_control(), noise, rng)
        assert s1 == propagate_mean(paper_start(), paper_control(), DT)

    def test_monte_carlo_moments(self):
        noise = MotionNoise(Q, DT)
        rng = np.random.default_rng(42)
        n = 100_000
        base = np.tile(paper_start().as_array(), (n, 1))
        samples = sample_transition_array(base, paper_control(), noise, rng)
        mean = propagate_mean(paper_start(), paper_control(), DT).as_array()
        err = samples.mean(axis=0) - mean
        tol = 4.0 * np.sqrt(np.diag(Q) / n)
        assert np.all(np.abs(err) <= tol)
        emp_cov = np.cov(samples.T)
        assert np.linalg.norm(emp_cov - Q) <= 0.05 * np.linalg.norm(Q)

    def test_rejects_non_psd(self):
        with pytest.raises(ValueError):
            MotionNoise(np.diag([1.0, 1.0, 1.0, -1e-6]), DT)

    def test_bias_is_random_walk(self):
        noise = MotionNoise(Q, DT)
        rng = np.random.default_rng(7)
        n = 200_000
        base = np.tile(paper_start().as_array(), (n, 1))
        samples = sample_transition_array(base, paper_control(), noise, rng)
        var = samples[:, 3].var()
        assert var == pytest.approx(Q[3, 3], rel=0.05)


class TestTransitionLogpdf:
    def test_zero_residual(self):
        noise = MotionNoise(Q, DT)
        prev = paper_start()
        nxt = propagate_mean(prev, paper_control(), DT)
        expected = -0.5 * (4 * math.log(2 * math.pi) + math.log(np.linalg.det(Q)))
        assert transition_logpdf(nxt, prev, paper_control(), noise) == pytest.approx(expected)

    def test_heading_wrap(self):
        noise = MotionNoise(Q, DT)
        prev = paper_start()
        nxt = propagate_mean(prev, paper_control(), DT)
        shifted = UEState(nxt.x, nxt.y, nxt.heading + 2 * math.pi, nxt.clock_bias)
        assert transition_logpdf(shifted, prev, paper_control(), noise) == pytest.approx(
            transition_logpdf(nxt, prev, paper_control(), noise)
        )

    def test_matches_dense_gaussian(self):
        noise = MotionNoise(Q, DT)
        rng = np.random.default_rng(3)
        prev = paper_start()
        mean = propagate_mean(prev, paper_control(), DT).as_array()
        r = rng.standard_normal(4) * np.sqrt(np.diag(Q))
        nxt = UEState.from_array(mean + r)
        lp = transition_logpdf(nxt, prev, paper_control(), noise)
        # independent dense evaluation
        diff = nxt.as_array() - mean
        ref = -0.5 * (
            diff @ np.linalg.solve(Q, diff)
            + math.log(np.linalg.det(Q))
            + 4 * math.log(2 * math.pi)
        )
        assert lp == pytest.approx(ref, rel=1e-12)

    def test_singular_q_rejected(self):
        noise = MotionNoise(np.diag([1.0, 1.0, 1.0, 0.0]), DT)
        with pytest.raises(ValueError):
            transition_logpdf(paper_start(), paper_start(), paper_control(), noise)
