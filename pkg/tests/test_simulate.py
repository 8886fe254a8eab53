import math

import numpy as np
import pytest

from rfslam.geometry import (
    SPEED_OF_LIGHT as C,
    Landmark,
    LandmarkKind,
    MeasNoise,
    Scenario,
    UEState,
    predict_measurements,
)
from rfslam.motion import ControlInput, MotionNoise
from rfslam.simulate import (
    ORIGIN_CLUTTER,
    GroundTruth,
    SimConfig,
    generate_ground_truth,
    generate_measurements,
    generate_trajectory,
)

V, PHI, DT = 22.22, math.pi / 10.0, 0.5
Q = np.diag([0.2**2, 0.2**2, 0.0035**2, (0.2 / C) ** 2])


def small_scenario(**kw):
    bs = Landmark(np.array([0.0, 0.0, 40.0]), LandmarkKind.BS)
    landmarks = (
        Landmark(np.array([200.0, 0.0, 40.0]), LandmarkKind.VA),
        Landmark(np.array([0.0, 99.0, 10.0]), LandmarkKind.SP),
    )
    return Scenario(bs=bs, landmarks=landmarks, **kw)


def make_cfg(seed=0, n_steps=5, noisy=True, **sc_kw):
    return SimConfig(
        scenario=small_scenario(**sc_kw),
        control=ControlInput(V, PHI),
        motion_noise=MotionNoise(Q, DT),
        n_steps=n_steps,
        seed=seed,
        initial_state=UEState(V / PHI, 0.0, math.pi / 2, 300.0 / C),
        noisy_trajectory=noisy,
    )


class TestTrajectory:
    def test_noiseless_circle(self):
        cfg = make_cfg(n_steps=41, noisy=False)
        states = generate_trajectory(cfg)
        radius = V / PHI
        for s in states:
            assert math.hypot(s.x, s.y) == pytest.approx(radius, abs=1e-9)
        # closes the full circle after 40 propagation steps
        assert states[-1].x == pytest.approx(states[0].x, abs=1e-6)
        assert states[-1].y == pytest.approx(states[0].y, abs=1e-6)

    def test_single_step_is_initial_state(self):
        cfg = make_cfg(n_steps=1)
        states = generate_trajectory(cfg)
        assert states == [cfg.initial_state]

    def test_same_seed_identical(self):
        a = generate_trajectory(make_cfg(seed=9))
        b = generate_trajectory(make_cfg(seed=9))
        assert all(x == y for x, y in zip(a, b))


class TestMeasurements:
    def test_noiseless_exhaustive_detection(self):
        tiny = MeasNoise(np.eye(5) * 1e-30)
        sc = small_scenario(p_detect=1.0, clutter_mean=0.0, meas_noise=tiny)
        s = UEState(0.0, 55.0, 0.5, 1e-6)  # SP at (0, 99) is 44 m away, in FoV
        rng = np.random.default_rng(0)
        Z, labels = generate_measurements(s, sc, rng)
        h, _ = predict_measurements(
            sc.landmark_positions(), sc.landmark_kinds(), s.as_array(), sc.ue_height, sc.bs.position
        )
        assert len(Z) == 3  # BS + VA + SP (SP within FoV here)
        order = np.argsort(Z[:, 0])
        np.testing.assert_allclose(Z[order], h[np.argsort(h[:, 0])], atol=1e-9)

    def test_zero_detection_zero_clutter(self):
        sc = small_scenario(p_detect=0.0, clutter_mean=0.0)
        rng = np.random.default_rng(0)
        Z, labels = generate_measurements(UEState(70.0, 0.0, 0.0, 0.0), sc, rng)
        assert Z.shape == (0, 5)
        assert labels.size == 0

    def test_clutter_statistics(self):
        sc = small_scenario(p_detect=0.0, clutter_mean=1.0)
        rng = np.random.default_rng(123)
        s = UEState(70.0, 0.0, 0.0, 0.0)
        counts = []
        for _ in range(100_000):
            Z, labels = generate_measurements(s, sc, rng)
            assert np.all(labels == ORIGIN_CLUTTER)
            counts.append(len(Z))
        assert 0.99 <= np.mean(counts) <= 1.01

    def test_expected_cardinality(self):
        sc = small_scenario(clutter_mean=1.0)
        s = UEState(0.0, 55.0, 0.0, 1e-6)  # SP at (0, 99) within 50 m FoV
        rng = np.random.default_rng(5)
        n = 20_000
        total = sum(len(generate_measurements(s, sc, rng)[0]) for _ in range(n))
        expected = 3 * 0.9 + 1.0
        assert total / n == pytest.approx(expected, rel=0.02)

    def test_point_target_at_most_one_per_landmark(self):
        sc = small_scenario(clutter_mean=0.5)
        rng = np.random.default_rng(11)
        s = UEState(0.0, 55.0, 0.3, 1e-6)
        for _ in range(500):
            _, labels = generate_measurements(s, sc, rng)
            non_clutter = labels[labels != ORIGIN_CLUTTER]
            assert len(np.unique(non_clutter)) == len(non_clutter)


class TestGroundTruth:
    def test_determinism(self):
        a = generate_ground_truth(make_cfg(seed=77))
        b = generate_ground_truth(make_cfg(seed=77))
        assert all(x == y for x, y in zip(a.states, b.states))
        for za, zb, la, lb in zip(
            a.measurement_sets, b.measurement_sets, a.origin_labels, b.origin_labels
        ):
            np.testing.assert_array_equal(za, zb)
            np.testing.assert_array_equal(la, lb)

    def test_lengths_match(self):
        gt = generate_ground_truth(make_cfg(n_steps=7))
        assert len(gt.states) == len(gt.measurement_sets) == len(gt.origin_labels) == 7

    def test_is_dataclass_container(self):
        assert isinstance(generate_ground_truth(make_cfg(n_steps=2)), GroundTruth)
