import math

import numpy as np
import pytest

from rfslam.geometry import (
    SPEED_OF_LIGHT as C,
    InvalidGeometryError,
    InvalidScenarioError,
    Landmark,
    LandmarkKind,
    MeasNoise,
    MeasVector,
    Scenario,
    UEState,
    detection_probability,
    invert_measurement,
    measurement_jacobian,
    predict_measurement,
    wrap_angle,
)


def make_scenario(landmarks=(), bs_pos=(0.0, 0.0, 0.0), ue_height=0.0, **kw):
    bs = Landmark(np.array(bs_pos), LandmarkKind.BS)
    return Scenario(bs=bs, landmarks=tuple(landmarks), ue_height=ue_height, **kw)


def reflect_across_wall(point, va_pos, bs_pos):
    """Mirror a point across the plane equidistant from BS and VA."""
    n = (va_pos - bs_pos) / np.linalg.norm(va_pos - bs_pos)
    mid = 0.5 * (va_pos + bs_pos)
    return point - 2.0 * np.dot(point - mid, n) * n


def image_source_oracle(va_pos, bs_pos, ue_pos, q):
    """Assert q is the specular reflection point of the BS->q->UE path."""
    # reflected path length equals the image distance
    path = np.linalg.norm(q - bs_pos) + np.linalg.norm(ue_pos - q)
    assert path == pytest.approx(np.linalg.norm(ue_pos - va_pos), rel=1e-12)
    # angle of incidence equals angle of reflection w.r.t. the wall normal
    n = (va_pos - bs_pos) / np.linalg.norm(va_pos - bs_pos)
    d_in = (q - bs_pos) / np.linalg.norm(q - bs_pos)
    d_out = (ue_pos - q) / np.linalg.norm(ue_pos - q)
    assert abs(abs(np.dot(d_in, n)) - abs(np.dot(d_out, n))) < 1e-12
    # q lies on the wall plane
    assert abs(np.dot(q - 0.5 * (va_pos + bs_pos), n)) < 1e-9


def random_state(rng):
    return UEState(
        rng.uniform(-80, 80),
        rng.uniform(-80, 80),
        rng.uniform(-math.pi, math.pi),
        rng.uniform(0, 2e-6),
    )


def random_landmark(rng, kind):
    pos = rng.uniform(-150, 150, size=3)
    pos[2] = rng.uniform(1.0, 60.0)
    return Landmark(pos, kind)


class TestWrapAngle:
    def test_range(self):
        a = np.linspace(-10, 10, 2001)
        w = wrap_angle(a)
        assert np.all(w > -math.pi) and np.all(w <= math.pi)
        np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
        np.testing.assert_allclose(np.sin(w), np.sin(a), atol=1e-12)

    def test_negative_pi_maps_to_pi(self):
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)


class TestTypes:
    def test_ue_state_wraps_heading(self):
        s = UEState(0, 0, 3 * math.pi, 0)
        assert s.heading == pytest.approx(math.pi)

    def test_ue_state_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            UEState(np.nan, 0, 0, 0)

    def test_meas_vector_invariants(self):
        with pytest.raises(ValueError):
            MeasVector(-1e-9, 0, 0, 0, 0)
        with pytest.raises(ValueError):
            MeasVector(0, -math.pi, 0, 0, 0)  # open lower bound on azimuth
        MeasVector(0, math.pi, 0.1, 0.0, -0.2)

    def test_meas_noise_validation(self):
        with pytest.raises(ValueError):
            MeasNoise(np.diag([1.0, 1.0, 1.0, 1.0, -1e-3]))
        R = np.diag([1.0, 2, 3, 4, 5.0])
        R_asym = R.copy()
        R_asym[0, 1] = 1e-3
        with pytest.raises(ValueError):
            MeasNoise(R_asym)

    def test_scenario_requires_single_bs(self):
        with pytest.raises(InvalidScenarioError):
            make_scenario(landmarks=[Landmark(np.ones(3), LandmarkKind.BS)])

    def test_clutter_intensity_matches_convention(self):
        sc = make_scenario(clutter_mean=1.0, max_range=200.0)
        # volume = (200 m as delay) * (2 pi)^2 * pi^2
        expected = 1.0 / ((200.0 / C) * (2 * math.pi) ** 2 * math.pi**2)
        assert sc.clutter_intensity == pytest.approx(expected, rel=1e-12)


class TestPredictMeasurement:
    def test_los_collinear(self):
        # BS at origin, UE at (100, 0, 0), zero heading and bias
        sc = make_scenario()
        s = UEState(100.0, 0.0, 0.0, 0.0)
        z = predict_measurement(sc.bs, s, sc)
        assert z.toa == pytest.approx(100.0 / C, rel=1e-12)
        assert (z.aod_az, z.aod_el) == (pytest.approx(0.0), pytest.approx(0.0))
        assert z.aoa_az == pytest.approx(math.pi)
        assert z.aoa_el == pytest.approx(0.0)

    def test_va_reflection_example(self):
        va = Landmark(np.array([0.0, -100.0, 0.0]), LandmarkKind.VA)
        sc = make_scenario(landmarks=[va])
        s = UEState(50.0, 0.0, 0.0, 0.0)
        z = predict_measurement(va, s, sc)
        assert z.toa == pytest.approx(math.sqrt(12500.0) / C, rel=1e-12)
        # independent image-source oracle fixes the reflection point
        q = np.array([25.0, -50.0, 0.0])
        image_source_oracle(va.position, sc.bs.position, np.array([50.0, 0.0, 0.0]), q)
        aod = q - sc.bs.position
        assert z.aod_az == pytest.approx(math.atan2(aod[1], aod[0]), rel=1e-12)
        assert z.aod_el == pytest.approx(0.0)
        # arrival comes from the image: direction VA -> UE
        assert z.aoa_az == pytest.approx(math.atan2(100.0, 50.0), rel=1e-12)

    def test_va_oracle_random(self):
        rng = np.random.default_rng(7)
        sc = make_scenario()
        for _ in range(50):
            va = random_landmark(rng, LandmarkKind.VA)
            s = random_state(rng)
            ue = np.array([s.x, s.y, 0.0])
            # skip configurations with the UE behind the wall
            n = va.position / np.linalg.norm(va.position)
            if np.dot(ue - 0.5 * va.position, n) >= -1e-6:
                continue
            z = predict_measurement(va, s, sc)
            # reconstruct q from the AOD ray and check the specular oracle
            d = np.array(
                [
                    math.cos(z.aod_el) * math.cos(z.aod_az),
                    math.cos(z.aod_el) * math.sin(z.aod_az),
                    math.sin(z.aod_el),
                ]
            )
            mid = 0.5 * va.position
            t = np.dot(mid, n) / np.dot(d, n)
            q = t * d
            image_source_oracle(va.position, sc.bs.position, ue, q)

    def test_sp_collinear_double_segment(self):
        sp = Landmark(np.array([10.0, 0.0, 0.0]), LandmarkKind.SP)
        sc = make_scenario(landmarks=[sp])
        s = UEState(20.0, 0.0, 0.0, 2e-9)
        z = predict_measurement(sp, s, sc)
        assert z.toa == pytest.approx(20.0 / C + 2e-9, rel=1e-12)

    def test_clock_bias_shifts_only_toa(self):
        rng = np.random.default_rng(3)
        sc = make_scenario()
        for kind in (LandmarkKind.BS, LandmarkKind.VA, LandmarkKind.SP):
            lm = sc.bs if kind == LandmarkKind.BS else random_landmark(rng, kind)
            s0 = UEState(40.0, -30.0, 0.7, 0.0)
            s1 = UEState(40.0, -30.0, 0.7, 5e-9)
            z0 = predict_measurement(lm, s0, sc)
            z1 = predict_measurement(lm, s1, sc)
            assert z1.toa - z0.toa == pytest.approx(5e-9, rel=1e-9)
            np.testing.assert_allclose(z1.as_array()[1:], z0.as_array()[1:], atol=1e-15)

    def test_heading_rotation_moves_only_aoa_az(self):
        rng = np.random.default_rng(4)
        sc = make_scenario()
        for kind in (LandmarkKind.VA, LandmarkKind.SP):
            lm = random_landmark(rng, kind)
            delta = 0.4
            s0 = UEState(40.0, -30.0, 0.2, 1e-9)
            s1 = UEState(40.0, -30.0, 0.2 + delta, 1e-9)
            z0 = predict_measurement(lm, s0, sc)
            z1 = predict_measurement(lm, s1, sc)
            assert wrap_angle(z1.aoa_az - (z0.aoa_az - delta)) == pytest.approx(0.0, abs=1e-12)
            for name in ("toa", "aoa_el", "aod_az", "aod_el"):
                assert getattr(z1, name) == pytest.approx(getattr(z0, name), abs=1e-12)

    def test_ue_behind_wall_raises(self):
        va = Landmark(np.array([0.0, -100.0, 0.0]), LandmarkKind.VA)
        sc = make_scenario(landmarks=[va])
        with pytest.raises(InvalidGeometryError):
            predict_measurement(va, UEState(0.0, -80.0, 0.0, 0.0), sc)

    def test_degenerate_va_raises(self):
        va = Landmark(np.zeros(3), LandmarkKind.VA)
        sc = make_scenario()
        with pytest.raises(InvalidScenarioError):
            predict_measurement(va, UEState(10.0, 0.0, 0.0, 0.0), sc)

    def test_zero_range_raises(self):
        sp = Landmark(np.array([5.0, 5.0, 0.0]), LandmarkKind.SP)
        sc = make_scenario()
        with pytest.raises(InvalidGeometryError):
            predict_measurement(sp, UEState(5.0, 5.0, 0.0, 0.0), sc)


def fd_jacobian_landmark(lm, s, sc, h=1e-6):
    J = np.zeros((5, 3))
    for i in range(3):
        dp = np.zeros(3)
        dp[i] = h
        zp = predict_measurement(Landmark(lm.position + dp, lm.kind), s, sc).as_array()
        zm = predict_measurement(Landmark(lm.position - dp, lm.kind), s, sc).as_array()
        d = zp - zm
        d[1:] = wrap_angle(d[1:])
        J[:, i] = d / (2 * h)
    return J


def fd_jacobian_state(lm, s, sc, h=1e-6):
    J = np.zeros((5, 4))
    sv = s.as_array()
    steps = [h, h, h, 1e-12]
    for i in range(4):
        dp = np.zeros(4)
        dp[i] = steps[i]
        zp = predict_measurement(lm, UEState.from_array(sv + dp), sc).as_array()
        zm = predict_measurement(lm, UEState.from_array(sv - dp), sc).as_array()
        d = zp - zm
        d[1:] = wrap_angle(d[1:])
        J[:, i] = d / (2 * steps[i])
    return J


def assert_rows_close(J, J_fd, rel=1e-5):
    for r in range(J.shape[0]):
        scale = max(np.abs(J_fd[r]).max(), np.abs(J[r]).max(), 1e-12)
        np.testing.assert_allclose(J[r], J_fd[r], atol=rel * scale)


class TestJacobians:
    def test_sp_toa_row_is_unit_vector_sum(self):
        rng = np.random.default_rng(11)
        sp = random_landmark(rng, LandmarkKind.SP)
        s = random_state(rng)
        sc = make_scenario()
        J_lm, _ = measurement_jacobian(sp, s, sc)
        u = np.array([s.x, s.y, 0.0])
        expected = (
            sp.position / np.linalg.norm(sp.position)
            - (u - sp.position) / np.linalg.norm(u - sp.position)
        ) / C
        np.testing.assert_allclose(J_lm[0], expected, rtol=1e-12)

    def test_bias_column(self):
        sc = make_scenario()
        s = UEState(60.0, 10.0, 0.3, 1e-9)
        _, J_s = measurement_jacobian(sc.bs, s, sc)
        assert J_s[0, 3] == 1.0  # bias enters the TOA additively
        np.testing.assert_array_equal(J_s[1:, 3], np.zeros(4))  # angles are bias-free

    @pytest.mark.parametrize("kind", [LandmarkKind.BS, LandmarkKind.VA, LandmarkKind.SP])
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(int(kind) + 100)
        sc = make_scenario()
        checked = 0
        while checked < 100:
            lm = sc.bs if kind == LandmarkKind.BS else random_landmark(rng, kind)
            s = random_state(rng)
            try:
                J_lm, J_s = measurement_jacobian(lm, s, sc)
            except (InvalidGeometryError, InvalidScenarioError):
                continue
            assert_rows_close(J_lm, fd_jacobian_landmark(lm, s, sc))
            assert_rows_close(J_s, fd_jacobian_state(lm, s, sc))
            checked += 1


class TestDetectionProbability:
    def test_sp_fov_boundary(self):
        sc = make_scenario()
        s = UEState(0.0, 0.0, 0.0, 0.0)
        near = Landmark(np.array([49.9, 0.0, 10.0]), LandmarkKind.SP)
        far = Landmark(np.array([50.1, 0.0, 10.0]), LandmarkKind.SP)
        assert detection_probability(near, s, sc) == pytest.approx(0.9)
        assert detection_probability(far, s, sc) == 0.0

    def test_va_always_visible(self):
        sc = make_scenario()
        s = UEState(0.0, 0.0, 0.0, 0.0)
        va = Landmark(np.array([500.0, 500.0, 10.0]), LandmarkKind.VA)
        assert detection_probability(va, s, sc) == pytest.approx(0.9)
        assert detection_probability(sc.bs, s, sc) == pytest.approx(0.9)

    def test_fov_uses_horizontal_distance(self):
        sc = make_scenario()
        s = UEState(0.0, 0.0, 0.0, 0.0)
        tall = Landmark(np.array([49.0, 0.0, 500.0]), LandmarkKind.SP)
        assert detection_probability(tall, s, sc) == pytest.approx(0.9)


class TestInversion:
    @pytest.mark.parametrize("kind", [LandmarkKind.VA, LandmarkKind.SP])
    def test_roundtrip(self, kind):
        rng = np.random.default_rng(int(kind) + 5)
        sc = make_scenario()
        checked = 0
        while checked < 50:
            lm = random_landmark(rng, kind)
            s = random_state(rng)
            try:
                z = predict_measurement(lm, s, sc)
            except (InvalidGeometryError, InvalidScenarioError):
                continue
            pos = invert_measurement(z.as_array(), kind, s.as_array(), sc.ue_height, sc.bs.position)
            assert pos is not None
            np.testing.assert_allclose(pos, lm.position, atol=1e-6)
            checked += 1

    def test_infeasible_sp_returns_none(self):
        sc = make_scenario()
        s = UEState(100.0, 0.0, 0.0, 0.0)
        # total path shorter than the direct BS-UE distance is impossible
        z = np.array([50.0 / C, math.pi, 0.0, 0.0, 0.0])
        assert invert_measurement(z, LandmarkKind.SP, s.as_array(), 0.0, sc.bs.position) is None
