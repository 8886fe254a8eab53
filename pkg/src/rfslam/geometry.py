"""Domain types and the bistatic geometric measurement model.

A single base station (BS) with known location illuminates the scene; the
user equipment (UE) receives the line-of-sight path plus single-bounce paths
from reflecting surfaces and small scatterers.  Reflecting surfaces are
parameterized by virtual anchors (VA, the mirror image of the BS across the
surface); scatterers by their 3D location (SP).  Each propagation path maps
to a 5D channel-parameter vector

    h(x, s) = [toa, aoa_az, aoa_el, aod_az, aod_el]

with the clock bias of the UE entering the TOA additively.

Conventions (fixed here, used consistently by simulator and filters):
  * azimuth = atan2(dy, dx), elevation = atan2(dz, hypot(dx, dy));
  * AOD is the departure direction at the BS in the global frame
    (BS->UE for LOS, BS->reflection point for VA, BS->SP for SP);
  * AOA is expressed in the UE frame: global azimuth minus heading.
    For the LOS path it is the direction UE->BS; for VA/SP paths it is the
    propagation direction landmark->UE (the VA is the apparent source);
  * the UE frame is the global frame rotated by the heading about the
    vertical axis, so elevations are heading-independent;
  * all azimuth residuals must be wrapped into (-pi, pi] before any
    Gaussian evaluation (see wrap_angle).
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

SPEED_OF_LIGHT = 299792458.0  # m/s, exact

_TWO_PI = 2.0 * math.pi


class InvalidScenarioError(ValueError):
    """Scenario geometry that can never produce a valid path (e.g. VA == BS)."""


class InvalidGeometryError(ValueError):
    """State-dependent degenerate geometry (e.g. UE behind a reflecting wall)."""


class LandmarkKind(IntEnum):
    BS = 0
    VA = 1
    SP = 2


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), _TWO_PI)


@dataclass(frozen=True)
class UEState:
    """UE state: 2D position [m], heading [rad] and clock bias [s].

    The UE height is a scenario constant, not part of the state.  The heading
    is normalized into (-pi, pi] on construction.
    """

    x: float
    y: float
    heading: float
    clock_bias: float

    def __post_init__(self):
        vals = (self.x, self.y, self.heading, self.clock_bias)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"UEState fields must be finite, got {vals}")
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))

    def as_array(self):
        return np.array([self.x, self.y, self.heading, self.clock_bias])

    @staticmethod
    def from_array(v) -> "UEState":
        return UEState(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


@dataclass(frozen=True)
class Landmark:
    """A point landmark: 3D position plus an immutable type tag."""

    position: np.ndarray
    kind: LandmarkKind

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"landmark position must be finite, got {pos}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "kind", LandmarkKind(self.kind))


@dataclass(frozen=True)
class MeasVector:
    """One channel-parameter measurement: TOA [s] and four angles [rad]."""

    toa: float
    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("measurement entries must be finite")
        if self.toa < 0:
            raise ValueError(f"toa must be nonnegative, got {self.toa}")
        for name in ("aoa_az", "aod_az"):
            v = getattr(self, name)
            if not (-math.pi < v <= math.pi):
                raise ValueError(f"{name}={v} outside (-pi, pi]")
        for name in ("aoa_el", "aod_el"):
            v = getattr(self, name)
            if not (-math.pi / 2 <= v <= math.pi / 2):
                raise ValueError(f"{name}={v} outside [-pi/2, pi/2]")

    def as_array(self):
        return np.array([self.toa, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el])

    @staticmethod
    def from_array(z) -> "MeasVector":
        return MeasVector(*(float(v) for v in np.asarray(z).reshape(5)))


@dataclass(frozen=True)
class MeasNoise:
    """Measurement noise covariance (5x5, symmetric positive definite)."""

    covariance: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.covariance, dtype=float).reshape(5, 5)
        scale = max(np.abs(R).max(), 1.0)
        if np.abs(R - R.T).max() > 1e-12 * scale:
            raise ValueError("measurement covariance must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("measurement covariance must be positive definite")
        object.__setattr__(self, "covariance", R)

    @staticmethod
    def from_stds(toa_std: float, angle_std: float) -> "MeasNoise":
        return MeasNoise(np.diag([toa_std**2] + [angle_std**2] * 4))


@dataclass(frozen=True)
class Scenario:
    """Static scene description shared by simulator and filters.

    The clutter intensity is constant over the measurement space:
    c(z) = clutter_mean / meas_volume, where the volume follows the
    convention (max_range expressed as delay) x (2 pi)^2 x pi^2 for the
    TOA x azimuths x elevations extents.
    """

    bs: Landmark
    landmarks: tuple
    ue_height: float = 0.0
    fov_radius_sp: float = 50.0
    p_detect: float = 0.9
    clutter_mean: float = 1.0
    max_range: float = 200.0
    max_clock_bias: float = 400.0 / SPEED_OF_LIGHT
    meas_noise: MeasNoise = field(
        default_factory=lambda: MeasNoise.from_stds(0.1 / SPEED_OF_LIGHT, 1e-2)
    )
    meas_volume: float = 0.0  # 0 -> derived from max_range

    def __post_init__(self):
        if self.bs.kind != LandmarkKind.BS:
            raise InvalidScenarioError("scenario bs must have kind BS")
        lms = tuple(self.landmarks)
        if any(lm.kind == LandmarkKind.BS for lm in lms):
            raise InvalidScenarioError("exactly one BS: landmark list may not contain BS entries")
        object.__setattr__(self, "landmarks", lms)
        if self.fov_radius_sp <= 0:
            raise InvalidScenarioError("fov_radius_sp must be positive")
        if not (0.0 <= self.p_detect <= 1.0):
            raise InvalidScenarioError("p_detect must be a probability")
        if self.clutter_mean < 0:
            raise InvalidScenarioError("clutter_mean must be nonnegative")
        if self.meas_volume <= 0:
            vol = (self.max_range / SPEED_OF_LIGHT) * _TWO_PI**2 * math.pi**2
            object.__setattr__(self, "meas_volume", vol)

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_mean / self.meas_volume

    def all_landmarks(self) -> tuple:
        """BS first, then the unknown map."""
        return (self.bs,) + self.landmarks

    def landmark_positions(self):
        return np.array([lm.position for lm in self.all_landmarks()])

    def landmark_kinds(self):
        return np.array([int(lm.kind) for lm in self.all_landmarks()], dtype=np.int8)


def _azel(d):
    """Azimuth/elevation of direction vectors d (..., 3) -> (..., 2)."""
    d = np.asarray(d, dtype=float)
    az = np.arctan2(d[..., 1], d[..., 0])
    el = np.arctan2(d[..., 2], np.hypot(d[..., 0], d[..., 1]))
    return np.stack([az, el], axis=-1)


def _dazel(d):
    """Jacobian of (az, el) w.r.t. the direction vector: (..., 2, 3)."""
    d = np.asarray(d, dtype=float)
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    rh2 = dx**2 + dy**2
    r2 = rh2 + dz**2
    rh = np.sqrt(rh2)
    out = np.zeros(d.shape[:-1] + (2, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        out[..., 0, 0] = -dy / rh2
        out[..., 0, 1] = dx / rh2
        out[..., 1, 0] = -dx * dz / (rh * r2)
        out[..., 1, 1] = -dy * dz / (rh * r2)
        out[..., 1, 2] = rh / r2
    return out


def _reflection_points(va_pos, bs_pos, ue_pos):
    """Specular reflection point of paths BS -> q -> UE for VA positions.

    q is the intersection of the segment VA-UE with the plane of points
    equidistant from BS and VA (the wall).  Returns (q, valid); rows are
    invalid when the VA coincides with the BS or the UE is not strictly on
    the BS side of the wall.
    """
    va_pos = np.atleast_2d(va_pos)
    rho = np.linalg.norm(va_pos - bs_pos, axis=-1)
    valid = rho > 1e-9
    safe_rho = np.where(valid, rho, 1.0)
    n = (va_pos - bs_pos) / safe_rho[..., None]
    mid = 0.5 * (va_pos + bs_pos)
    side = np.einsum("...i,...i->...", n, ue_pos - mid)
    valid &= side < -1e-12
    denom = np.einsum("...i,...i->...", n, ue_pos - va_pos)
    t = np.where(valid, (-0.5 * safe_rho) / np.where(valid, denom, 1.0), np.nan)
    q = va_pos + t[..., None] * (ue_pos - va_pos)
    return q, valid


def ue_position(state, ue_height: float):
    """3D UE position(s) for state vector(s) (..., 4)."""
    s = np.asarray(state, dtype=float)
    out = np.empty(s.shape[:-1] + (3,))
    out[..., 0] = s[..., 0]
    out[..., 1] = s[..., 1]
    out[..., 2] = ue_height
    return out


def _rowwise_states(state, n_rows):
    """Broadcast one state (4,) or per-row states (M, 4) to shape (M, 4)."""
    s = np.asarray(state, dtype=float)
    if s.size == 4:
        return np.broadcast_to(s.reshape(4), (n_rows, 4))
    return s.reshape(n_rows, 4)


def measurement_model(lm_pos, kinds, state, ue_height, bs_pos, jacobian=True):
    """Noiseless measurements and (optionally) their landmark Jacobians.

    lm_pos: (M, 3) landmark positions; kinds: (M,) LandmarkKind values;
    state: one UE state vector (4,) shared by all rows, or (M, 4) with one
    state per row.  Returns (z, J, valid) with z (M, 5) and J (M, 5, 3)
    (None when jacobian=False); rows with degenerate geometry are flagged
    invalid, z holds NaN and J zeros there.
    """
    lm_pos = np.atleast_2d(np.asarray(lm_pos, dtype=float))
    M = lm_pos.shape[0]
    kinds = np.asarray(kinds, dtype=np.int8).reshape(M)
    s = _rowwise_states(state, M)
    heading, bias = s[:, 2], s[:, 3]
    u = ue_position(s, ue_height)
    bs_pos = np.asarray(bs_pos, dtype=float).reshape(3)

    z = np.full((M, 5), np.nan)
    J = np.zeros((M, 5, 3)) if jacobian else None
    valid = np.einsum("mi,mi->m", lm_pos - u, lm_pos - u) > 1e-18

    is_bs = kinds == LandmarkKind.BS
    is_va = kinds == LandmarkKind.VA
    is_sp = kinds == LandmarkKind.SP

    # LOS and VA share the arrival geometry: range is UE->anchor distance
    # (for the VA the reflected path length equals the image distance).
    anc = is_bs | is_va
    if anc.any():
        vec = u[anc] - lm_pos[anc]  # anchor -> UE
        rng = np.sqrt(np.einsum("mi,mi->m", vec, vec))
        z[anc, 0] = rng / SPEED_OF_LIGHT + bias[anc]
        bs_rows = is_bs[anc]
        dir_aoa = np.where(bs_rows[:, None], -vec, vec)
        aoa = _azel(dir_aoa)
        z[anc, 1] = wrap_angle(aoa[:, 0] - heading[anc])
        z[anc, 2] = aoa[:, 1]
        if jacobian:
            J[anc, 0, :] = -vec / (SPEED_OF_LIGHT * rng[:, None])
            # AOA direction differentiates w.r.t. the landmark: d(dir)/d(lm)
            # is +I for the LOS look direction, -I for the image direction.
            dz_aoa = _dazel(dir_aoa)
            J[anc, 1:3, :] = np.where(bs_rows[:, None, None], dz_aoa, -dz_aoa)
        if is_bs.any():
            d_bs = u[is_bs] - lm_pos[is_bs]
            z[is_bs, 3:5] = _azel(d_bs)
            if jacobian:
                J[is_bs, 3:5, :] = -_dazel(d_bs)
        if is_va.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                a = lm_pos[is_va]
                uv = u[is_va]
                q, ok = _reflection_points(a, bs_pos, uv)
                z[is_va, 3:5] = _azel(q - bs_pos)
                valid[is_va] &= ok
                if jacobian:
                    rho = np.sqrt(np.einsum("mi,mi->m", a - bs_pos, a - bs_pos))
                    safe = np.where(ok, rho, 1.0)
                    n = (a - bs_pos) / safe[:, None]
                    ua = uv - a
                    beta = np.where(ok, np.einsum("mi,mi->m", n, ua), 1.0)
                    alpha = -0.5 * safe
                    t = np.where(ok, alpha / beta, np.nan)
                    dn_da = (np.eye(3) - n[:, :, None] * n[:, None, :]) / safe[:, None, None]
                    dalpha_da = -0.5 * n
                    dbeta_da = np.einsum("mi,mij->mj", ua, dn_da) - n
                    dt_da = (
                        beta[:, None] * dalpha_da - alpha[:, None] * dbeta_da
                    ) / beta[:, None] ** 2
                    dq_da = (1.0 - t)[:, None, None] * np.eye(3) + ua[:, :, None] * dt_da[:, None, :]
                    J[is_va, 3:5, :] = _dazel(q - bs_pos) @ dq_da

    if is_sp.any():
        p = lm_pos[is_sp]
        v_bs = p - bs_pos
        d_bs = np.sqrt(np.einsum("mi,mi->m", v_bs, v_bs))
        v_ue = u[is_sp] - p  # SP -> UE
        d_ue = np.sqrt(np.einsum("mi,mi->m", v_ue, v_ue))
        z[is_sp, 0] = (d_bs + d_ue) / SPEED_OF_LIGHT + bias[is_sp]
        aoa = _azel(v_ue)
        z[is_sp, 1] = wrap_angle(aoa[:, 0] - heading[is_sp])
        z[is_sp, 2] = aoa[:, 1]
        z[is_sp, 3:5] = _azel(v_bs)
        valid[is_sp] &= d_bs > 1e-9
        if jacobian:
            J[is_sp, 0, :] = (v_bs / d_bs[:, None] - v_ue / d_ue[:, None]) / SPEED_OF_LIGHT
            J[is_sp, 1:3, :] = -_dazel(v_ue)
            J[is_sp, 3:5, :] = _dazel(v_bs)

    valid &= np.isfinite(z).all(axis=-1) | ~valid
    if jacobian:
        valid &= np.isfinite(J.reshape(M, -1)).all(axis=-1) | ~valid
        J[~valid] = 0.0
    z[~valid] = np.nan
    return z, J, valid


def predict_measurements(lm_pos, kinds, state, ue_height, bs_pos):
    """Noiseless channel parameters for a batch of landmarks: (z, valid)."""
    z, _, valid = measurement_model(lm_pos, kinds, state, ue_height, bs_pos, jacobian=False)
    return z, valid


def measurement_jacobians(lm_pos, kinds, state, ue_height, bs_pos):
    """Partial derivatives of h w.r.t. the landmark position: (J, valid)."""
    _, J, valid = measurement_model(lm_pos, kinds, state, ue_height, bs_pos, jacobian=True)
    return J, valid


def state_jacobian(lm: Landmark, state: UEState, sc: Scenario):
    """Partial derivatives of h w.r.t. the UE state [x, y, heading, bias]: (5, 4)."""
    s = state.as_array()
    u = ue_position(s, sc.ue_height)
    bs_pos = sc.bs.position
    # d(UE 3D position) / d(x, y) is the identity on the horizontal plane.
    du = np.zeros((3, 2))
    du[0, 0] = du[1, 1] = 1.0

    J = np.zeros((5, 4))
    J[0, 3] = 1.0  # bias enters the TOA additively
    J[1, 2] = -1.0  # AOA azimuth rotates against the heading

    kind = lm.kind
    if kind == LandmarkKind.SP:
        v_ue = u - lm.position
        d_ue = np.linalg.norm(v_ue)
        J[0, :2] = (v_ue / (SPEED_OF_LIGHT * d_ue)) @ du
        J[1:3, :2] = _dazel(v_ue) @ du
        return J

    vec = u - lm.position  # anchor -> UE
    rng = np.linalg.norm(vec)
    J[0, :2] = (vec / (SPEED_OF_LIGHT * rng)) @ du
    if kind == LandmarkKind.BS:
        J[1:3, :2] = -_dazel(-vec) @ du
        J[3:5, :2] = _dazel(vec) @ du
        return J

    # VA: AOA from the image direction, AOD through the reflection point.
    J[1:3, :2] = _dazel(vec) @ du
    a = lm.position
    q, ok = _reflection_points(a[None, :], bs_pos, u)
    if not ok[0]:
        raise InvalidGeometryError("UE is behind the reflecting surface")
    rho = np.linalg.norm(a - bs_pos)
    n = (a - bs_pos) / rho
    beta = float(n @ (u - a))
    t = (-0.5 * rho) / beta
    dt_du = -(t / beta) * n
    dq_du = t * np.eye(3) + np.outer(u - a, dt_du)
    J[3:5, :2] = (_dazel(q[0] - bs_pos) @ dq_du) @ du
    return J


def predict_measurement(lm: Landmark, state: UEState, sc: Scenario) -> MeasVector:
    """Noiseless measurement h(x, s) for one landmark; raises on bad geometry."""
    _raise_if_degenerate(lm, state, sc)
    z, valid = predict_measurements(
        lm.position[None, :], [int(lm.kind)], state.as_array(), sc.ue_height, sc.bs.position
    )
    if not valid[0]:
        raise InvalidGeometryError(f"degenerate geometry for {lm.kind.name} at {lm.position}")
    return MeasVector.from_array(z[0])


def measurement_jacobian(lm: Landmark, state: UEState, sc: Scenario):
    """(5, 3) Jacobian over the landmark position and (5, 4) over the UE state."""
    _raise_if_degenerate(lm, state, sc)
    J, valid = measurement_jacobians(
        lm.position[None, :], [int(lm.kind)], state.as_array(), sc.ue_height, sc.bs.position
    )
    if not valid[0]:
        raise InvalidGeometryError(f"degenerate geometry for {lm.kind.name} at {lm.position}")
    return J[0], state_jacobian(lm, state, sc)


def _raise_if_degenerate(lm: Landmark, state: UEState, sc: Scenario):
    u = ue_position(state.as_array(), sc.ue_height)
    if np.linalg.norm(lm.position - u) <= 1e-9:
        raise InvalidGeometryError("landmark coincides with the UE (zero-range path)")
    if lm.kind == LandmarkKind.VA and np.linalg.norm(lm.position - sc.bs.position) <= 1e-9:
        raise InvalidScenarioError("VA coincides with the BS")


def detection_probabilities(lm_pos, kinds, state, sc: Scenario):
    """Detection probability per landmark: p_detect, except SPs outside FoV -> 0.

    state broadcasts like in predict_measurements.
    """
    lm_pos = np.atleast_2d(np.asarray(lm_pos, dtype=float))
    M = lm_pos.shape[0]
    kinds = np.asarray(kinds, dtype=np.int8).reshape(M)
    s = _rowwise_states(state, M)
    pd = np.full(M, sc.p_detect)
    is_sp = kinds == LandmarkKind.SP
    if is_sp.any():
        horiz = np.hypot(lm_pos[is_sp, 0] - s[is_sp, 0], lm_pos[is_sp, 1] - s[is_sp, 1])
        pd[is_sp] = np.where(horiz <= sc.fov_radius_sp, sc.p_detect, 0.0)
    return pd


def detection_probability(lm: Landmark, state: UEState, sc: Scenario) -> float:
    return float(
        detection_probabilities(lm.position[None, :], [int(lm.kind)], state.as_array(), sc)[0]
    )


def direction_from_angles(az, el):
    """Unit vector(s) from azimuth/elevation."""
    az = np.asarray(az, dtype=float)
    el = np.asarray(el, dtype=float)
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
    )


def invert_measurements(z, kinds, state, ue_height, bs_pos):
    """Vectorized TOA+AOA inversion; returns (positions (B, 3), ok (B,)).

    The VA lies at (path length) behind the arrival direction; the SP lies on
    the arrival ray at the bistatic-ellipse range.  Rows are flagged invalid
    when no consistent position exists (negative range, total path shorter
    than the direct BS-UE distance, ...).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    B = z.shape[0]
    kinds = np.asarray(kinds, dtype=np.int8).reshape(B)
    s = _rowwise_states(state, B)
    u = ue_position(s, ue_height)
    rho = (z[:, 0] - s[:, 3]) * SPEED_OF_LIGHT
    az_g = wrap_angle(z[:, 1] + s[:, 2])
    arrive = direction_from_angles(az_g, z[:, 2])  # landmark -> UE direction

    pos = np.full((B, 3), np.nan)
    ok = np.zeros(B, dtype=bool)

    is_va = kinds == LandmarkKind.VA
    if is_va.any():
        ok_va = rho[is_va] > 1e-6
        pos[is_va] = u[is_va] - rho[is_va, None] * arrive[is_va]
        ok[is_va] = ok_va

    is_sp = kinds == LandmarkKind.SP
    if is_sp.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            w = u[is_sp] - np.asarray(bs_pos, dtype=float).reshape(3)
            w_norm = np.sqrt(np.einsum("bi,bi->b", w, w))
            rho_sp = rho[is_sp]
            m = -arrive[is_sp]  # UE -> SP direction
            denom = 2.0 * (rho_sp + np.einsum("bi,bi->b", w, m))
            d2 = (rho_sp**2 - w_norm**2) / denom
            ok_sp = (rho_sp > w_norm + 1e-6) & (denom > 1e-9) & (d2 > 1e-6) & (d2 < rho_sp)
            pos[is_sp] = u[is_sp] + d2[:, None] * m
            ok[is_sp] = ok_sp

    if not (is_va | is_sp).all():
        raise ValueError("can only invert measurements for VA or SP hypotheses")
    pos[~ok] = np.nan
    return pos, ok


def invert_measurement(z, kind, state, ue_height, bs_pos):
    """Single-measurement inversion; returns the position or None."""
    pos, ok = invert_measurements(
        np.asarray(z, dtype=float).reshape(1, 5), [int(kind)],
        np.asarray(state, dtype=float).reshape(4), ue_height, bs_pos,
    )
    return pos[0] if ok[0] else None
