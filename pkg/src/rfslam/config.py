"""Experiment configuration: JSON ingestion, defaults and validation.

An empty document yields the full default configuration of the simulation
study (one BS, four VAs and four SPs in a symmetric layout, coordinated-turn
controls, 2000 particles, 10 MC runs).  Unknown keys are rejected and every
error names the offending path.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bp import BpParams
from .geometry import SPEED_OF_LIGHT, Landmark, LandmarkKind, MeasNoise, Scenario, UEState
from .metrics import GospaParams
from .motion import ControlInput, MotionNoise
from .phd import PhdParams
from .pmbm import PmbmParams
from .simulate import SimConfig

FILTERS = ("phd", "pmbm", "bp")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def default_config() -> dict:
    """Defaults of the simulation study, JSON-serializable."""
    c = SPEED_OF_LIGHT
    return {
        "scenario": {
            "bs_position": [0.0, 0.0, 40.0],
            "landmarks": [
                {"position": [200.0, 0.0, 40.0], "kind": "VA"},
                {"position": [-200.0, 0.0, 40.0], "kind": "VA"},
                {"position": [0.0, 200.0, 40.0], "kind": "VA"},
                {"position": [0.0, -200.0, 40.0], "kind": "VA"},
                {"position": [99.0, 0.0, 10.0], "kind": "SP"},
                {"position": [-99.0, 0.0, 10.0], "kind": "SP"},
                {"position": [0.0, 99.0, 10.0], "kind": "SP"},
                {"position": [0.0, -99.0, 10.0], "kind": "SP"},
            ],
            "ue_height": 0.0,
            "fov_radius_sp": 50.0,
            "p_detect": 0.9,
            "clutter_mean": 1.0,
            "max_range": 200.0,
            "max_clock_bias": 400.0 / c,
            "toa_noise_std": 0.1 / c,
            "angle_noise_std": 1e-2,
        },
        "motion": {
            "speed": 22.22,
            "turn_rate": math.pi / 10.0,
            "sampling_interval": 0.5,
            "noise_std": [0.2, 0.2, 0.0035, 0.2 / c],
        },
        "initial": {
            "state": None,  # default: [speed/turn_rate, 0, pi/2, 300/c]
            "cov_std": [0.3, 0.3, 0.0052, 0.3 / c],
        },
        "sim": {"n_steps": 40, "noisy_trajectory": True},
        "filter": {
            "name": "phd",
            "n_particles": 2000,
            "prune_threshold": 1e-4,
            "merge_threshold": 50.0,
            "cap": 100,
            "birth_weight": 1.5e-5,
            "extract_threshold": 0.5,
            "gamma": 10,
            "hyp_prune": 1e-4,
            "max_hyps": 50,
            "r_prune": 1e-3,
            "recycle": True,
            "bp_max_iters": 20,
            "bp_tol": 1e-6,
        },
        "gospa": {"cutoff": 20.0, "order": 2.0, "alpha": 2.0},
        "run": {
            "n_mc_runs": 10,
            "base_seed": 1,
            "known_pose": False,
            "out_dir": "results",
            "threads": 1,
        },
    }


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    control: ControlInput
    motion_noise: MotionNoise
    n_steps: int
    noisy_trajectory: bool
    initial_state: UEState
    initial_cov: np.ndarray
    filter_name: str
    n_particles: int
    phd_params: PhdParams
    pmbm_params: PmbmParams
    bp_params: BpParams
    gospa_params: GospaParams
    n_mc_runs: int
    base_seed: int
    known_pose: bool
    out_dir: str
    threads: int
    raw: dict = field(repr=False, default_factory=dict)

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(
            scenario=self.scenario,
            control=self.control,
            motion_noise=self.motion_noise,
            n_steps=self.n_steps,
            seed=seed,
            initial_state=self.initial_state,
            noisy_trajectory=self.noisy_trajectory,
        )

    @property
    def config_hash(self) -> str:
        """Hash of the semantically relevant configuration.

        Execution-only settings (worker count, output directory) are
        excluded so reruns on different machines compare equal.
        """
        semantic = {k: dict(v) if isinstance(v, dict) else v for k, v in self.raw.items()}
        semantic.get("run", {}).pop("threads", None)
        semantic.get("run", {}).pop("out_dir", None)
        blob = json.dumps(semantic, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _merge(defaults, raw, path):
    """Defaults overlaid with raw, rejecting keys absent from the defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(raw).__name__}")
    out = {}
    for key, value in raw.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(here, "unknown key")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    for key, value in defaults.items():
        if key not in out:
            out[key] = _merge(value, {}, f"{path}.{key}" if path else key) if isinstance(value, dict) else value
    return out


def _number(cfg, path, lo=None, hi=None, integer=False):
    keys = path.split(".")
    v = cfg
    for k in keys:
        v = v[k]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}, got {v}")
    return int(v) if integer else float(v)


def _vector(cfg, path, n):
    keys = path.split(".")
    v = cfg
    for k in keys:
        v = v[k]
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(path, f"expected a list of {n} numbers")
    try:
        return np.array([float(x) for x in v])
    except (TypeError, ValueError):
        raise ConfigError(path, "entries must be numbers") from None


def validate_config(raw: dict | None) -> ExperimentConfig:
    """Parse a raw document into a validated ExperimentConfig."""
    cfg = _merge(default_config(), raw or {}, "")

    landmarks = []
    for i, entry in enumerate(cfg["scenario"]["landmarks"]):
        path = f"scenario.landmarks[{i}]"
        if not isinstance(entry, dict) or set(entry) != {"position", "kind"}:
            raise ConfigError(path, "expected an object with keys position, kind")
        pos = entry["position"]
        if not isinstance(pos, (list, tuple)) or len(pos) != 3:
            raise ConfigError(f"{path}.position", "expected [x, y, z]")
        kind = entry["kind"]
        if kind not in ("VA", "SP"):
            raise ConfigError(f"{path}.kind", f"expected VA or SP, got {kind!r}")
        landmarks.append(Landmark(np.array(pos, dtype=float), LandmarkKind[kind]))

    noise = MeasNoise.from_stds(
        _number(cfg, "scenario.toa_noise_std", lo=0),
        _number(cfg, "scenario.angle_noise_std", lo=0),
    )
    scenario = Scenario(
        bs=Landmark(_vector(cfg, "scenario.bs_position", 3), LandmarkKind.BS),
        landmarks=tuple(landmarks),
        ue_height=_number(cfg, "scenario.ue_height"),
        fov_radius_sp=_number(cfg, "scenario.fov_radius_sp", lo=1e-9),
        p_detect=_number(cfg, "scenario.p_detect", lo=0.0, hi=1.0),
        clutter_mean=_number(cfg, "scenario.clutter_mean", lo=0.0),
        max_range=_number(cfg, "scenario.max_range", lo=1e-9),
        max_clock_bias=_number(cfg, "scenario.max_clock_bias", lo=0.0),
        meas_noise=noise,
    )

    control = ControlInput(
        _number(cfg, "motion.speed", lo=0.0), _number(cfg, "motion.turn_rate")
    )
    q_std = _vector(cfg, "motion.noise_std", 4)
    motion_noise = MotionNoise(
        np.diag(q_std**2), _number(cfg, "motion.sampling_interval", lo=1e-12)
    )

    if cfg["initial"]["state"] is None:
        if abs(control.turn_rate) < 1e-12:
            raise ConfigError("initial.state", "required when the turn rate is zero")
        init = UEState(
            control.speed / control.turn_rate, 0.0, math.pi / 2.0, 300.0 / SPEED_OF_LIGHT
        )
    else:
        v = _vector(cfg, "initial.state", 4)
        init = UEState.from_array(v)
    p_std = _vector(cfg, "initial.cov_std", 4)

    name = cfg["filter"]["name"]
    if name not in FILTERS:
        raise ConfigError("filter.name", f"expected one of {FILTERS}, got {name!r}")
    n_particles = _number(cfg, "filter.n_particles", lo=1, integer=True)

    phd_params = PhdParams(
        prune_threshold=_number(cfg, "filter.prune_threshold", lo=0),
        merge_threshold=_number(cfg, "filter.merge_threshold", lo=0),
        cap=_number(cfg, "filter.cap", lo=1, integer=True),
        birth_weight=_number(cfg, "filter.birth_weight", lo=0),
        extract_threshold=_number(cfg, "filter.extract_threshold", lo=0),
    )
    pmbm_params = PmbmParams(
        gamma=_number(cfg, "filter.gamma", lo=1, integer=True),
        hyp_prune=_number(cfg, "filter.hyp_prune", lo=0),
        max_hyps=_number(cfg, "filter.max_hyps", lo=1, integer=True),
        r_prune=_number(cfg, "filter.r_prune", lo=0),
        recycle=bool(cfg["filter"]["recycle"]),
        birth_weight=phd_params.birth_weight,
        extract_threshold=phd_params.extract_threshold,
    )
    bp_params = BpParams(
        max_iters=_number(cfg, "filter.bp_max_iters", lo=1, integer=True),
        tol=_number(cfg, "filter.bp_tol", lo=0),
        birth_weight=phd_params.birth_weight,
        extract_threshold=phd_params.extract_threshold,
    )
    gospa_params = GospaParams(
        cutoff=_number(cfg, "gospa.cutoff", lo=1e-12),
        order=_number(cfg, "gospa.order", lo=1.0),
        alpha=_number(cfg, "gospa.alpha", lo=1e-12, hi=2.0),
    )

    return ExperimentConfig(
        scenario=scenario,
        control=control,
        motion_noise=motion_noise,
        n_steps=_number(cfg, "sim.n_steps", lo=1, integer=True),
        noisy_trajectory=bool(cfg["sim"]["noisy_trajectory"]),
        initial_state=init,
        initial_cov=np.diag(p_std**2),
        filter_name=name,
        n_particles=n_particles,
        phd_params=phd_params,
        pmbm_params=pmbm_params,
        bp_params=bp_params,
        gospa_params=gospa_params,
        n_mc_runs=_number(cfg, "run.n_mc_runs", lo=1, integer=True),
        base_seed=_number(cfg, "run.base_seed", lo=0, integer=True),
        known_pose=bool(cfg["run"]["known_pose"]),
        out_dir=str(cfg["run"]["out_dir"]),
        threads=_number(cfg, "run.threads", lo=1, integer=True),
        raw=cfg,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read().strip()
    return validate_config(json.loads(text) if text else {})
