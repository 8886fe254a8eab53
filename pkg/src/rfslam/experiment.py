"""Experiment orchestration: simulate -> filter -> score, Monte-Carlo loops,
CSV persistence and plot-ready exports.

Each MC run r is fully determined by base_seed + r; runs are independent and
may execute across worker processes, with every output written by the parent
in run order so files are byte-identical regardless of the thread count.
Wall-clock timings go to a separate timing.txt (they are the one
non-reproducible quantity, kept out of the CSVs on purpose).
"""

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bp import BpSlamFilter
from .config import ExperimentConfig
from .geometry import LandmarkKind, wrap_angle
from .metrics import gospa_for_kind, rmse
from .phd import PhdStepper
from .pmbm import PmbmStepper
from .rbpf import init_particles, step
from .simulate import generate_ground_truth

STEP_COLUMNS = [
    "step",
    "gospa_va_total", "gospa_va_loc", "gospa_va_miss", "gospa_va_false",
    "gospa_sp_total", "gospa_sp_loc", "gospa_sp_miss", "gospa_sp_false",
    "pos_err", "heading_err", "bias_err", "ess",
]

SUMMARY_COLUMNS = ["run", "filter", "known_pose", "seed",
                   "rmse_pos", "rmse_heading", "rmse_bias", "mean_ess_pct"]


@dataclass
class RunResult:
    run_idx: int
    seed: int
    filter_name: str
    known_pose: bool
    n_particles: int
    columns: dict = field(default_factory=dict)
    est_states: list = field(default_factory=list)
    true_states: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def summary(self) -> dict:
        return {
            "run": self.run_idx,
            "filter": self.filter_name,
            "known_pose": self.known_pose,
            "seed": self.seed,
            "rmse_pos": rmse(self.est_states, self.true_states, "position"),
            "rmse_heading": rmse(self.est_states, self.true_states, "heading"),
            "rmse_bias": rmse(self.est_states, self.true_states, "clock_bias"),
            "mean_ess_pct": float(np.mean(self.columns["ess"]) / self.n_particles * 100.0),
        }


def run_single(cfg: ExperimentConfig, run_idx: int) -> RunResult:
    """One seeded run: simulate ground truth, filter it, score per step."""
    seed = cfg.base_seed + run_idx
    gt = generate_ground_truth(cfg.sim_config(seed))
    filt_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])

    t0 = time.perf_counter()
    stats_per_step = _filter_trajectory(cfg, gt, filt_rng)
    wall = time.perf_counter() - t0

    truth = list(cfg.scenario.landmarks)
    cols = {name: [] for name in STEP_COLUMNS}
    est_states = []
    for k, (true_state, stats) in enumerate(zip(gt.states, stats_per_step)):
        res_va = gospa_for_kind(stats.map_estimate, truth, LandmarkKind.VA, cfg.gospa_params)
        res_sp = gospa_for_kind(stats.map_estimate, truth, LandmarkKind.SP, cfg.gospa_params)
        est = stats.estimate
        cols["step"].append(k + 1)
        for tag, res in (("va", res_va), ("sp", res_sp)):
            cols[f"gospa_{tag}_total"].append(res.total)
            cols[f"gospa_{tag}_loc"].append(res.localization)
            cols[f"gospa_{tag}_miss"].append(res.missed)
            cols[f"gospa_{tag}_false"].append(res.false)
        cols["pos_err"].append(math.hypot(est.x - true_state.x, est.y - true_state.y))
        cols["heading_err"].append(abs(float(wrap_angle(est.heading - true_state.heading))))
        cols["bias_err"].append(abs(est.clock_bias - true_state.clock_bias))
        cols["ess"].append(stats.ess)
        est_states.append(est)

    return RunResult(
        run_idx=run_idx,
        seed=seed,
        filter_name=cfg.filter_name,
        known_pose=cfg.known_pose,
        n_particles=1 if cfg.known_pose else cfg.n_particles,
        columns={k: np.array(v) for k, v in cols.items()},
        est_states=est_states,
        true_states=list(gt.states),
        wall_time=wall,
    )


def _filter_trajectory(cfg: ExperimentConfig, gt, rng):
    """Run the configured filter over a ground-truth record."""
    out = []
    if cfg.filter_name == "bp":
        n = 1 if cfg.known_pose else cfg.n_particles
        cov = np.zeros((4, 4)) if cfg.known_pose else cfg.initial_cov
        f = BpSlamFilter(cfg.scenario, cfg.bp_params, n, cfg.initial_state, cov, rng)
        for k, (true_state, Z) in enumerate(zip(gt.states, gt.measurement_sets)):
            known = true_state.as_array() if cfg.known_pose else None
            out.append(
                f.step(Z, cfg.control, cfg.motion_noise, rng, known_state=known, propagate=k > 0)
            )
        return out

    stepper = (PhdStepper(cfg.scenario, cfg.phd_params) if cfg.filter_name == "phd"
               else PmbmStepper(cfg.scenario, cfg.pmbm_params))
    n = 1 if cfg.known_pose else cfg.n_particles
    cov = np.zeros((4, 4)) if cfg.known_pose else cfg.initial_cov
    ps = init_particles(cfg.initial_state, cov, n, rng, stepper)
    for k, (true_state, Z) in enumerate(zip(gt.states, gt.measurement_sets)):
        known = true_state.as_array() if cfg.known_pose else None
        ps, stats = step(
            ps, Z, cfg.control, cfg.motion_noise, stepper, rng,
            known_state=known, propagate=k > 0,
        )
        out.append(stats)
    return out


def _metadata(cfg: ExperimentConfig, extra: dict | None = None) -> dict:
    md = {
        "software": f"rfslam {__version__}",
        "config_hash": cfg.config_hash,
        "base_seed": cfg.base_seed,
        "filter": cfg.filter_name,
        "known_pose": cfg.known_pose,
        "n_particles": cfg.n_particles,
        "gospa": f"cutoff={cfg.gospa_params.cutoff} order={cfg.gospa_params.order} "
                 f"alpha={cfg.gospa_params.alpha}",
        "gamma": cfg.pmbm_params.gamma,
        "thresholds": f"phd_prune={cfg.phd_params.prune_threshold} "
                      f"merge={cfg.phd_params.merge_threshold} "
                      f"hyp_prune={cfg.pmbm_params.hyp_prune} "
                      f"r_prune={cfg.pmbm_params.r_prune}",
        "birth_weight": cfg.phd_params.birth_weight,
        "ess_convention": "per-step, pre-resampling",
    }
    if extra:
        md.update(extra)
    return md


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, metadata: dict, header, rows):
    """CSV with a commented metadata block, full double precision."""
    with open(path, "w", newline="") as fh:
        for k, v in metadata.items():
            fh.write(f"# {k}: {_fmt(v)}\r\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    """Read back a metadata-block CSV: (metadata, header, float-valued rows)."""
    metadata = {}
    with open(path, newline="") as fh:
        rows = []
        header = None
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                metadata[key.strip()] = value.strip()
                continue
            parsed = next(csv.reader([line]))
            if header is None:
                header = parsed
            elif parsed:
                rows.append([_parse_cell(c) for c in parsed])
    return metadata, header, rows


def _parse_cell(c):
    if c in ("true", "false"):
        return c == "true"
    try:
        return float(c)
    except ValueError:
        return c


def run_filename(cfg: ExperimentConfig, run_idx: int) -> str:
    mode = "mapping" if cfg.known_pose else "slam"
    return f"{cfg.filter_name}_{mode}_run{run_idx:03d}.csv"


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Full Monte-Carlo batch: per-run step CSVs, a summary CSV, timings.

    Deterministic given the configuration: seeds derive from base_seed + run
    index, workers only parallelize independent runs, and all files are
    written by the parent in run order.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    indices = list(range(cfg.n_mc_runs))
    if cfg.threads > 1 and cfg.n_mc_runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run_single, [cfg] * len(indices), indices))
    else:
        results = [run_single(cfg, r) for r in indices]

    md = _metadata(cfg)
    for res in results:
        rows = zip(*(res.columns[c] for c in STEP_COLUMNS))
        write_csv(out / run_filename(cfg, res.run_idx), {**md, "seed": res.seed},
                  STEP_COLUMNS, rows)

    mode = "mapping" if cfg.known_pose else "slam"
    summary_rows = [[res.summary[c] for c in SUMMARY_COLUMNS] for res in results]
    write_csv(out / f"{cfg.filter_name}_{mode}_summary.csv", md, SUMMARY_COLUMNS, summary_rows)

    with open(out / f"{cfg.filter_name}_{mode}_timing.txt", "w") as fh:
        for res in results:
            fh.write(f"run {res.run_idx}: {res.wall_time:.3f} s\n")
        fh.write(f"total: {sum(r.wall_time for r in results):.3f} s\n")
    return results


def write_plot_data(out_dir):
    """Per-figure data files: mean curves over runs for each filter/mode.

    Produces fig_gospa_va.csv and fig_gospa_sp.csv (step vs mean total GOSPA
    per filter/mode), and fig_ue_metrics.csv (per filter/mode mean RMSE and
    ESS percentages across runs, bar-plot ready).
    """
    out = Path(out_dir)
    groups = {}
    for path in sorted(out.glob("*_run[0-9][0-9][0-9].csv")):
        metadata, header, rows = read_csv(path)
        key = (metadata["filter"], metadata["known_pose"])
        groups.setdefault(key, []).append(
            {h: np.array([r[i] for r in rows]) for i, h in enumerate(header)}
        )
    if not groups:
        raise FileNotFoundError(f"no per-run CSV files found in {out}")

    labels = [f"{f}_{'mapping' if kp == 'true' else 'slam'}" for f, kp in groups]
    steps = next(iter(groups.values()))[0]["step"]
    for tag in ("va", "sp"):
        header = ["step"] + [f"{lab}_mean_gospa_{tag}" for lab in labels]
        rows = []
        for i, s in enumerate(steps):
            row = [s]
            for key in groups:
                row.append(float(np.mean([run[f"gospa_{tag}_total"][i] for run in groups[key]])))
            rows.append(row)
        write_csv(out / f"fig_gospa_{tag}.csv", {"figure": f"{tag} mapping GOSPA"}, header, rows)

    header = ["series", "mean_pos_err", "mean_heading_err", "mean_bias_err", "mean_ess_pct"]
    rows = []
    for (f, kp), runs in groups.items():
        lab = f"{f}_{'mapping' if kp == 'true' else 'slam'}"
        summaries, _, srows = read_csv(out / f"{f}_{'mapping' if kp == 'true' else 'slam'}_summary.csv")
        rows.append([
            lab,
            float(np.mean([run["pos_err"].mean() for run in runs])),
            float(np.mean([run["heading_err"].mean() for run in runs])),
            float(np.mean([run["bias_err"].mean() for run in runs])),
            float(np.mean([r[-1] for r in srows])),
        ])
    write_csv(out / "fig_ue_metrics.csv", {"figure": "UE accuracy and ESS"}, header, rows)
