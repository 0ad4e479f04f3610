"""Scenario driver: closed-loop simulation, CSV emission, plots, and the
canonical experiment grid.

The plant is the full nonlinear model integrated at a fine substep (10x the
controller rate by default); the controller runs at the configured rate on
the EKF estimate and never sees measurements from the future.  Input delay is
simulated at substep resolution on the plant side and compensated (or not,
depending on the variant) on the controller side.
"""

from __future__ import annotations

import csv
import os
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import setops as so
from .barrier import BackupController, SafetySpec, position_bound_safety, quadratic_backup_set
from .config import Config, ConfigError, ScenarioConfig, load_config, synthesis_state_box
from .dynamics import ControlAffineModel, make_segway, step_zoh
from .estimation import (EkfState, SensorModel, ekf_predict_piecewise, ekf_update,
                         uncertainty_box)
from .safety_filter import SafetyFilter, check_zero_input_flow, delay_discretization
from .svgplot import LinePlot
from .synthesis import (GainCertificate, linearize_at_vertices, lqr_gain,
                        saturation_free_level, synthesize_gain)

CSV_COLUMNS = [
    "t", "p", "p_dot", "theta", "theta_dot",
    "p_est", "p_dot_est", "theta_est", "theta_dot_est",
    "dx_rad_p", "dx_rad_p_dot", "dx_rad_theta", "dx_rad_theta_dot",
    "u_des", "u_applied", "h", "h_intersample",
    "min_constraint_margin", "fallback", "qp_status",
]

_STATUS_CODES = {"optimal": 0, "infeasible": 1, "nonmember": 2, "fault": 3,
                 "unfiltered": 4}


@dataclass(frozen=True, eq=False)
class Runtime:
    """Everything a scenario needs that is derived from config, not state."""

    model: ControlAffineModel
    spec: SafetySpec
    backup: BackupController
    certificate: GainCertificate
    eps_level: float
    nominal_gain: np.ndarray
    desired_gain: np.ndarray
    config: Config


def build_runtime(cfg: Config) -> Runtime:
    """Synthesize gains and assemble the model/spec/controller triple.

    The nominal backup gain is LQR at the upright rest point.  The
    incremental-stability certificate is synthesized on the raw vertex family
    seeded with that gain, so the certified gain is the total backup feedback;
    the pre-feedback part is the certified correction on top of the LQR.  The
    backup-set level is derived from the certificate unless pinned in config.
    """
    model = make_segway(cfg.segway)
    origin = np.zeros(model.n)
    point_family = linearize_at_vertices(model, so.Box.point(origin))
    A0, B0 = point_family.A_list[0], point_family.B_list[0]
    k_nom = lqr_gain(A0, B0, cfg.backup.lqr_q, cfg.backup.lqr_r)
    state_box = synthesis_state_box(cfg)
    family = linearize_at_vertices(model, state_box)
    cert = synthesize_gain(family, model.u_max,
                           gamma=cfg.synthesis.decrease_margin,
                           max_iter=cfg.synthesis.max_iter, seed_gain=k_nom,
                           state_scale=np.asarray(cfg.synthesis.state_scale))
    backup = BackupController(nominal_gain=k_nom, prefeedback_gain=cert.K - k_nom,
                              u_max=model.u_max)
    eps_level = cfg.backup.eps_level
    if eps_level <= 0.0:
        box = synthesis_state_box(cfg)
        Pinv_diag = np.diag(np.linalg.inv(cert.P))
        caps = [
            cert.rho,
            saturation_free_level(backup.total_gain, cert.P, model.u_max),
            cfg.safety.position_bound ** 2 / Pinv_diag[0],
            float(np.min(box.rad ** 2 / Pinv_diag)),
        ]
        eps_level = cfg.backup.eps_level_fraction * min(c for c in caps if np.isfinite(c))
    h_b, dh_b = quadratic_backup_set(cert.P, eps_level)
    spec = position_bound_safety(cfg.safety.position_bound, h_b, dh_b,
                                 horizon=cfg.safety.backup_horizon,
                                 lam=cfg.safety.class_k_gain)
    k_des = lqr_gain(A0, B0, cfg.scenario.desired_lqr_q, cfg.scenario.desired_lqr_r)
    return Runtime(model=model, spec=spec, backup=backup, certificate=cert,
                   eps_level=eps_level, nominal_gain=k_nom, desired_gain=k_des,
                   config=cfg)


@dataclass(frozen=True, eq=False)
class RunSummary:
    min_h: float
    safe: bool
    max_abs_p: float
    wall_time_s: float
    faults: tuple = ()


@dataclass(frozen=True, eq=False)
class RunResult:
    scenario: ScenarioConfig
    samples: dict            # column name -> array, CSV-visible
    summary: RunSummary
    extras: dict = field(default_factory=dict)  # diagnostics outside the CSV schema

    @property
    def record_count(self) -> int:
        return len(self.samples["t"])


def make_desired_policy(runtime: Runtime, setpoint: float):
    """Aggressive tracking law commanding a position outside the safe set."""
    x_ref = np.array([setpoint, 0.0, 0.0, 0.0])
    gain = runtime.desired_gain

    def policy(x):
        return gain @ (np.asarray(x, dtype=float) - x_ref)

    return policy


def run_scenario(cfg: Config, runtime: Runtime | None = None) -> RunResult:
    """Execute one closed-loop scenario; deterministic given the config seed."""
    problems = cfg.scenario.validate()
    if problems:
        raise ConfigError(problems)
    sc = cfg.scenario
    rt = runtime or build_runtime(cfg)
    model, spec = rt.model, rt.spec
    t_start = time.perf_counter()

    dt = 1.0 / sc.frequency_hz
    steps = int(round(sc.duration_s * sc.frequency_hz))
    nsub = sc.plant_substeps
    sub_h = dt / nsub
    delay_subs = int(round(sc.delay_s / sub_h))

    faults: list[str] = []
    desired = make_desired_policy(rt, sc.desired_setpoint)

    delay_aware = sc.variant == "robust_delay_aware"
    n_delay, residual = delay_discretization(sc.delay_s, dt) if delay_aware else (0, 0.0)
    filt = SafetyFilter(
        model=model, spec=spec, backup=rt.backup, dt=dt,
        robust=sc.variant in ("robust", "robust_delay_aware"),
        constraint_points=cfg.safety.constraint_points,
        delay_steps=n_delay, delay_residual_s=residual,
        prediction_inflation=np.asarray(cfg.filter.prediction_inflation),
        model_substeps=cfg.filter.model_substeps, predictor_substeps=nsub,
        fd_eps=cfg.sensitivity.perturbation, fd_scheme=cfg.sensitivity.scheme,
        det_floor=cfg.sensitivity.det_floor,
        reach_inflation=cfg.setops.reach_inflation,
        reach_max_iter=cfg.setops.reach_max_iter)

    x_true = np.asarray(sc.initial_state, dtype=float).copy()
    rng = np.random.default_rng(sc.seed)
    sensor = SensorModel(measured=cfg.estimation.measured,
                         noise_std=np.asarray(cfg.estimation.noise_std), rng=rng)
    H = sensor.matrix(model.n)
    R = sensor.covariance()
    Q_d = np.diag(np.asarray(cfg.estimation.process_noise_rate)) * dt
    est = EkfState(mean=x_true.copy(), cov=np.diag(np.asarray(cfg.estimation.init_cov)))
    point_box = so.Box.point(np.zeros(model.n))

    if delay_aware and n_delay > 0:
        start_box = so.Box.from_radius(
            x_true, uncertainty_box(est, cfg.estimation.confidence_scale,
                                    cfg.estimation.box_caps).rad)
        a2_ok, a2_margin = check_zero_input_flow(
            model, start_box, rt.backup, spec, n_delay, dt,
            rng=np.random.default_rng(sc.seed + 1), substeps=cfg.filter.model_substeps)
        if not a2_ok:
            faults.append(f"zero-input startup check failed (margin {a2_margin:.4g})")

    u_hist = np.zeros((steps, model.m))
    cols = {name: np.zeros(steps + 1) for name in CSV_COLUMNS if name != "qp_status"}
    statuses: list[str] = []
    x_pred_log = np.full((steps, model.n), np.nan)
    u_cmd_log = np.zeros((steps, model.m))

    h_prev_inter = float(spec.h(x_true))
    for i in range(steps):
        if sc.noise:
            z = sensor.measure(x_true)
            est = ekf_update(est, z, H, R)
            x_est = est.mean
            dx_box = uncertainty_box(est, cfg.estimation.confidence_scale,
                                     cfg.estimation.box_caps)
        else:
            x_est = x_true.copy()
            dx_box = point_box
        # the nominal condition is pointwise: it ignores the uncertainty box
        dx_filter = dx_box if sc.variant in ("robust", "robust_delay_aware") else point_box

        if sc.variant == "unfiltered":
            u_des = np.atleast_1d(desired(x_est))
            u_cmd = model.saturate(u_des)
            diag_status, diag_fallback, diag_margin = "unfiltered", False, math.nan
        elif delay_aware:
            u_cmd, diag = filt.delayed_filter_step(x_est, dx_filter, desired_policy=desired)
            u_des = diag.u_des
            diag_status, diag_fallback = diag.qp_status, diag.fallback
            diag_margin = diag.min_constraint_margin
            if diag.predicted_state is not None:
                x_pred_log[i] = diag.predicted_state
            if diag.fault:
                faults.append(f"step {i}: {diag.fault}")
        else:
            u_des = np.atleast_1d(desired(x_est))
            u_cmd, diag = filt.filter_step(x_est, dx_filter, u_des)
            diag_status, diag_fallback = diag.qp_status, diag.fallback
            diag_margin = diag.min_constraint_margin
            if diag.fault:
                faults.append(f"step {i}: {diag.fault}")

        u_cmd = model.saturate(u_cmd)
        u_hist[i] = u_cmd
        u_cmd_log[i] = u_cmd

        # record the sample before advancing the plant
        _record(cols, statuses, i, i * dt, x_true, x_est, dx_box, u_des,
                h_prev_inter, spec, diag_margin, diag_fallback, diag_status)

        # plant: advance one period at substep resolution through the delay line
        h_inter = math.inf
        applied_first = None
        segments: list[tuple[np.ndarray, float]] = []
        for s in range(nsub):
            gsub = i * nsub + s - delay_subs
            u_app = u_hist[gsub // nsub] if gsub >= 0 else np.zeros(model.m)
            if applied_first is None:
                applied_first = u_app
            if segments and np.array_equal(segments[-1][0], u_app):
                segments[-1] = (u_app, segments[-1][1] + sub_h)
            else:
                segments.append((u_app, sub_h))
            x_true = step_zoh(model, x_true, u_app, sub_h)
            h_inter = min(h_inter, float(spec.h(x_true)))
        cols["u_applied"][i] = applied_first[0]
        h_prev_inter = h_inter

        if sc.noise:
            # one RK4 substep per held segment is plenty for the EKF model
            est = ekf_predict_piecewise(model, est, segments, Q_d)

    # terminal row: fresh state, last controls held
    if sc.noise:
        z = sensor.measure(x_true)
        est = ekf_update(est, z, H, R)
        x_est_f = est.mean
        dx_f = uncertainty_box(est, cfg.estimation.confidence_scale, cfg.estimation.box_caps)
    else:
        x_est_f, dx_f = x_true.copy(), point_box
    _record(cols, statuses, steps, steps * dt, x_true, x_est_f, dx_f,
            np.atleast_1d(desired(x_est_f)), h_prev_inter, spec,
            cols["min_constraint_margin"][steps - 1] if steps else math.nan,
            bool(cols["fallback"][steps - 1]) if steps else False,
            statuses[-1] if statuses else "unfiltered")
    cols["u_applied"][steps] = cols["u_applied"][steps - 1] if steps else 0.0

    min_h = float(min(np.min(cols["h"]), np.min(cols["h_intersample"])))
    summary = RunSummary(
        min_h=min_h, safe=min_h >= 0.0,
        max_abs_p=float(np.max(np.abs(cols["p"]))),
        wall_time_s=time.perf_counter() - t_start,
        faults=tuple(faults))
    samples = {name: (np.array(statuses, dtype=object) if name == "qp_status"
                      else cols[name]) for name in CSV_COLUMNS}
    extras = {"x_pred": x_pred_log, "u_cmd": u_cmd_log, "delay_steps": n_delay,
              "eps_level": rt.eps_level,
              "position_bound": cfg.safety.position_bound}
    return RunResult(scenario=sc, samples=samples, summary=summary, extras=extras)


def _record(cols, statuses, i, t, x_true, x_est, dx_box, u_des, h_inter, spec,
            margin, fallback, status):
    cols["t"][i] = t
    for j, name in enumerate(("p", "p_dot", "theta", "theta_dot")):
        cols[name][i] = x_true[j]
    for j, name in enumerate(("p_est", "p_dot_est", "theta_est", "theta_dot_est")):
        cols[name][i] = x_est[j]
    rad = dx_box.rad
    for j, name in enumerate(("dx_rad_p", "dx_rad_p_dot", "dx_rad_theta", "dx_rad_theta_dot")):
        cols[name][i] = rad[j]
    cols["u_des"][i] = float(np.atleast_1d(u_des)[0])
    cols["h"][i] = float(spec.h(np.asarray(x_true)))
    cols["h_intersample"][i] = h_inter
    cols["min_constraint_margin"][i] = margin
    cols["fallback"][i] = 1.0 if fallback else 0.0
    statuses.append(status)


def emit_csv(result: RunResult, path) -> None:
    """One header row plus one row per sample; floats at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        n = result.record_count
        for i in range(n):
            row = []
            for name in CSV_COLUMNS:
                val = result.samples[name][i]
                row.append(str(val) if name == "qp_status" else f"{float(val):.17g}")
            writer.writerow(row)


def parse_csv(path) -> dict:
    """Read an emitted CSV back into the samples dict (exact for floats)."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out: dict = {}
    for j, name in enumerate(header):
        if name == "qp_status":
            out[name] = np.array([r[j] for r in rows], dtype=object)
        else:
            out[name] = np.array([float(r[j]) for r in rows])
    return out


def emit_plots(result_or_results, out_dir, prefix: str = "run") -> list:
    """Single run -> position/barrier/input SVGs; a list -> one overlay SVG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(result_or_results, RunResult):
        res = result_or_results
        t = res.samples["t"]
        bound = _position_bound(res)
        written = []

        plot = LinePlot(f"{prefix}: position", "t [s]", "p [m]")
        plot.add_series("p", t, res.samples["p"])
        plot.add_hline(bound, f"+{bound} m")
        plot.add_hline(-bound, f"-{bound} m")
        path = out_dir / f"{prefix}_position.svg"
        plot.write(path)
        written.append(path)

        plot = LinePlot(f"{prefix}: barrier value", "t [s]", "h")
        plot.add_series("h", t, res.samples["h"])
        plot.add_series("h intersample", t, res.samples["h_intersample"], dash="4,3")
        plot.add_hline(0.0, "h = 0")
        path = out_dir / f"{prefix}_barrier.svg"
        plot.write(path)
        written.append(path)

        plot = LinePlot(f"{prefix}: input", "t [s]", "u [command]")
        plot.add_series("u desired", t, res.samples["u_des"], dash="4,3")
        plot.add_series("u applied", t, res.samples["u_applied"])
        path = out_dir / f"{prefix}_input.svg"
        plot.write(path)
        written.append(path)
        return written

    results = list(result_or_results)
    plot = LinePlot("position overlay", "t [s]", "p [m]")
    bound = _position_bound(results[0][1]) if results else 0.5
    for name, res in results:
        plot.add_series(name, res.samples["t"], res.samples["p"])
    plot.add_hline(bound, f"+{bound} m")
    plot.add_hline(-bound, f"-{bound} m")
    path = Path(out_dir) / f"{prefix}_overlay.svg"
    plot.write(path)
    return [path]


def _position_bound(result: RunResult) -> float:
    return float(result.extras.get("position_bound", 0.5))


# The two delay rows run at 100 Hz so the 30 ms delay is an integer three
# periods; their duration is trimmed (the contrast shows within seconds and
# the rows dominate the grid budget).
GRID_ROWS = (
    ("nominal-40hz", dict(variant="nominal", frequency_hz=40.0, delay_s=0.0)),
    ("nominal-20hz", dict(variant="nominal", frequency_hz=20.0, delay_s=0.0)),
    ("robust-20hz", dict(variant="robust", frequency_hz=20.0, delay_s=0.0)),
    ("nominal-delay30ms", dict(variant="nominal", frequency_hz=100.0, delay_s=0.03,
                               duration_s=12.0)),
    ("delay-aware-30ms", dict(variant="robust_delay_aware", frequency_hz=100.0,
                              delay_s=0.03, duration_s=12.0)),
)


def _run_row(args):
    cfg, name, overrides = args
    row_cfg = cfg.with_scenario(**overrides)
    try:
        result = run_scenario(row_cfg)
        return name, result, None
    except Exception as exc:  # grid continues past a crashed scenario
        return name, None, f"{type(exc).__name__}: {exc}"


def run_grid(cfg: Config | None = None, out_dir=None, parallel: bool = True) -> dict:
    """Run the five canonical scenarios and write the verdict table.

    Returns {name: RunResult | None}; writes one CSV per scenario, a verdict
    table, and a position overlay SVG when out_dir is given.
    """
    cfg = cfg or load_config()
    jobs = [(cfg, name, dict(overrides)) for name, overrides in GRID_ROWS]
    # longest jobs first so a small worker pool packs them tightly
    jobs.sort(key=lambda j: j[2]["frequency_hz"]
              * j[2].get("duration_s", cfg.scenario.duration_s), reverse=True)
    results: dict = {}
    errors: dict = {}
    if parallel:
        workers = min(os.cpu_count() or 2, len(jobs))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, result, err in pool.map(_run_row, jobs):
                results[name] = result
                if err:
                    errors[name] = err
    else:
        for job in jobs:
            name, result, err = _run_row(job)
            results[name] = result
            if err:
                errors[name] = err
    results = {name: results[name] for name, _ in GRID_ROWS}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "verdicts.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "variant", "frequency_hz", "delay_ms",
                             "min_h", "max_abs_p", "verdict"])
            for name, overrides in GRID_ROWS:
                res = results.get(name)
                if res is None:
                    row = dict(overrides)
                    writer.writerow([name, row.get("variant", ""),
                                     row.get("frequency_hz", ""),
                                     1e3 * row.get("delay_s", 0.0),
                                     "", "", f"ERROR: {errors.get(name, 'unknown')}"])
                else:
                    writer.writerow([
                        name, res.scenario.variant, res.scenario.frequency_hz,
                        1e3 * res.scenario.delay_s,
                        f"{res.summary.min_h:.6g}", f"{res.summary.max_abs_p:.6g}",
                        "SAFE" if res.summary.safe else "UNSAFE"])
        for name, res in results.items():
            if res is not None:
                emit_csv(res, out_dir / f"{name}.csv")
                emit_plots(res, out_dir, prefix=name)
        emit_plots([(n, r) for n, r in results.items() if r is not None],
                   out_dir, prefix="grid")
    return results
