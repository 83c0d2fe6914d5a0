"""Scenario configuration: YAML with fixed nested sections, strict keys.

Every key has a default in ``DEFAULTS``; a scenario file only overrides what
it needs.  Unknown keys, wrong shapes and invalid values raise InvalidConfig.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .control import Gains
from .dynamics import InterconnectedModel, ObjectModel, TaskSpaceArm, default_quad
from .errors import InvalidConfig
from .rigidmotion import KinematicParams, UnitQuaternion
from .sim import EstimatorSettings, NoiseSpec, SimConfig, TrajectorySpec
from .rigidmotion import param_error_norm
from .stability import BoundConstants, OperatingRegion, StabilityReport, estimate_constants, kappa_bounds, stability_report


def _arm_defaults(phase: float) -> dict:
    return {
        "mass_diag": [5.0, 5.0, 5.0, 0.5, 0.5, 0.5],
        "coupling": 0.1,
        "modulation_diag": [1.0, 1.0, 1.0, 0.1, 0.1, 0.1],
        "modulation_amplitude": 0.5,
        "wave": [0.8, 0.5, 0.3, 0.6, 0.4, 0.2],
        "gravity": [0.0, 0.0, 30.0, 0.5, 0.2, 0.0],
        "gravity_wave": [1.0, 0.5, 2.0, 0.1, 0.1, 0.1],
        "coriolis_scale": 0.3,
        "coriolis_phase": phase,
    }


DEFAULTS: dict = {
    "plant": {
        "object": {
            "mass": 4.0,
            "inertia": [0.08, 0.10, 0.12],
            "gravity": [0.0, 0.0, 39.24, 0.0, 0.0, 0.0],
            "coriolis_scale": 0.05,
            "coriolis_phase": 3.0,
        },
        "arm1": _arm_defaults(1.0),
        "arm2": _arm_defaults(2.0),
        "lambda": None,
        "x1_offset": [0.0] * 6,
        "orientation": "euler_xyz",
    },
    "theta_true": {"rho": [0.1, -0.2, 0.3], "quaternion": None, "axis": [1.0, 2.0, 3.0], "angle_deg": 30.0},
    "theta_guess": {"rho": [0.0, 0.0, 0.0], "quaternion": None, "axis": [0.0, 0.0, 1.0], "angle_deg": 0.0},
    "gains": {"kp": 25.0, "kd": 10.0},
    "estimators": {
        "mu_attitude": 0.9,
        "mu_displacement": 0.9,
        "p0": 100.0,
        "window": 1000,
        "pe_threshold": 1e-3,
        "sample_interval": None,
        "degenerate_tol": 1e-9,
    },
    "trajectory": {
        "kind": "rotating-axis-sine",
        "amplitude": [0.05, 0.05, 0.05, 0.3, 0.3, 0.3],
        "base_frequency": 0.2,
        "axis_precession_rate": 0.7,
        "duration": 20.0,
        "start": [0.0] * 6,
        "c_v": None,
        "c_a": None,
    },
    "noise": {"twist_noise_std": 0.0, "seed": 0},
    "run": {
        "dt": 1e-3,
        "adaptation": True,
        "initial_error": [0.0] * 6,
        "initial_rate_error": [0.0] * 6,
        "arm2_position": [0.5, 0.0, 0.0],
        "control_decimation": 1,
    },
    "analysis": {
        "samples": 2000,
        "radius": 0.05,
        "alpha": 1.0,
        "r_z": None,
        "pose_margin": 0.1,
        "speed_margin": 0.5,
        "arm2_halfwidth": 0.5,
        "seed": 0,
        "eps_t": None,
    },
}


def _merge(base: dict, override: dict, path: str) -> dict:
    if not isinstance(override, dict):
        raise InvalidConfig(f"section {path or '<root>'} must be a mapping")
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise InvalidConfig(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value if value is not None else {}, where)
        else:
            out[key] = value
    return out


def merge_config(raw: dict | None) -> dict:
    return _merge(DEFAULTS, raw or {}, "")


def load_config(path) -> dict:
    """Read a scenario file and merge it over the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfig(f"config {path} is not valid YAML: {exc}") from exc
    return merge_config(raw)


def default_config_path() -> Path:
    return Path(str(resources.files("cooptune") / "data" / "default.yaml"))


def config_digest(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of a merged config."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# section builders


def _vec(value, n: int, where: str) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where} must be numeric") from exc
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise InvalidConfig(f"{where} must have {n} entries, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidConfig(f"{where} must be finite")
    return a


def _num(value, where: str, positive: bool = False, nonneg: bool = False) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where} must be a number") from exc
    if not math.isfinite(v) or (positive and v <= 0.0) or (nonneg and v < 0.0):
        raise InvalidConfig(f"{where} is out of range: {value!r}")
    return v


def _matrix_or_diag(value, where: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim <= 1:
        return np.diag(_vec(a, 6, where))
    if a.shape != (6, 6):
        raise InvalidConfig(f"{where} must be a scalar, 6 diagonal entries or a 6x6 matrix")
    return a


def build_arm(sec: dict, where: str) -> TaskSpaceArm:
    diag = _vec(sec["mass_diag"], 6, f"{where}.mass_diag")
    coupling = _num(sec["coupling"], f"{where}.coupling", nonneg=True)
    m0 = np.diag(diag) + coupling * (np.ones((6, 6)) - np.eye(6)) * np.sqrt(np.outer(diag, diag)) / 6.0
    return TaskSpaceArm(
        m0=m0,
        modulation=np.diag(_vec(sec["modulation_diag"], 6, f"{where}.modulation_diag")),
        eps=_num(sec["modulation_amplitude"], f"{where}.modulation_amplitude", nonneg=True),
        wave=_vec(sec["wave"], 6, f"{where}.wave"),
        gravity=_vec(sec["gravity"], 6, f"{where}.gravity"),
        gravity_wave=_vec(sec["gravity_wave"], 6, f"{where}.gravity_wave"),
        quad=default_quad(_num(sec["coriolis_scale"], f"{where}.coriolis_scale"), _num(sec["coriolis_phase"], f"{where}.coriolis_phase")),
    )


def build_model(plant: dict) -> InterconnectedModel:
    obj = plant["object"]
    mass = _num(obj["mass"], "plant.object.mass", positive=True)
    inertia = _vec(obj["inertia"], 3, "plant.object.inertia")
    if np.any(inertia <= 0.0):
        raise InvalidConfig("plant.object.inertia must be positive")
    lam = np.eye(6) if plant["lambda"] is None else _matrix_or_diag(plant["lambda"], "plant.lambda")
    return InterconnectedModel(
        arm1=build_arm(plant["arm1"], "plant.arm1"),
        arm2=build_arm(plant["arm2"], "plant.arm2"),
        object=ObjectModel(
            mass_matrix=np.diag(np.concatenate((np.full(3, mass), inertia))),
            gravity=_vec(obj["gravity"], 6, "plant.object.gravity"),
            quad=default_quad(_num(obj["coriolis_scale"], "plant.object.coriolis_scale"), _num(obj["coriolis_phase"], "plant.object.coriolis_phase")),
        ),
        lambda_matrix=lam,
        x1_offset=_vec(plant["x1_offset"], 6, "plant.x1_offset"),
        orientation=str(plant["orientation"]),
    )


def build_params(sec: dict, where: str) -> KinematicParams:
    rho = _vec(sec["rho"], 3, f"{where}.rho")
    if sec["quaternion"] is not None:
        eta = UnitQuaternion.from_array(_vec(sec["quaternion"], 4, f"{where}.quaternion"))
    else:
        axis = _vec(sec["axis"], 3, f"{where}.axis")
        if np.linalg.norm(axis) == 0.0:
            raise InvalidConfig(f"{where}.axis must be non-zero")
        eta = UnitQuaternion.from_axis_angle(axis, math.radians(_num(sec["angle_deg"], f"{where}.angle_deg")))
    return KinematicParams(rho, eta.canonical())


def build_gains(sec: dict) -> Gains:
    return Gains(_matrix_or_diag(sec["kp"], "gains.kp"), _matrix_or_diag(sec["kd"], "gains.kd"))


def build_trajectory(sec: dict) -> TrajectorySpec:
    return TrajectorySpec(
        kind=str(sec["kind"]),
        amplitude=_vec(sec["amplitude"], 6, "trajectory.amplitude"),
        base_frequency=_num(sec["base_frequency"], "trajectory.base_frequency", nonneg=True),
        axis_precession_rate=_num(sec["axis_precession_rate"], "trajectory.axis_precession_rate"),
        duration=_num(sec["duration"], "trajectory.duration", nonneg=True),
        start=_vec(sec["start"], 6, "trajectory.start"),
        c_v=None if sec["c_v"] is None else _num(sec["c_v"], "trajectory.c_v", positive=True),
        c_a=None if sec["c_a"] is None else _num(sec["c_a"], "trajectory.c_a", positive=True),
    )


@dataclass(frozen=True)
class AnalysisSettings:
    samples: int
    radius: float
    alpha: float
    r_z: float | None
    region: OperatingRegion
    seed: int
    eps_t: float | None = None


def build_sim_config(cfg: dict, seed: int | None = None, adaptation: bool | None = None) -> SimConfig:
    est = cfg["estimators"]
    run = cfg["run"]
    noise = cfg["noise"]
    window = est["window"]
    if not isinstance(window, int) or isinstance(window, bool):
        raise InvalidConfig("estimators.window must be an integer")
    decimation = run["control_decimation"]
    if not isinstance(decimation, int) or isinstance(decimation, bool):
        raise InvalidConfig("run.control_decimation must be an integer")
    noise_seed = noise["seed"] if seed is None else seed
    if not isinstance(noise_seed, int) or isinstance(noise_seed, bool) or noise_seed < 0:
        raise InvalidConfig("noise.seed must be a non-negative integer")
    adapt = run["adaptation"] if adaptation is None else adaptation
    if not isinstance(adapt, bool):
        raise InvalidConfig("run.adaptation must be true or false")
    return SimConfig(
        model=build_model(cfg["plant"]),
        theta_true=build_params(cfg["theta_true"], "theta_true"),
        theta_initial_guess=build_params(cfg["theta_guess"], "theta_guess"),
        gains=build_gains(cfg["gains"]),
        estimator=EstimatorSettings(
            mu_attitude=_num(est["mu_attitude"], "estimators.mu_attitude", nonneg=True),
            mu_displacement=_num(est["mu_displacement"], "estimators.mu_displacement", nonneg=True),
            p0=_num(est["p0"], "estimators.p0", positive=True),
            window=window,
            pe_threshold=_num(est["pe_threshold"], "estimators.pe_threshold", positive=True),
            sample_interval=None if est["sample_interval"] is None else _num(est["sample_interval"], "estimators.sample_interval", positive=True),
            degenerate_tol=_num(est["degenerate_tol"], "estimators.degenerate_tol", positive=True),
        ),
        dt=_num(run["dt"], "run.dt", positive=True),
        trajectory=build_trajectory(cfg["trajectory"]),
        noise=NoiseSpec(_vec(noise["twist_noise_std"], 6, "noise.twist_noise_std"), noise_seed),
        adaptation_enabled=adapt,
        initial_error=_vec(run["initial_error"], 6, "run.initial_error"),
        initial_rate_error=_vec(run["initial_rate_error"], 6, "run.initial_rate_error"),
        arm2_position=_vec(run["arm2_position"], 3, "run.arm2_position"),
        control_decimation=decimation,
    )


def build_analysis(cfg: dict, sim: SimConfig) -> AnalysisSettings:
    """Operating region covering the reference (plus margins) and the parameter-ball settings."""
    sec = cfg["analysis"]
    samples = sec["samples"]
    if not isinstance(samples, int) or isinstance(samples, bool):
        raise InvalidConfig("analysis.samples must be an integer")
    tr = sim.trajectory
    reach = 2.0 * np.abs(tr.amplitude)
    region = OperatingRegion(
        pose_center=tr.start,
        pose_halfwidth=reach + np.abs(sim.initial_error) + _num(sec["pose_margin"], "analysis.pose_margin", nonneg=True),
        arm2_position=sim.arm2_position,
        arm2_halfwidth=_num(sec["arm2_halfwidth"], "analysis.arm2_halfwidth", nonneg=True),
        speed=tr.c_v + _num(sec["speed_margin"], "analysis.speed_margin", nonneg=True),
    )
    seed = sec["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise InvalidConfig("analysis.seed must be a non-negative integer")
    return AnalysisSettings(
        samples=samples,
        radius=_num(sec["radius"], "analysis.radius", positive=True),
        alpha=_num(sec["alpha"], "analysis.alpha", positive=True),
        r_z=None if sec["r_z"] is None else _num(sec["r_z"], "analysis.r_z", positive=True),
        region=region,
        seed=seed,
        eps_t=None if sec["eps_t"] is None else _num(sec["eps_t"], "analysis.eps_t", nonneg=True),
    )


def analyze_scenario(
    sim: SimConfig, analysis: AnalysisSettings, r_theta_initial: float | None = None
) -> tuple[BoundConstants, tuple[float, float, float], StabilityReport]:
    """Sampled constants, growth coefficients and the stability report for a scenario.

    The parameter ball is centred on the true parameters with radius
    ``max(analysis.radius, alpha * r_theta_initial)``; ``r_theta_initial``
    defaults to the error of the configured initial guess.  InfeasibleBounds
    propagates when ``kappa2 = 0`` and no ``r_z`` is configured.
    """
    if r_theta_initial is None:
        r_theta_initial = param_error_norm(sim.theta_true, sim.theta_initial_guess)
    radius = max(analysis.radius, analysis.alpha * r_theta_initial)
    consts = estimate_constants(
        sim.model,
        sim.theta_true,
        radius,
        (sim.trajectory.c_v, sim.trajectory.c_a),
        analysis.samples,
        analysis.region,
        np.random.default_rng(analysis.seed),
    )
    if analysis.eps_t is not None:
        consts = replace(consts, eps_t=analysis.eps_t)
    kappas = kappa_bounds(consts, float(np.linalg.norm(sim.gains.stacked, 2)))
    report = stability_report(sim.gains, kappas, r_theta_initial, analysis.alpha, analysis.r_z)
    return consts, kappas, report
