"""Closed-loop simulation at constant speed with one period of actuation delay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import drive
from .drive import DqPlant, MotorParams, OperatingCondition
from .foc import FocConfig, FocController, PwmModulator, duty_cycles
from .koopman import N_VECTORS, KoopmanModelBank, snapshot_indices
from .log import LogBuilder, TrajectoryLog
from .mpc import HorizonConfig, koopman_mpc, whitebox_mpc

CONTROLLERS = ("koopman-mpc", "whitebox-mpc", "foc")


class ConfigError(ValueError):
    pass


class CoverageError(RuntimeError):
    def __init__(self, counts, required):
        low = [v for v, c in enumerate(counts) if c < required]
        super().__init__(
            "training data under-covers vector index "
            + ", ".join(f"{v} ({counts[v]} < {required} pairs)" for v in low)
        )
        self.counts = counts
        self.vector_indices = low


class MissingModel(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "nominal"
    speed_rpm: float = 1000.0
    u_dc: float = 300.0
    duration: float = 0.05
    reference_schedule: list = field(default_factory=lambda: [(0.0, 0.0, 0.0)])
    controller: str = "whitebox-mpc"
    seed: int = 0
    eps0: float = 0.0
    foc: FocConfig = field(default_factory=FocConfig)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        times = [float(r[0]) for r in self.reference_schedule]
        if not times or any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("reference schedule times must be non-decreasing")
        if times[-1] > self.duration:
            raise ConfigError("reference schedule extends beyond the duration")

    def reference_at(self, t: float):
        ref = (0.0, 0.0)
        for t0, i_d, i_q in self.reference_schedule:
            if t0 <= t + 1e-12:
                ref = (float(i_d), float(i_q))
            else:
                break
        return ref


@dataclass
class TrainingConfig:
    speed_rpm: float = 1000.0
    u_dc: float = 300.0
    duration: float = 0.4
    id_range: tuple = (-170.0, 0.0)
    iq_range: tuple = (-170.0, 170.0)
    dwell_range: tuple = (0.5e-3, 2e-3)
    min_pairs_per_vector: int = 200
    seed: int = 0

    def schedule(self):
        rng = np.random.default_rng(self.seed)
        out = []
        t = 0.0
        while t < self.duration:
            out.append((t, rng.uniform(*self.id_range), rng.uniform(*self.iq_range)))
            t += rng.uniform(*self.dwell_range)
        return out


def _timing(t_s, substeps):
    if substeps < 1 or int(substeps) != substeps:
        raise ConfigError("substeps must be a positive integer")
    if not t_s > 0:
        raise ConfigError("t_s must be positive")
    return t_s / substeps


def run_closed_loop(
    scenario: ScenarioConfig,
    params: MotorParams = MotorParams(),
    bank: KoopmanModelBank | None = None,
    t_s: float = 50e-6,
    substeps: int = 50,
    n_p: int = 3,
    delay_compensation: bool = True,
    keep_fine: bool = True,
    x0=(0.0, 0.0),
) -> TrajectoryLog:
    """Simulate one scenario; every command acts one period after it is computed."""
    fine_dt = _timing(t_s, substeps)
    cond = OperatingCondition.from_speed(scenario.speed_rpm, params, scenario.u_dc)
    w = cond.omega_el
    plant = DqPlant(cond, params)
    horizon = HorizonConfig(n_p=n_p, t_s=t_s)
    n_periods = int(round(scenario.duration / t_s))

    ctrl = scenario.controller
    mpc = foc = pwm = None
    if ctrl == "whitebox-mpc":
        mpc = whitebox_mpc(params, cond, horizon, delay_compensation=delay_compensation)
    elif ctrl == "koopman-mpc":
        if bank is None:
            raise MissingModel("koopman-mpc requires a trained model bank")
        mpc = koopman_mpc(bank, horizon, delay_compensation=delay_compensation)
    else:
        cfg = scenario.foc
        if abs(cfg.t_s_foc - t_s) > 1e-15:
            raise ConfigError("FOC cycle time must equal the simulation controller period")
        try:
            pwm = PwmModulator(cfg, fine_dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        foc = FocController(params, cond, cfg)

    log = LogBuilder(t_s, keep_fine=keep_fine)
    fine_dq = []
    fine_sw = []

    x = np.array(x0, dtype=float)
    applied = (1, 1, 1)  # MPC switch state effective in the current period
    u_effective = np.zeros(2)  # FOC voltage command effective in the current period
    quarter = 0.25 * (scenario.foc.carrier_period if foc else 0.0)

    for k in range(n_periods):
        t = k * t_s
        eps_raw = scenario.eps0 + w * t
        eps = drive.reduce_angle(eps_raw)
        refs = scenario.reference_at(t)

        if mpc is not None:
            decision = mpc.control_step(x[0], x[1], eps, refs)
            record = [] if keep_fine else None
            ab = drive.switch_to_alphabeta(applied, cond.u_dc)
            x_next = plant.integrate(x, ab, eps_raw, t_s, substeps, record)
            if keep_fine:
                fine_dq.extend(record)
                fine_sw.extend([applied] * substeps)
            log.add(
                time=t, i_d=x[0], i_q=x[1], eps=eps,
                vector=drive.vector_index(applied), switch=applied,
                cmd_vector=decision.vector_index, id_ref=refs[0], iq_ref=refs[1],
                u_dc=cond.u_dc, best_cost=decision.best_cost, toggles=decision.toggles,
                duty=(math.nan,) * 3, overmodulated=False,
            )
            applied = decision.switch_state
        else:
            u_cmd = foc.control_step(x, refs)
            i_d, i_q = float(x[0]), float(x[1])
            sw0 = None
            over = False
            for j in range(substeps):
                if pwm.at_extreme():
                    e_lat = eps_raw + w * (j * fine_dt + quarter)
                    duty, ov = duty_cycles(drive.inverse_park(u_effective, e_lat), cond.u_dc)
                    pwm.latch(duty, ov)
                over = over or pwm.overmodulated
                s = pwm.next_state()
                if sw0 is None:
                    sw0 = s
                ab = drive.switch_to_alphabeta(s, cond.u_dc)
                e0 = eps_raw + w * fine_dt * j
                i_d, i_q = plant.rk4(i_d, i_q, ab[0], ab[1], e0, fine_dt)
                if keep_fine:
                    fine_dq.append((i_d, i_q, eps_raw + w * fine_dt * (j + 1)))
                    fine_sw.append(s)
            x_next = np.array([i_d, i_q])
            log.add(
                time=t, i_d=x[0], i_q=x[1], eps=eps,
                vector=-1, switch=sw0, cmd_vector=-1,
                id_ref=refs[0], iq_ref=refs[1], u_dc=cond.u_dc,
                best_cost=math.nan, toggles=0, duty=tuple(pwm.duty), overmodulated=over,
            )
            u_effective = u_cmd
        x = x_next

    if keep_fine and fine_dq:
        arr = np.asarray(fine_dq)
        n = np.arange(1, len(arr) + 1)
        log.fine_time = list(n * fine_dt)
        log.fine_iabc = list(phase_currents(arr[:, 0], arr[:, 1], arr[:, 2]))
        log.fine_switch = fine_sw

    meta = {
        "scenario": scenario.name,
        "controller": ctrl,
        "speed_rpm": scenario.speed_rpm,
        "omega_el": w,
        "t_s": t_s,
        "substeps": substeps,
        "n_p": n_p,
        "seed": scenario.seed,
        "delay_compensation": delay_compensation,
    }
    if foc is not None:
        meta.update(
            a=scenario.foc.a,
            oversampling=scenario.foc.oversampling,
            carrier_freq=scenario.foc.carrier_freq,
        )
    return log.build(meta)


def phase_currents(i_d, i_q, eps) -> np.ndarray:
    """Phase currents ``(n, 3)`` from dq samples at angles ``eps``."""
    i_d, i_q, eps = map(np.asarray, (i_d, i_q, eps))
    c, s = np.cos(eps), np.sin(eps)
    i_alpha = c * i_d - s * i_q
    i_beta = s * i_d + c * i_q
    h = math.sqrt(3.0) / 2.0
    return np.stack([i_alpha, -0.5 * i_alpha + h * i_beta, -0.5 * i_alpha - h * i_beta], axis=1)


def vector_pair_counts(log: TrajectoryLog) -> list[int]:
    return [len(snapshot_indices(log, v)) for v in range(N_VECTORS)]


def generate_training_data(
    cfg: TrainingConfig = TrainingConfig(),
    params: MotorParams = MotorParams(),
    t_s: float = 50e-6,
    substeps: int = 50,
    n_p: int = 3,
) -> TrajectoryLog:
    """White-box MPC run under seeded random reference steps."""
    scenario = ScenarioConfig(
        name="training",
        speed_rpm=cfg.speed_rpm,
        u_dc=cfg.u_dc,
        duration=cfg.duration,
        reference_schedule=cfg.schedule(),
        controller="whitebox-mpc",
        seed=cfg.seed,
    )
    log = run_closed_loop(scenario, params, t_s=t_s, substeps=substeps, n_p=n_p, keep_fine=False)
    counts = vector_pair_counts(log)
    if min(counts) < cfg.min_pairs_per_vector:
        raise CoverageError(counts, cfg.min_pairs_per_vector)
    return log


def delay_model_check(log: TrajectoryLog) -> bool:
    """True iff every MPC command computed in period i is applied in period i+1.

    PWM-modulated periods (``cmd_vector == -1``) carry no vector command and
    are skipped.
    """
    cmd = np.asarray(log.cmd_vector)
    vec = np.asarray(log.vector)
    if len(cmd) < 2:
        return True
    mask = cmd[:-1] >= 0
    return bool(np.all(vec[1:][mask] == cmd[:-1][mask]))
