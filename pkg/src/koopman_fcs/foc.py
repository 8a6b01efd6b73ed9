"""PI field-oriented current control with a carrier-based PWM modulator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drive import MotorParams, OperatingCondition, alphabeta_to_abc, inverse_park


@dataclass(frozen=True)
class FocConfig:
    a: float = 4.0
    oversampling: int = 5
    t_s_foc: float = 50e-6
    feedforward: bool = True

    def __post_init__(self):
        if int(self.oversampling) != self.oversampling or self.oversampling < 1:
            raise ValueError("oversampling must be a positive integer")
        if not self.a > 1:
            raise ValueError("symmetrical optimum parameter a must exceed 1")
        if not self.t_s_foc > 0:
            raise ValueError("t_s_foc must be positive")

    @property
    def carrier_period(self) -> float:
        return self.oversampling * self.t_s_foc

    @property
    def carrier_freq(self) -> float:
        return 1.0 / self.carrier_period

    @property
    def tau_sigma(self) -> float:
        # sampling + computation delay plus half a PWM period
        return 1.5 * self.t_s_foc + 0.5 * self.carrier_period


@dataclass(frozen=True)
class PiGains:
    k_p: float
    t_n: float
    output_limit: float

    def __post_init__(self):
        if not (self.k_p > 0 and self.t_n > 0 and self.output_limit > 0):
            raise ValueError("PI gains and limit must be positive")


def tune_symmetrical_optimum(p: MotorParams, axis: str, cfg: FocConfig, u_dc: float = 300.0) -> PiGains:
    """Symmetrical-optimum PI gains for one current axis (plant ``1/(R + sL)``)."""
    if axis not in ("d", "q"):
        raise ValueError("axis must be 'd' or 'q'")
    tau = (p.l_d if axis == "d" else p.l_q) / p.r_s
    ts = cfg.tau_sigma
    return PiGains(
        k_p=tau * p.r_s / (cfg.a * ts),
        t_n=cfg.a**2 * ts,
        output_limit=u_dc / math.sqrt(3.0),
    )


@dataclass
class PiState:
    integral: float = 0.0  # integrated error, A*s


def pi_step(error: float, gains: PiGains, dt: float, state: PiState) -> float:
    """Discrete PI with conditional-integration anti-windup."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    candidate = state.integral + error * dt
    u = gains.k_p * (error + candidate / gains.t_n)
    if abs(u) > gains.output_limit and u * error > 0:
        candidate = state.integral
        u = gains.k_p * (error + candidate / gains.t_n)
    state.integral = candidate
    return max(-gains.output_limit, min(gains.output_limit, u))


def decoupling_feedforward(x, cond: OperatingCondition, p: MotorParams) -> np.ndarray:
    i_d, i_q = float(x[0]), float(x[1])
    w = cond.omega_el
    return np.array([-w * p.l_q * i_q, w * (p.l_d * i_d + p.psi_p)])


def duty_cycles(u_alpha_beta, u_dc: float):
    """Min-max injected duty ratios; returns ``(duties, overmodulated)``."""
    u_abc = alphabeta_to_abc(u_alpha_beta)
    cm = 0.5 * (u_abc.max() + u_abc.min())
    d = 0.5 + (u_abc - cm) / u_dc
    over = bool(np.any(d < -1e-12) or np.any(d > 1.0 + 1e-12))
    return np.clip(d, 0.0, 1.0), over


def triangle(phase: float) -> float:
    """Unit triangle carrier: 0 at phase 0, 1 at phase 0.5."""
    return 2.0 * phase if phase < 0.5 else 2.0 - 2.0 * phase


class PwmModulator:
    """Carrier comparison at the fine time step.

    Duties latch at every carrier extreme (valley and peak). A leg is +1
    while the carrier, evaluated at the middle of the fine step, lies below
    its latched duty.
    """

    def __init__(self, cfg: FocConfig, fine_dt: float):
        steps = cfg.carrier_period / fine_dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) % 2:
            raise ValueError("fine_dt must divide half the carrier period")
        self.n_carrier = int(round(steps))
        self.k = 0
        self.duty = np.full(3, 0.5)
        self.overmodulated = False

    @property
    def phase(self) -> float:
        return self.k / self.n_carrier

    def at_extreme(self) -> bool:
        return self.k % (self.n_carrier // 2) == 0

    def latch(self, duty, overmodulated=False):
        self.duty = np.asarray(duty, dtype=float)
        self.overmodulated = overmodulated

    def next_state(self):
        c = triangle((self.k + 0.5) / self.n_carrier)
        s = tuple(1 if c < d else -1 for d in self.duty)
        self.k = (self.k + 1) % self.n_carrier
        return s


def modulate(u_dq_cmd, eps: float, u_dc: float, pwm: PwmModulator, n_steps: int):
    """Switch states for the next ``n_steps`` fine steps, latching at extremes."""
    duty, over = duty_cycles(inverse_park(u_dq_cmd, eps), u_dc)
    out = []
    for _ in range(n_steps):
        if pwm.at_extreme():
            pwm.latch(duty, over)
        out.append(pwm.next_state())
    return out


class FocController:
    """Two PI current loops with decoupling and a circular voltage limit."""

    def __init__(self, params: MotorParams, cond: OperatingCondition, cfg: FocConfig = FocConfig()):
        self.params = params
        self.cond = cond
        self.cfg = cfg
        self.gains_d = tune_symmetrical_optimum(params, "d", cfg, cond.u_dc)
        self.gains_q = tune_symmetrical_optimum(params, "q", cfg, cond.u_dc)
        self.state_d = PiState()
        self.state_q = PiState()
        self.u_limit = cond.u_dc / math.sqrt(3.0)
        self.saturated = False

    def control_step(self, x, refs) -> np.ndarray:
        """dq voltage command for measured currents ``x`` and ``refs``."""
        e_d = float(refs[0]) - float(x[0])
        e_q = float(refs[1]) - float(x[1])
        dt = self.cfg.t_s_foc
        old_d, old_q = self.state_d.integral, self.state_q.integral
        int_d = old_d + e_d * dt
        int_q = old_q + e_q * dt
        u = np.array(
            [
                self.gains_d.k_p * (e_d + int_d / self.gains_d.t_n),
                self.gains_q.k_p * (e_q + int_q / self.gains_q.t_n),
            ]
        )
        if self.cfg.feedforward:
            u = u + decoupling_feedforward(x, self.cond, self.params)
        mag = math.hypot(u[0], u[1])
        self.saturated = mag > self.u_limit
        if self.saturated:
            u *= self.u_limit / mag
            # conditional integration per axis
            if u[0] * e_d > 0:
                int_d = old_d
            if u[1] * e_q > 0:
                int_q = old_q
        self.state_d.integral = int_d
        self.state_q.integral = int_q
        return u


def foc_control_step(x, refs, controller: FocController) -> np.ndarray:
    return controller.control_step(x, refs)
