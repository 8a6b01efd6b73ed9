"""Inverter-fed IPMSM physics in the rotor-oriented dq frame.

States and voltages are plain ``numpy`` arrays of shape ``(2,)`` holding
``(i_d, i_q)`` and ``(u_d, u_q)``. Switch states are tuples of three legs in
``{+1, -1}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi
SQRT3_2 = math.sqrt(3.0) / 2.0

SwitchState = tuple[int, int, int]


@dataclass(frozen=True)
class MotorParams:
    """Electrical machine constants. Defaults are the test-bench IPMSM."""

    r_s: float = 18e-3
    l_d: float = 370e-6
    l_q: float = 1200e-6
    psi_p: float = 66e-3
    pole_pairs: int = 3

    def __post_init__(self):
        for name in ("r_s", "l_d", "l_q", "psi_p"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise ValueError("pole_pairs must be a positive integer")


@dataclass(frozen=True)
class OperatingCondition:
    omega_el: float = 0.0
    u_dc: float = 300.0

    def __post_init__(self):
        if not self.u_dc > 0:
            raise ValueError("u_dc must be positive")
        if not math.isfinite(self.omega_el):
            raise ValueError("omega_el must be finite")

    @classmethod
    def from_speed(cls, speed_rpm: float, params: MotorParams, u_dc: float = 300.0):
        return cls(omega_el=electrical_speed(speed_rpm, params.pole_pairs), u_dc=u_dc)


def electrical_speed(speed_rpm: float, pole_pairs: int) -> float:
    """Electrical angular frequency (rad/s) for a mechanical speed in min^-1."""
    return pole_pairs * TWO_PI * speed_rpm / 60.0


def reduce_angle(eps: float) -> float:
    """Representative of ``eps`` in ``[0, 2*pi)``."""
    r = math.fmod(eps, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if r >= TWO_PI else r


@dataclass(frozen=True)
class VoltageVector:
    index: int
    alpha_beta: tuple[float, float]  # at u_dc = 1 V
    representative_states: tuple[SwitchState, ...] = field(default=())


def switch_to_alphabeta(s, u_dc: float) -> np.ndarray:
    """Stationary-frame voltage of switch state ``s`` at DC-link voltage ``u_dc``."""
    sa, sb, sc = s
    h = 0.5 * u_dc
    u_alpha = (2.0 / 3.0) * h * (sa - 0.5 * sb - 0.5 * sc)
    u_beta = (2.0 / 3.0) * h * SQRT3_2 * (sb - sc)
    return np.array([u_alpha, u_beta])


def rotation(eps: float) -> np.ndarray:
    c, s = math.cos(eps), math.sin(eps)
    return np.array([[c, s], [-s, c]])


def park_rotate(alpha_beta, eps: float) -> np.ndarray:
    """Rotate a stationary-frame pair into the dq frame at angle ``eps``."""
    c, s = math.cos(eps), math.sin(eps)
    a, b = alpha_beta
    return np.array([c * a + s * b, -s * a + c * b])


def inverse_park(dq, eps: float) -> np.ndarray:
    return park_rotate(dq, -eps)


def alphabeta_to_abc(alpha_beta) -> np.ndarray:
    """Amplitude-invariant inverse Clarke transform (zero-sequence free)."""
    a, b = alpha_beta
    return np.array([a, -0.5 * a + SQRT3_2 * b, -0.5 * a - SQRT3_2 * b])


def dq_to_abc(dq, eps: float) -> np.ndarray:
    return alphabeta_to_abc(inverse_park(dq, eps))


def system_matrix(cond: OperatingCondition, p: MotorParams) -> np.ndarray:
    w = cond.omega_el
    return np.array(
        [
            [-p.r_s / p.l_d, p.l_q * w / p.l_d],
            [-p.l_d * w / p.l_q, -p.r_s / p.l_q],
        ]
    )


def back_emf_offset(cond: OperatingCondition, p: MotorParams) -> np.ndarray:
    return np.array([0.0, -p.psi_p * cond.omega_el / p.l_q])


def continuous_derivative(x, u, cond: OperatingCondition, p: MotorParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return (
        system_matrix(cond, p) @ x
        + np.array([u[0] / p.l_d, u[1] / p.l_q])
        + back_emf_offset(cond, p)
    )


def euler_step(x, u, cond: OperatingCondition, p: MotorParams, t_s: float) -> np.ndarray:
    """One explicit Euler step of the dq current model."""
    if not t_s > 0:
        raise ValueError("t_s must be positive")
    x = np.asarray(x, dtype=float)
    return x + t_s * continuous_derivative(x, u, cond, p)


class DqPlant:
    """Continuous dq current dynamics integrated with classical RK4.

    The stationary-frame voltage is held constant over a call while the rotor
    angle advances, so the dq voltage is re-evaluated at every RK stage.
    Coefficients are cached as floats because this sits in the inner loop.
    """

    def __init__(self, cond: OperatingCondition, p: MotorParams):
        self.cond = cond
        self.params = p
        w = cond.omega_el
        self.omega = w
        self.a11 = -p.r_s / p.l_d
        self.a12 = p.l_q * w / p.l_d
        self.a21 = -p.l_d * w / p.l_q
        self.a22 = -p.r_s / p.l_q
        self.inv_ld = 1.0 / p.l_d
        self.inv_lq = 1.0 / p.l_q
        self.c_q = -p.psi_p * w / p.l_q

    def _f(self, i_d, i_q, ua, ub, eps):
        c, s = math.cos(eps), math.sin(eps)
        u_d = c * ua + s * ub
        u_q = -s * ua + c * ub
        return (
            self.a11 * i_d + self.a12 * i_q + self.inv_ld * u_d,
            self.a21 * i_d + self.a22 * i_q + self.inv_lq * u_q + self.c_q,
        )

    def rk4(self, i_d, i_q, ua, ub, eps, dt):
        """Single RK4 step of length ``dt`` starting at angle ``eps``."""
        f = self._f
        h2 = 0.5 * dt
        e_mid = eps + self.omega * h2
        k1d, k1q = f(i_d, i_q, ua, ub, eps)
        k2d, k2q = f(i_d + h2 * k1d, i_q + h2 * k1q, ua, ub, e_mid)
        k3d, k3q = f(i_d + h2 * k2d, i_q + h2 * k2q, ua, ub, e_mid)
        k4d, k4q = f(i_d + dt * k3d, i_q + dt * k3q, ua, ub, eps + self.omega * dt)
        return (
            i_d + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
            i_q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
        )

    def integrate(self, x, alpha_beta, eps, t_s, substeps, record=None):
        """Advance ``x`` over ``t_s`` in ``substeps`` RK4 steps.

        If ``record`` is a list, ``(i_d, i_q, eps)`` after every substep is
        appended to it.
        """
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        dt = t_s / substeps
        i_d, i_q = float(x[0]), float(x[1])
        ua, ub = float(alpha_beta[0]), float(alpha_beta[1])
        for k in range(substeps):
            e0 = eps + self.omega * dt * k
            i_d, i_q = self.rk4(i_d, i_q, ua, ub, e0, dt)
            if record is not None:
                record.append((i_d, i_q, eps + self.omega * dt * (k + 1)))
        return np.array([i_d, i_q])


def plant_step(x, s, eps, cond: OperatingCondition, p: MotorParams, t_s: float, substeps: int = 50):
    """Truth-plant response to switch state ``s`` held for ``t_s``."""
    return DqPlant(cond, p).integrate(x, switch_to_alphabeta(s, cond.u_dc), eps, t_s, substeps)


def voltage_vectors() -> list[VoltageVector]:
    """The seven distinct inverter voltage vectors at unit DC-link voltage.

    Index 0 merges both zero states; indices 1..6 follow the alpha-beta angle
    counter-clockwise from 0 degrees.
    """
    zero: list[SwitchState] = []
    active = []
    for s in itertools.product((1, -1), repeat=3):
        ab = switch_to_alphabeta(s, 1.0)
        if np.allclose(ab, 0.0, atol=1e-15):
            zero.append(s)
        else:
            angle = math.atan2(ab[1], ab[0]) % TWO_PI
            # snap so 360 deg - tiny rounds to 0 deg
            active.append((round(angle, 9) % round(TWO_PI, 9), s, ab))
    zero.sort(reverse=True)  # (+1,+1,+1) first
    active.sort(key=lambda t: t[0])
    out = [VoltageVector(0, (0.0, 0.0), tuple(zero))]
    for i, (_, s, ab) in enumerate(active, start=1):
        out.append(VoltageVector(i, (float(ab[0]), float(ab[1])), (s,)))
    return out


VECTORS = voltage_vectors()

# alpha-beta voltages at unit u_dc, shape (7, 2)
VECTOR_ALPHABETA = np.array([v.alpha_beta for v in VECTORS])

STATE_TO_INDEX: dict[SwitchState, int] = {
    s: v.index for v in VECTORS for s in v.representative_states
}


def vector_index(s) -> int:
    return STATE_TO_INDEX[tuple(int(v) for v in s)]
