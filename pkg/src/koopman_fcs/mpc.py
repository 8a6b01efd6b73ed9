"""Finite-control-set MPC with exhaustive search over voltage-vector sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import drive
from .drive import VECTOR_ALPHABETA, VECTORS, MotorParams, OperatingCondition, SwitchState
from .koopman import KoopmanModelBank, observation

N_VECTORS = len(VECTORS)
ZERO_STATES = VECTORS[0].representative_states  # ((1,1,1), (-1,-1,-1))
TIE_RTOL = 1e-12


class WhiteBoxPredictor:
    """Euler-discretized dq model; internal state rows are ``(i_d, i_q, eps)``."""

    def __init__(self, params: MotorParams, cond: OperatingCondition, t_s: float):
        self.params = params
        self.cond = cond
        self.t_s = t_s
        self.F = np.eye(2) + t_s * drive.system_matrix(cond, params)
        self.offset = t_s * drive.back_emf_offset(cond, params)
        self.b = t_s * np.array([1.0 / params.l_d, 1.0 / params.l_q])
        self.uab = VECTOR_ALPHABETA * cond.u_dc  # (7, 2)
        self.d_eps = cond.omega_el * t_s

    def initial(self, i_d, i_q, eps) -> np.ndarray:
        return np.array([[float(i_d), float(i_q), float(eps)]])

    def step(self, states, v: int) -> np.ndarray:
        return self.step_all(states)[v]

    def step_all(self, states) -> np.ndarray:
        """Successors under every vector, shape ``(7, n, 3)``."""
        states = np.asarray(states, dtype=float)
        x = states[:, :2]
        eps = states[:, 2]
        c, s = np.cos(eps), np.sin(eps)
        ua, ub = self.uab[:, 0][:, None], self.uab[:, 1][:, None]  # (7, 1)
        u_d = c * ua + s * ub  # (7, n)
        u_q = -s * ua + c * ub
        free = x @ self.F.T + self.offset  # (n, 2)
        out = np.empty((N_VECTORS,) + states.shape)
        out[..., 0] = free[:, 0] + self.b[0] * u_d
        out[..., 1] = free[:, 1] + self.b[1] * u_q
        out[..., 2] = eps + self.d_eps
        return out

    @staticmethod
    def currents(states) -> np.ndarray:
        return np.asarray(states)[..., :2]


class KoopmanPredictor:
    """Linear per-vector maps on the lifted observation."""

    def __init__(self, bank: KoopmanModelBank):
        self.bank = bank
        self._mt = np.transpose(bank.matrices, (0, 2, 1)).copy()  # row-vector form
        self._pt = bank.projection[:2].T.copy()

    def initial(self, i_d, i_q, eps) -> np.ndarray:
        return self.bank.dictionary(observation(i_d, i_q, eps))[None, :]

    def step(self, states, v: int) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self._mt[v]

    def step_all(self, states) -> np.ndarray:
        return np.matmul(np.asarray(states, dtype=float)[None], self._mt)

    def currents(self, states) -> np.ndarray:
        return np.asarray(states) @ self._pt


@dataclass(frozen=True)
class HorizonConfig:
    n_p: int = 3
    t_s: float = 50e-6

    def __post_init__(self):
        if self.n_p < 1:
            raise ValueError("n_p must be >= 1")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")


@dataclass(frozen=True)
class MpcDecision:
    switch_state: SwitchState
    vector_index: int
    best_cost: float
    best_sequence: tuple[int, ...]
    evaluated_count: int
    toggles: int


def leg_toggles(a, b) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)


def choose_switch_state(vector_index: int, previous: SwitchState) -> SwitchState:
    """Concrete switch state for a vector; zero vector picks fewer toggles."""
    if not 0 <= vector_index < N_VECTORS:
        raise ValueError("vector_index must be in 0..6")
    if vector_index != 0:
        return VECTORS[vector_index].representative_states[0]
    plus, minus = ZERO_STATES
    if leg_toggles(minus, previous) < leg_toggles(plus, previous):
        return minus
    return plus


def sequence_toggles(seq, previous: SwitchState) -> int:
    total = 0
    s = tuple(previous)
    for v in seq:
        nxt = choose_switch_state(int(v), s)
        total += leg_toggles(s, nxt)
        s = nxt
    return total


def delay_compensate(state, applied_vector_index: int, predictor):
    """Advance the measured state over the period already committed."""
    return predictor.step(state, applied_vector_index)


def _as_ref_array(refs, n_p):
    refs = np.asarray(refs, dtype=float)
    if refs.ndim == 1:
        refs = np.tile(refs, (n_p, 1))
    if refs.shape != (n_p, 2):
        raise ValueError(f"refs must have {n_p} rows of (i_d*, i_q*)")
    return refs


def all_sequences(n_p: int) -> np.ndarray:
    """Every vector sequence in lexicographic order, shape ``(7**n_p, n_p)``."""
    grids = np.indices((N_VECTORS,) * n_p).reshape(n_p, -1).T
    return grids


def sequence_costs(start_state, refs, predictor, h: HorizonConfig) -> np.ndarray:
    """Cost of all ``7**n_p`` sequences in lexicographic order."""
    refs = _as_ref_array(refs, h.n_p)
    states = np.asarray(start_state, dtype=float).reshape(1, -1)
    cost = np.zeros(1)
    for i in range(h.n_p):
        nxt = predictor.step_all(states)  # (7, n, dim); new vector is the slow axis
        nxt = np.swapaxes(nxt, 0, 1)  # (n, 7, dim): parent-major, lexicographic
        cur = predictor.currents(nxt)
        err = cur - refs[i]
        cost = (cost[:, None] + np.sum(err * err, axis=-1)).reshape(-1)
        states = nxt.reshape(-1, nxt.shape[-1])
    return cost


def select_best(costs, sequences, previous: SwitchState):
    """Argmin with the tie rule: fewer horizon toggles, then lexicographic."""
    best = float(np.min(costs))
    tied = np.flatnonzero(costs <= best + TIE_RTOL * max(1.0, abs(best)))
    if len(tied) == 1:
        i = int(tied[0])
        return tuple(int(v) for v in sequences[i]), float(costs[i])
    ranked = sorted(
        tied, key=lambda i: (sequence_toggles(sequences[i], previous), tuple(sequences[i]))
    )
    i = int(ranked[0])
    return tuple(int(v) for v in sequences[i]), float(costs[i])


def enumerate_and_cost(start_state, refs, predictor, h: HorizonConfig, previous=ZERO_STATES[0]):
    costs = sequence_costs(start_state, refs, predictor, h)
    return select_best(costs, all_sequences(h.n_p), previous)


class FcsMpc:
    """Receding-horizon controller around a predictor.

    ``last_applied`` is the switch state actuated during the current period;
    the decision made now is actuated in the next period.
    """

    def __init__(self, predictor, horizon: HorizonConfig = HorizonConfig(), delay_compensation=True,
                 initial_state: SwitchState = ZERO_STATES[0]):
        self.predictor = predictor
        self.horizon = horizon
        self.delay_compensation = delay_compensation
        self.last_applied = tuple(initial_state)
        self._sequences = all_sequences(horizon.n_p)

    def control_step(self, i_d, i_q, eps, refs) -> MpcDecision:
        state = self.predictor.initial(i_d, i_q, eps)
        if self.delay_compensation:
            state = delay_compensate(state, drive.vector_index(self.last_applied), self.predictor)
        costs = sequence_costs(state, refs, self.predictor, self.horizon)
        seq, cost = select_best(costs, self._sequences, self.last_applied)
        s = choose_switch_state(seq[0], self.last_applied)
        decision = MpcDecision(
            switch_state=s,
            vector_index=seq[0],
            best_cost=cost,
            best_sequence=seq,
            evaluated_count=len(costs),
            toggles=leg_toggles(s, self.last_applied),
        )
        self.last_applied = s
        return decision


def whitebox_mpc(params, cond, horizon=HorizonConfig(), **kw) -> FcsMpc:
    return FcsMpc(WhiteBoxPredictor(params, cond, horizon.t_s), horizon, **kw)


def koopman_mpc(bank, horizon=HorizonConfig(), **kw) -> FcsMpc:
    if not math.isnan(bank.metadata.get("t_s", float("nan"))):
        if abs(bank.metadata["t_s"] - horizon.t_s) > 1e-12:
            raise ValueError("bank was trained for a different controller period")
    return FcsMpc(KoopmanPredictor(bank), horizon, **kw)
