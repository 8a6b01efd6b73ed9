"""Time-stamped simulation record shared by training, control and analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PERIOD_COLUMNS = (
    "time_s",
    "i_d_A",
    "i_q_A",
    "eps_el_rad",
    "vector_index",
    "s_a",
    "s_b",
    "s_c",
    "cmd_vector_index",
    "i_d_ref_A",
    "i_q_ref_A",
    "u_dc_V",
    "best_cost_A2",
    "toggles",
    "duty_a",
    "duty_b",
    "duty_c",
    "overmodulated",
)

FINE_COLUMNS = ("time_s", "i_a_A", "i_b_A", "i_c_A", "s_a", "s_b", "s_c")


@dataclass
class TrajectoryLog:
    """One record per controller period, plus an optional fine-rate trace.

    ``i_d``/``i_q``/``eps`` are sampled at the start of each period and
    ``vector`` is the voltage vector that was actuated during that period
    (-1 when the period is PWM-modulated). ``cmd_vector`` is what the
    controller computed in that period; it takes effect one period later.
    """

    t_s: float
    time: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    eps: np.ndarray
    vector: np.ndarray
    switch: np.ndarray
    cmd_vector: np.ndarray
    id_ref: np.ndarray
    iq_ref: np.ndarray
    u_dc: np.ndarray
    best_cost: np.ndarray
    toggles: np.ndarray
    duty: np.ndarray
    overmodulated: np.ndarray
    fine_time: np.ndarray | None = None
    fine_iabc: np.ndarray | None = None
    fine_switch: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.time)

    @property
    def omega_el(self) -> float:
        return float(self.meta.get("omega_el", 0.0))

    @property
    def fine_dt(self) -> float:
        return self.t_s / int(self.meta.get("substeps", 50))

    def segment(self, start: int, stop: int) -> "TrajectoryLog":
        """Controller-rate slice; the fine trace is cut to the same span."""
        kw = {}
        for name in PERIOD_FIELDS:
            kw[name] = getattr(self, name)[start:stop]
        if self.fine_time is not None:
            n = int(self.meta.get("substeps", 50))
            lo, hi = start * n, stop * n
            kw["fine_time"] = self.fine_time[lo:hi]
            kw["fine_iabc"] = self.fine_iabc[lo:hi]
            kw["fine_switch"] = self.fine_switch[lo:hi]
        return TrajectoryLog(t_s=self.t_s, meta=dict(self.meta), **kw)

    def to_csv(self, path, fine_path=None):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PERIOD_COLUMNS)
            for k in range(len(self)):
                w.writerow(
                    [
                        repr(float(self.time[k])),
                        repr(float(self.i_d[k])),
                        repr(float(self.i_q[k])),
                        repr(float(self.eps[k])),
                        int(self.vector[k]),
                        *(int(v) for v in self.switch[k]),
                        int(self.cmd_vector[k]),
                        repr(float(self.id_ref[k])),
                        repr(float(self.iq_ref[k])),
                        repr(float(self.u_dc[k])),
                        repr(float(self.best_cost[k])),
                        int(self.toggles[k]),
                        *(repr(float(v)) for v in self.duty[k]),
                        int(self.overmodulated[k]),
                    ]
                )
        if fine_path is not None and self.fine_time is not None:
            with Path(fine_path).open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(FINE_COLUMNS)
                for k in range(len(self.fine_time)):
                    w.writerow(
                        [
                            repr(float(self.fine_time[k])),
                            *(repr(float(v)) for v in self.fine_iabc[k]),
                            *(int(v) for v in self.fine_switch[k]),
                        ]
                    )

    @classmethod
    def from_csv(cls, path, fine_path=None, meta=None) -> "TrajectoryLog":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        col = {name: data[:, i] for i, name in enumerate(PERIOD_COLUMNS)}
        t = col["time_s"]
        t_s = float(t[1] - t[0]) if len(t) > 1 else float((meta or {}).get("t_s", 50e-6))
        if meta and "t_s" in meta:
            t_s = float(meta["t_s"])
        kw = dict(
            time=t,
            i_d=col["i_d_A"],
            i_q=col["i_q_A"],
            eps=col["eps_el_rad"],
            vector=col["vector_index"].astype(int),
            switch=data[:, 5:8].astype(int),
            cmd_vector=col["cmd_vector_index"].astype(int),
            id_ref=col["i_d_ref_A"],
            iq_ref=col["i_q_ref_A"],
            u_dc=col["u_dc_V"],
            best_cost=col["best_cost_A2"],
            toggles=col["toggles"].astype(int),
            duty=data[:, 14:17],
            overmodulated=col["overmodulated"].astype(bool),
        )
        if fine_path is not None and Path(fine_path).exists():
            fine = np.loadtxt(fine_path, delimiter=",", skiprows=1, ndmin=2)
            kw["fine_time"] = fine[:, 0]
            kw["fine_iabc"] = fine[:, 1:4]
            kw["fine_switch"] = fine[:, 4:7].astype(int)
        return cls(t_s=t_s, meta=dict(meta or {}), **kw)


PERIOD_FIELDS = (
    "time",
    "i_d",
    "i_q",
    "eps",
    "vector",
    "switch",
    "cmd_vector",
    "id_ref",
    "iq_ref",
    "u_dc",
    "best_cost",
    "toggles",
    "duty",
    "overmodulated",
)


class LogBuilder:
    """Accumulates per-period rows and freezes them into a TrajectoryLog."""

    def __init__(self, t_s, keep_fine=True):
        self.t_s = t_s
        self.rows = {name: [] for name in PERIOD_FIELDS}
        self.keep_fine = keep_fine
        self.fine_time = []
        self.fine_iabc = []
        self.fine_switch = []

    def add(self, **row):
        for name in PERIOD_FIELDS:
            self.rows[name].append(row[name])

    def build(self, meta=None) -> TrajectoryLog:
        r = self.rows
        kw = dict(
            time=np.asarray(r["time"], dtype=float),
            i_d=np.asarray(r["i_d"], dtype=float),
            i_q=np.asarray(r["i_q"], dtype=float),
            eps=np.asarray(r["eps"], dtype=float),
            vector=np.asarray(r["vector"], dtype=int),
            switch=np.asarray(r["switch"], dtype=int).reshape(-1, 3),
            cmd_vector=np.asarray(r["cmd_vector"], dtype=int),
            id_ref=np.asarray(r["id_ref"], dtype=float),
            iq_ref=np.asarray(r["iq_ref"], dtype=float),
            u_dc=np.asarray(r["u_dc"], dtype=float),
            best_cost=np.asarray(r["best_cost"], dtype=float),
            toggles=np.asarray(r["toggles"], dtype=int),
            duty=np.asarray(r["duty"], dtype=float).reshape(-1, 3),
            overmodulated=np.asarray(r["overmodulated"], dtype=bool),
        )
        if self.keep_fine:
            kw["fine_time"] = np.asarray(self.fine_time, dtype=float)
            kw["fine_iabc"] = np.asarray(self.fine_iabc, dtype=float).reshape(-1, 3)
            kw["fine_switch"] = np.asarray(self.fine_switch, dtype=np.int8).reshape(-1, 3)
        return TrajectoryLog(t_s=self.t_s, meta=dict(meta or {}), **kw)
