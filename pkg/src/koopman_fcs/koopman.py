"""Data-driven reduced-order models: one linear map per inverter voltage vector.

Observations are ``y = [i_d, i_q, sin(eps), cos(eps)]``. A dictionary lifts
them to ``z = psi(y)``; each voltage vector gets a transition matrix ``M``
with ``z_next = M @ z`` fitted by least squares over snapshot pairs, and a
projection ``P`` maps ``z`` back to ``y``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .log import TrajectoryLog

N_VECTORS = 7
OBS_NAMES = ("i_d", "i_q", "sin_eps", "cos_eps")
OBS_DIM = len(OBS_NAMES)
DEFAULT_TOL = 1e-10
DEFAULT_MIN_PAIRS = 200


class InsufficientData(ValueError):
    def __init__(self, vector_index, count, required):
        super().__init__(
            f"vector {vector_index}: {count} snapshot pairs, at least {required} required"
        )
        self.vector_index = vector_index
        self.count = count
        self.required = required


class RankDeficient(UserWarning):
    pass


class BankFormatError(ValueError):
    pass


def observation(i_d, i_q, eps) -> np.ndarray:
    """Observation vector(s) from currents and angle; broadcasts over arrays."""
    i_d, i_q, eps = np.broadcast_arrays(
        np.asarray(i_d, dtype=float), np.asarray(i_q, dtype=float), np.asarray(eps, dtype=float)
    )
    return np.stack([i_d, i_q, np.sin(eps), np.cos(eps)], axis=-1)


@dataclass(frozen=True)
class Dictionary:
    """Basis functions over the 4 observables.

    ``degree=1`` is the identity (plain DMD). ``degree=2`` appends all
    monomials of degree two. ``constant`` appends a trailing one. The
    identity functions always lead, so the first four lifted coordinates
    are the observation itself.
    """

    degree: int = 1
    constant: bool = False

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")

    @classmethod
    def parse(cls, spec: str) -> "Dictionary":
        spec = spec.strip().lower()
        table = {
            "identity": cls(1, False),
            "identity+const": cls(1, True),
            "monomial2": cls(2, False),
            "monomial2+const": cls(2, True),
        }
        if spec not in table:
            raise ValueError(f"unknown dictionary {spec!r}; choose from {sorted(table)}")
        return table[spec]

    @property
    def spec(self) -> str:
        base = "identity" if self.degree == 1 else "monomial2"
        return base + ("+const" if self.constant else "")

    @property
    def includes_identity(self) -> bool:
        return True

    @property
    def pairs(self):
        return list(itertools.combinations_with_replacement(range(OBS_DIM), 2)) if self.degree == 2 else []

    @property
    def names(self) -> list[str]:
        out = list(OBS_NAMES)
        out += [f"{OBS_NAMES[a]}*{OBS_NAMES[b]}" for a, b in self.pairs]
        if self.constant:
            out.append("1")
        return out

    @property
    def k(self) -> int:
        return len(self.names)

    def __call__(self, y) -> np.ndarray:
        """Lift observation(s); the last axis of ``y`` has length 4."""
        y = np.asarray(y, dtype=float)
        parts = [y]
        if self.degree == 2:
            parts += [(y[..., a] * y[..., b])[..., None] for a, b in self.pairs]
        if self.constant:
            parts.append(np.ones(y.shape[:-1] + (1,)))
        return np.concatenate(parts, axis=-1) if len(parts) > 1 else y.copy()


IDENTITY = Dictionary()


def lift(y, d: Dictionary = IDENTITY) -> np.ndarray:
    return d(y)


@dataclass
class SnapshotSet:
    """Lifted snapshot pairs for one voltage vector, one column per pair."""

    vector_index: int
    Y: np.ndarray
    Y_hat: np.ndarray

    @property
    def m(self) -> int:
        return self.Y.shape[1]


def snapshot_indices(log: TrajectoryLog, vector_index: int) -> np.ndarray:
    """Periods ``i`` with ``vector_index`` applied and a recorded successor."""
    v = np.asarray(log.vector)
    return np.flatnonzero(v[:-1] == vector_index)


def assemble(
    log: TrajectoryLog,
    vector_index: int,
    d: Dictionary = IDENTITY,
    min_pairs: int = DEFAULT_MIN_PAIRS,
) -> SnapshotSet:
    idx = snapshot_indices(log, vector_index) if len(log) > 1 else np.array([], dtype=int)
    if len(idx) < min_pairs or len(idx) == 0:
        raise InsufficientData(vector_index, len(idx), max(min_pairs, 1))
    obs = observation(log.i_d, log.i_q, log.eps)
    return SnapshotSet(vector_index, d(obs[idx]).T, d(obs[idx + 1]).T)


def _sign_fixed_svd(A):
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    # largest-magnitude component of each left singular vector is positive
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def pinv_svd(A, tol: float = DEFAULT_TOL):
    """Truncated pseudo-inverse; returns ``(pinv, retained_rank)``."""
    u, s, vt = _sign_fixed_svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape), 0
    keep = s > tol * s[0]
    r = int(keep.sum())
    return (vt[:r].T / s[:r]) @ u[:, :r].T, r


@dataclass
class FitResult:
    transition: np.ndarray
    residual: float
    rank: int


def fit(snapshots: SnapshotSet, tol: float = DEFAULT_TOL) -> FitResult:
    """Least-squares transition ``M = Y_hat @ pinv(Y)``."""
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    Y, Y_hat = snapshots.Y, snapshots.Y_hat
    if Y.shape != Y_hat.shape:
        raise ValueError("Y and Y_hat shapes differ")
    pinv, rank = pinv_svd(Y, tol)
    M = Y_hat @ pinv
    k = Y.shape[0]
    if rank < k:
        warnings.warn(
            f"vector {snapshots.vector_index}: retained rank {rank} < {k}",
            RankDeficient,
            stacklevel=2,
        )
    denom = np.linalg.norm(Y_hat)
    residual = float(np.linalg.norm(M @ Y - Y_hat) / denom) if denom > 0 else 0.0
    return FitResult(M, residual, rank)


def fit_normal_equations(Y, Y_hat) -> np.ndarray:
    """``(Y_hat Y^T)(Y Y^T)^+``; the Gram-matrix form of the same fit."""
    return (Y_hat @ Y.T) @ np.linalg.pinv(Y @ Y.T)


@dataclass
class KoopmanModelBank:
    matrices: np.ndarray  # (7, k, k); z_next = matrices[v] @ z
    projection: np.ndarray  # (4, k)
    dictionary: Dictionary = IDENTITY
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        self.projection = np.asarray(self.projection, dtype=float)
        k = self.dictionary.k
        if self.matrices.shape != (N_VECTORS, k, k):
            raise BankFormatError(
                f"expected {N_VECTORS} matrices of size {k}x{k}, got {self.matrices.shape}"
            )
        if self.projection.shape != (OBS_DIM, k):
            raise BankFormatError(f"projection must be {OBS_DIM}x{k}")

    @property
    def k(self) -> int:
        return self.dictionary.k

    def save(self, path):
        Path(path).write_text(dumps_bank(self))

    @classmethod
    def load(cls, path) -> "KoopmanModelBank":
        return loads_bank(Path(path).read_text())


def predict(z, bank: KoopmanModelBank, vector_index: int) -> np.ndarray:
    """One step of the linear model; ``z`` may be a batch of row vectors."""
    z = np.asarray(z, dtype=float)
    return z @ bank.matrices[vector_index].T


def project(z, bank: KoopmanModelBank) -> np.ndarray:
    return np.asarray(z, dtype=float) @ bank.projection.T


def selector_projection(d: Dictionary) -> np.ndarray:
    P = np.zeros((OBS_DIM, d.k))
    P[:, :OBS_DIM] = np.eye(OBS_DIM)
    return P


def holdout_rms(log: TrajectoryLog, idx: np.ndarray, bank: KoopmanModelBank, v: int):
    """One-step RMS prediction error of (i_d, i_q) on periods ``idx``."""
    obs = observation(log.i_d, log.i_q, log.eps)
    pred = project(predict(bank.dictionary(obs[idx]), bank, v), bank)
    err = pred[:, :2] - obs[idx + 1, :2]
    return np.sqrt(np.mean(err**2, axis=0))


def train_bank(
    log: TrajectoryLog,
    d: Dictionary = IDENTITY,
    tol: float = DEFAULT_TOL,
    min_pairs: int = DEFAULT_MIN_PAIRS,
    holdout: float = 0.2,
) -> KoopmanModelBank:
    """Fit all seven vector models from one closed-loop log.

    Per vector, the latest ``holdout`` fraction of pairs (by time) is kept
    out of the fit and used to report a one-step RMS error.
    """
    if not 0.0 <= holdout < 1.0:
        raise ValueError("holdout must lie in [0, 1)")
    obs = observation(log.i_d, log.i_q, log.eps)
    mats, residuals, counts, ranks, rms = [], [], [], [], []
    for v in range(N_VECTORS):
        idx = snapshot_indices(log, v) if len(log) > 1 else np.array([], dtype=int)
        if len(idx) < min_pairs or len(idx) == 0:
            raise InsufficientData(v, len(idx), max(min_pairs, 1))
        n_fit = len(idx) - int(math.floor(holdout * len(idx)))
        fit_idx, test_idx = idx[:n_fit], idx[n_fit:]
        snaps = SnapshotSet(v, d(obs[fit_idx]).T, d(obs[fit_idx + 1]).T)
        res = fit(snaps, tol)
        mats.append(res.transition)
        residuals.append(res.residual)
        counts.append(len(idx))
        ranks.append(res.rank)
        rms.append((test_idx, res.transition))
    bank = KoopmanModelBank(
        np.stack(mats),
        selector_projection(d),
        d,
        {
            "speed_rpm": float(log.meta.get("speed_rpm", float("nan"))),
            "t_s": float(log.t_s),
            "samples": counts,
            "residuals": residuals,
            "ranks": ranks,
            "tol": tol,
        },
    )
    hold = []
    for v, (test_idx, _) in enumerate(rms):
        if len(test_idx):
            hold.append([float(e) for e in holdout_rms(log, test_idx, bank, v)])
        else:
            hold.append([float("nan"), float("nan")])
    bank.metadata["holdout_rms"] = hold
    return bank


# --- persistence -----------------------------------------------------------

MAGIC = "koopman-fcs model bank v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_bank(bank: KoopmanModelBank) -> str:
    md = bank.metadata
    lines = [
        f"# {MAGIC}",
        f"dictionary: {bank.dictionary.spec}",
        f"k: {bank.k}",
        f"speed_rpm: {_fmt(md.get('speed_rpm', float('nan')))}",
        f"t_s: {_fmt(md.get('t_s', float('nan')))}",
        f"tol: {_fmt(md.get('tol', DEFAULT_TOL))}",
        "samples: " + " ".join(str(int(c)) for c in md.get("samples", [0] * N_VECTORS)),
        "ranks: " + " ".join(str(int(c)) for c in md.get("ranks", [bank.k] * N_VECTORS)),
        "residuals: " + " ".join(_fmt(r) for r in md.get("residuals", [float("nan")] * N_VECTORS)),
        "holdout_rms: "
        + " ".join(
            f"{_fmt(a)},{_fmt(b)}"
            for a, b in md.get("holdout_rms", [[float("nan")] * 2] * N_VECTORS)
        ),
    ]
    for v in range(N_VECTORS):
        lines.append(f"matrix {v}")
        lines += [" ".join(_fmt(x) for x in row) for row in bank.matrices[v]]
    lines.append("projection")
    lines += [" ".join(_fmt(x) for x in row) for row in bank.projection]
    return "\n".join(lines) + "\n"


def loads_bank(text: str) -> KoopmanModelBank:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != f"# {MAGIC}":
        raise BankFormatError("not a model bank file")
    header = {}
    pos = 1
    while pos < len(lines) and ":" in lines[pos]:
        key, _, value = lines[pos].partition(":")
        header[key.strip()] = value.strip()
        pos += 1
    try:
        d = Dictionary.parse(header["dictionary"])
        k = int(header["k"])
    except KeyError as exc:
        raise BankFormatError(f"missing header field {exc}") from None
    if k != d.k:
        raise BankFormatError(f"k={k} does not match dictionary {d.spec} (k={d.k})")

    def read_block(title):
        nonlocal pos
        if pos >= len(lines) or lines[pos] != title:
            raise BankFormatError(f"expected '{title}'")
        pos += 1
        rows = []
        while pos < len(lines) and not lines[pos].startswith(("matrix", "projection")):
            rows.append([float(x) for x in lines[pos].split()])
            pos += 1
        return np.array(rows, dtype=float)

    mats = []
    for v in range(N_VECTORS):
        m = read_block(f"matrix {v}")
        if m.shape != (k, k):
            raise BankFormatError(f"matrix {v} has shape {m.shape}, expected {(k, k)}")
        mats.append(m)
    P = read_block("projection")
    if pos != len(lines):
        raise BankFormatError("trailing content; expected exactly 7 matrices and a projection")
    md = {
        "speed_rpm": float(header.get("speed_rpm", "nan")),
        "t_s": float(header.get("t_s", "nan")),
        "tol": float(header.get("tol", DEFAULT_TOL)),
        "samples": [int(x) for x in header.get("samples", "").split()],
        "ranks": [int(x) for x in header.get("ranks", "").split()],
        "residuals": [float(x) for x in header.get("residuals", "").split()],
        "holdout_rms": [
            [float(a) for a in pair.split(",")] for pair in header.get("holdout_rms", "").split()
        ],
    }
    return KoopmanModelBank(np.stack(mats), P, d, md)
