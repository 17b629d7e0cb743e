"""Assist-as-needed path controller.

The controller is time-free: at every step it looks up the closest point of
a closed hip-knee reference loop, subtracts a dead band from the error, and
applies a phase-scheduled PD law whose damping is slaved to the stiffness
(near-critically damped error dynamics). Stance (ST) and swing (SW) arcs of
the loop carry independent stiffness pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEAD_BAND_DEFAULT = math.radians(2.0)  # rad
STIFFNESS_LOWER_BOUND = 0.0
STIFFNESS_UPPER_BOUND = 600.0          # N*m/rad, search-space bound
PHASES = ("ST", "SW")


class PathError(ValueError):
    """Invalid reference path or controller parameter."""


@dataclass(frozen=True)
class ReferencePath:
    """Closed loop of (hip, knee) samples with per-sample phase labels.

    The sample list is treated as cyclic (last point adjacent to the first).
    Each phase must form one contiguous arc of the cycle; a boundary sample
    belongs to the arc it starts.
    """

    points: np.ndarray                    # (n, 2) rad
    phases: tuple[str, ...]               # "ST" or "SW" per sample
    dead_band: float = DEAD_BAND_DEFAULT  # rad

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise PathError("path points must be an (n, 2) array")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "phases", tuple(self.phases))
        if len(pts) < 3:
            raise PathError("path needs at least 3 points")
        if len(self.phases) != len(pts):
            raise PathError("one phase label required per path point")
        if not set(self.phases) <= set(PHASES):
            raise PathError(f"phase labels must be in {PHASES}")
        if self.dead_band < 0:
            raise PathError("dead_band radius must be >= 0")
        transitions = sum(self.phases[i] != self.phases[i - 1]
                          for i in range(len(self.phases)))
        if transitions not in (0, 2):
            raise PathError("each phase must form one contiguous arc")
        if not np.all(np.isfinite(pts)):
            raise PathError("path points must be finite")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class StiffnessParams:
    """The four decision variables plus the critical-damping scaling."""

    hip_stance: float
    knee_stance: float
    hip_swing: float
    knee_swing: float
    damping_scale: tuple[float, float] = (1.0, 1.0)  # per joint, unitless

    def __post_init__(self):
        for name in ("hip_stance", "knee_stance", "hip_swing", "knee_swing"):
            k = getattr(self, name)
            if not (STIFFNESS_LOWER_BOUND <= k <= STIFFNESS_UPPER_BOUND):
                raise PathError(
                    f"stiffness {name}={k} outside "
                    f"[{STIFFNESS_LOWER_BOUND}, {STIFFNESS_UPPER_BOUND}]")
        if any(c < 0 for c in self.damping_scale):
            raise PathError("damping_scale entries must be >= 0")

    def gains_for(self, phase: str) -> np.ndarray:
        if phase == "ST":
            return np.array([self.hip_stance, self.knee_stance])
        return np.array([self.hip_swing, self.knee_swing])

    def as_array(self) -> np.ndarray:
        return np.array([self.hip_stance, self.knee_stance,
                         self.hip_swing, self.knee_swing])

    @classmethod
    def from_array(cls, values, damping_scale=(1.0, 1.0)) -> "StiffnessParams":
        v = np.asarray(values, dtype=float).reshape(4)
        return cls(hip_stance=float(v[0]), knee_stance=float(v[1]),
                   hip_swing=float(v[2]), knee_swing=float(v[3]),
                   damping_scale=tuple(damping_scale))

    @classmethod
    def uniform(cls, k: float) -> "StiffnessParams":
        return cls(hip_stance=k, knee_stance=k, hip_swing=k, knee_swing=k)


@dataclass(frozen=True)
class ControllerOutput:
    tau_exo: np.ndarray        # N*m, commanded after clamping
    q_ref: np.ndarray          # rad, closest path sample
    raw_error: np.ndarray      # rad, q_ref - q_act
    banded_error: np.ndarray   # rad, raw error after the dead band
    active_phase: str
    ref_index: int
    saturated: tuple[bool, bool] = (False, False)


def closest_reference_point(path: ReferencePath, q_act) -> tuple[np.ndarray, int, str]:
    """Path sample minimizing the Euclidean distance to ``q_act``.

    Ties break toward the lowest index (argmin takes the first minimum).
    """
    q_act = np.asarray(q_act, dtype=float).reshape(2)
    d2 = np.sum((path.points - q_act) ** 2, axis=1)
    idx = int(np.argmin(d2))
    return path.points[idx].copy(), idx, path.phases[idx]


def dead_band_error(delta, r_db: float):
    """Error after removing the tolerance band: zero inside, shifted outside.

    Continuous and odd in ``delta``; accepts scalars or arrays.
    """
    if r_db < 0:
        raise PathError("dead band radius must be >= 0")
    delta = np.asarray(delta, dtype=float)
    out = np.where(delta > r_db, delta - r_db,
                   np.where(delta < -r_db, delta + r_db, 0.0))
    return float(out) if out.ndim == 0 else out


def control_step(path: ReferencePath, params: StiffnessParams, q_act, qdot_act,
                 prev: ControllerOutput | None = None, *,
                 rate: float = 100.0,
                 torque_limit: float = math.inf) -> ControllerOutput:
    """One controller tick.

    The torque is K*dq + B*dqdot with K chosen by the active phase and
    B = damping_scale * sqrt(K) elementwise. The error derivative is the
    backward difference of the banded error at the controller rate (zero on
    the first step), so the commanded torque vanishes identically inside the
    dead band. ``qdot_act`` is accepted for interface completeness; the
    default law does not consume it.
    """
    q_act = np.asarray(q_act, dtype=float).reshape(2)
    q_ref, idx, phase = closest_reference_point(path, q_act)
    raw = q_ref - q_act
    banded = dead_band_error(raw, path.dead_band)
    k = params.gains_for(phase)
    b = np.asarray(params.damping_scale) * np.sqrt(k)
    if prev is None:
        banded_rate = np.zeros(2)
    else:
        banded_rate = (banded - prev.banded_error) * rate
    tau = k * banded + b * banded_rate
    clamped = np.clip(tau, -torque_limit, torque_limit)
    saturated = tuple(bool(a != b_) for a, b_ in zip(tau, clamped))
    return ControllerOutput(tau_exo=clamped, q_ref=q_ref, raw_error=raw,
                            banded_error=banded, active_phase=phase,
                            ref_index=idx, saturated=saturated)


class PathController:
    """Stateful wrapper holding the previous output for differencing.

    One instance per rollout; instances are independent.
    """

    def __init__(self, path: ReferencePath, params: StiffnessParams,
                 rate: float = 100.0, torque_limit: float = math.inf):
        self.path = path
        self.params = params
        self.rate = rate
        self.torque_limit = torque_limit
        self.prev: ControllerOutput | None = None

    def step(self, q_act, qdot_act=None) -> ControllerOutput:
        out = control_step(self.path, self.params, q_act, qdot_act, self.prev,
                           rate=self.rate, torque_limit=self.torque_limit)
        self.prev = out
        return out

    def reset(self) -> None:
        self.prev = None


# --- reference path construction and file I/O -------------------------------

# Default synthetic loop: a smooth closed hip-knee cycle with a swing arc of
# high knee flexion, shaped loosely like a walking cyclogram. Angles in rad.
DEFAULT_HIP_MEAN = 0.12
DEFAULT_HIP_AMPLITUDE = 0.28
DEFAULT_HIP_PHASE = 0.3
DEFAULT_KNEE_MEAN = 0.45
DEFAULT_KNEE_AMPLITUDE = 0.40
DEFAULT_KNEE_PHASE = -0.9
SWING_KNEE_THRESHOLD = 0.45  # label SW where the knee term is in flexion


def default_reference_path(n_points: int = 200,
                           dead_band: float = DEAD_BAND_DEFAULT) -> ReferencePath:
    """Synthetic dual-phase hip-knee loop with ``n_points`` uniform samples."""
    phi = 2.0 * math.pi * np.arange(n_points) / n_points
    hip = DEFAULT_HIP_MEAN + DEFAULT_HIP_AMPLITUDE * np.cos(phi + DEFAULT_HIP_PHASE)
    knee = DEFAULT_KNEE_MEAN - DEFAULT_KNEE_AMPLITUDE * np.cos(phi + DEFAULT_KNEE_PHASE)
    phases = tuple("SW" if k > SWING_KNEE_THRESHOLD else "ST" for k in knee)
    return ReferencePath(points=np.column_stack([hip, knee]), phases=phases,
                         dead_band=dead_band)


def resample_path(path: ReferencePath, n_points: int) -> ReferencePath:
    """Resample the closed loop to ``n_points`` uniform arc-length samples.

    Each new sample takes the phase label of the original segment it falls
    on, preserving the two contiguous arcs.
    """
    if n_points < 3:
        raise PathError("resampling needs at least 3 points")
    pts = np.vstack([path.points, path.points[:1]])  # close the loop
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        raise PathError("degenerate path: zero total arc length")
    targets = total * np.arange(n_points) / n_points
    hip = np.interp(targets, s, pts[:, 0])
    knee = np.interp(targets, s, pts[:, 1])
    src = np.minimum(np.searchsorted(s, targets, side="right") - 1,
                     len(path) - 1)
    phases = tuple(path.phases[i] for i in src)
    return ReferencePath(points=np.column_stack([hip, knee]), phases=phases,
                         dead_band=path.dead_band)


def write_path(path: ReferencePath, file) -> None:
    """Delimited text export: ``hip_rad, knee_rad, phase`` with a header."""
    with open(file, "w", encoding="utf-8") as fh:
        fh.write("hip_rad,knee_rad,phase\n")
        for (hip, knee), phase in zip(path.points, path.phases):
            fh.write(f"{hip:.10g},{knee:.10g},{phase}\n")


def read_path(file, dead_band: float = DEAD_BAND_DEFAULT) -> ReferencePath:
    points = []
    phases = []
    with open(file, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().lower().split(",")
        if header[:3] != ["hip_rad", "knee_rad", "phase"]:
            raise PathError(f"unexpected path file header: {header}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            hip, knee, phase = line.split(",")
            points.append((float(hip), float(knee)))
            phases.append(phase.strip())
    return ReferencePath(points=np.array(points), phases=tuple(phases),
                         dead_band=dead_band)
