"""Feedforward human-torque estimation from transparent-mode kinematics.

A stiff PD tracking controller drives the human joints of the coupled model
along a recorded motion in forward dynamics (the exo commanded to zero
torque, dragged along through the straps). The torques the tracker applies
are recorded, tick-averaged at the controller rate, as the subject's
feedforward profile.

The tracker updates at the physics substep rate rather than in the 100 Hz
zero-order hold used by the exo controller: a tick-held PD at stiff gains is
discretely unstable on shank-scale inertia, while the quasi-continuous
tracker is the direct analogue of running the reference-tracking controller
inside the integrator. Tick-averaging preserves the per-tick impulse, so
replaying the recorded profile open loop reproduces the motion to within the
tracking residual.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import (BLOWUP_ANGLE, BLOWUP_RATE, DEFAULT_DT, CoupledState,
                       DivergenceError, Trajectory, _compiled_accel)
from .model import CoupledModel

EXTRACTED_CYCLES = 5
MIN_RECORDED_CYCLES = 7
RESIDUAL_WARN_RMS = math.radians(1.0)  # rad, per joint
PERIODIC_TORQUE_TOLERANCE = 20.0       # N*m, profile end vs start mismatch


class MotionError(ValueError):
    """Invalid recorded motion or estimation setup."""


@dataclass(frozen=True)
class RecordedMotion:
    """Hip/knee joint angles over time with cycle-start indices."""

    t: np.ndarray        # (n,) s, strictly increasing
    angles: np.ndarray   # (n, 2) rad, columns hip, knee
    cycle_marks: tuple[int, ...]  # indices of cycle starts; the last mark
                                  # closes the final cycle

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        ang = np.asarray(self.angles, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "cycle_marks", tuple(int(m) for m in self.cycle_marks))
        if ang.shape != (len(t), 2):
            raise MotionError("angles must be (n, 2) matching t")
        if len(t) < 2 or not np.all(np.diff(t) > 0):
            raise MotionError("timestamps must be strictly increasing")
        marks = self.cycle_marks
        if len(marks) < 2:
            raise MotionError("need at least one full cycle (two marks)")
        if any(b <= a for a, b in zip(marks, marks[1:])):
            raise MotionError("cycle marks must be strictly increasing")
        if marks[0] < 0 or marks[-1] > len(t) - 1:
            raise MotionError("cycle marks must index into the samples")

    @property
    def n_cycles(self) -> int:
        return len(self.cycle_marks) - 1


@dataclass(frozen=True)
class HumanTorqueProfile:
    """Feedforward joint torques sampled at the controller rate.

    The last torque row repeats the final applied command (samples and
    commands share one length). ``initial_q``/``initial_qdot`` hold the human
    joint state at the start of the underlying motion so replays can begin
    from the same conditions.
    """

    t: np.ndarray               # (n,) s, uniform at 1/rate
    tau: np.ndarray             # (n, 2) N*m, hip and knee
    cycle_marks: tuple[int, ...]
    rate: float
    initial_q: np.ndarray       # (2,) rad
    initial_qdot: np.ndarray    # (2,) rad/s

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(-1))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        object.__setattr__(self, "cycle_marks", tuple(int(m) for m in self.cycle_marks))
        object.__setattr__(self, "initial_q",
                           np.asarray(self.initial_q, dtype=float).reshape(2))
        object.__setattr__(self, "initial_qdot",
                           np.asarray(self.initial_qdot, dtype=float).reshape(2))
        if self.tau.shape != (len(self.t), 2):
            raise MotionError("tau must be (n, 2) matching t")

    @property
    def n_cycles(self) -> int:
        return len(self.cycle_marks) - 1

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def endpoint_mismatch(self) -> float:
        """Largest torque discontinuity when the profile is looped."""
        return float(np.max(np.abs(self.tau[-1] - self.tau[0])))

    def torque_at_tick(self, k: int) -> np.ndarray:
        """Command for controller tick ``k``, wrapping past the profile end."""
        n_intervals = len(self.t) - 1
        return self.tau[k % n_intervals]

    def slice_cycles(self, n_cycles: int) -> "HumanTorqueProfile":
        """First ``n_cycles`` cycles of the profile."""
        if not 1 <= n_cycles <= self.n_cycles:
            raise MotionError(f"cannot slice {n_cycles} cycles from "
                              f"a {self.n_cycles}-cycle profile")
        end = self.cycle_marks[n_cycles]
        return HumanTorqueProfile(
            t=self.t[:end + 1], tau=self.tau[:end + 1],
            cycle_marks=self.cycle_marks[:n_cycles + 1],
            rate=self.rate, initial_q=self.initial_q,
            initial_qdot=self.initial_qdot)


def write_torque_profile(profile: HumanTorqueProfile, path) -> None:
    data = np.column_stack([profile.t, profile.tau])
    np.savetxt(path, data, delimiter=",", header="t,tau_hip,tau_knee",
               comments="", fmt="%.10g")


def write_motion(motion: RecordedMotion, path, marks_path=None) -> None:
    data = np.column_stack([motion.t, motion.angles])
    np.savetxt(path, data, delimiter=",", header="t,hip_rad,knee_rad",
               comments="", fmt="%.10g")
    if marks_path is not None:
        np.savetxt(marks_path, np.asarray(motion.cycle_marks, dtype=int)[:, None],
                   header="cycle_start_index", comments="", fmt="%d")


def read_motion(path, marks_path=None, cycle_marks=None) -> RecordedMotion:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if marks_path is not None:
        cycle_marks = np.loadtxt(marks_path, skiprows=1, dtype=int, ndmin=1)
    if cycle_marks is None:
        raise MotionError("cycle marks are required (file or explicit)")
    return RecordedMotion(t=data[:, 0], angles=data[:, 1:3],
                          cycle_marks=tuple(int(m) for m in cycle_marks))


def extract_cycles(motion: RecordedMotion, rate: float = 100.0) -> RecordedMotion:
    """Middle five consecutive cycles, resampled uniformly at ``rate``.

    Start/end cycles are excluded symmetrically (transients from movement
    initiation/termination); requires at least seven recorded cycles. Output
    timestamps start at zero.
    """
    if motion.n_cycles < MIN_RECORDED_CYCLES:
        raise MotionError(
            f"need >= {MIN_RECORDED_CYCLES} recorded cycles to extract "
            f"{EXTRACTED_CYCLES} interior ones, got {motion.n_cycles}")
    skip = (motion.n_cycles - EXTRACTED_CYCLES) // 2
    marks = motion.cycle_marks
    t0 = motion.t[marks[skip]]
    t1 = motion.t[marks[skip + EXTRACTED_CYCLES]]
    n_out = int(round((t1 - t0) * rate)) + 1
    t_new = np.arange(n_out) / rate
    hip = np.interp(t_new + t0, motion.t, motion.angles[:, 0])
    knee = np.interp(t_new + t0, motion.t, motion.angles[:, 1])
    new_marks = []
    for c in range(EXTRACTED_CYCLES + 1):
        tm = motion.t[marks[skip + c]] - t0
        new_marks.append(min(int(round(tm * rate)), n_out - 1))
    return RecordedMotion(t=t_new, angles=np.column_stack([hip, knee]),
                          cycle_marks=tuple(new_marks))


@dataclass(frozen=True)
class TrackingGains:
    """Per-joint PD gains for the kinematics tracker.

    The damping default follows kd = 2*sqrt(kp); the acceptance gate is the
    round-trip residual, not the gain values.
    """

    kp: tuple[float, float] = (2000.0, 2000.0)     # N*m/rad
    kd: tuple[float, float] | None = None          # N*m*s/rad

    def __post_init__(self):
        if self.kd is None:
            object.__setattr__(self, "kd",
                               tuple(2.0 * math.sqrt(k) for k in self.kp))
        else:
            object.__setattr__(self, "kd", tuple(self.kd))
        object.__setattr__(self, "kp", tuple(self.kp))
        if any(g <= 0 for g in self.kp) or any(g <= 0 for g in self.kd):
            raise MotionError("tracking gains must be positive")


@dataclass(frozen=True)
class EstimationResult:
    profile: HumanTorqueProfile
    rms_residual: np.ndarray       # (2,) rad per joint
    saturated_fraction: float      # substeps at a torque limit
    trajectory: Trajectory         # the estimation rollout, tick samples
    notes: tuple[str, ...] = ()


def estimate_tau_h(model: CoupledModel, motion: RecordedMotion,
                   gains: TrackingGains | None = None,
                   dt: float = DEFAULT_DT) -> EstimationResult:
    """Estimate the feedforward torque profile reproducing ``motion``.

    ``motion`` must already be cycle-extracted (uniform samples at the
    controller rate). The exo is transparent throughout. A warning note is
    attached when the tracking residual exceeds 1 degree RMS on any joint.
    """
    gains = gains or TrackingGains()
    rate = model.exo.controller_rate
    t = motion.t
    if len(t) < 2 or abs((t[1] - t[0]) - 1.0 / rate) > 1e-9:
        raise MotionError("motion must be resampled at the controller rate "
                          "(run extract_cycles first)")

    n_ticks = len(t) - 1
    sub = max(1, int(round((1.0 / rate) / dt)))
    h = (1.0 / rate) / sub

    # dense reference at the substep grid (velocities from the sample grid)
    t_dense = np.arange(n_ticks * sub + 1) * h
    sample_rate = np.gradient(motion.angles, t, axis=0)
    des_q = np.column_stack([np.interp(t_dense, t, motion.angles[:, 0]),
                             np.interp(t_dense, t, motion.angles[:, 1])])
    des_v = np.column_stack([np.interp(t_dense, t, sample_rate[:, 0]),
                             np.interp(t_dense, t, sample_rate[:, 1])])

    accel = _compiled_accel(model)
    kp0, kp1 = gains.kp
    kd0, kd1 = gains.kd
    lim0 = model.subject.hip_torque_limit
    lim1 = model.subject.knee_torque_limit

    q0 = q2 = float(des_q[0, 0])
    q1 = q3 = float(des_q[0, 1])
    v0 = v2 = float(des_v[0, 0])
    v1 = v3 = float(des_v[0, 1])

    qs = np.empty((n_ticks + 1, 4))
    vs = np.empty((n_ticks + 1, 4))
    taus = np.empty((n_ticks + 1, 2))
    qs[0] = (q0, q1, q2, q3)
    vs[0] = (v0, v1, v2, v3)
    n_sat = 0
    half = h / 2.0
    sixth = h / 6.0

    for k in range(n_ticks):
        acc0 = acc1 = 0.0
        base = k * sub
        for i in range(sub):
            dq = des_q[base + i]
            dv = des_v[base + i]
            u0 = kp0 * (dq[0] - q0) + kd0 * (dv[0] - v0)
            u1 = kp1 * (dq[1] - q1) + kd1 * (dv[1] - v1)
            if u0 > lim0:
                u0 = lim0; n_sat += 1
            elif u0 < -lim0:
                u0 = -lim0; n_sat += 1
            if u1 > lim1:
                u1 = lim1; n_sat += 1
            elif u1 < -lim1:
                u1 = -lim1; n_sat += 1
            acc0 += u0
            acc1 += u1

            a0, a1, a2, a3 = accel(q0, q1, q2, q3, v0, v1, v2, v3, u0, u1, 0.0, 0.0)
            w0 = v0 + half * a0; w1 = v1 + half * a1
            w2 = v2 + half * a2; w3 = v3 + half * a3
            b0, b1, b2, b3 = accel(q0 + half * v0, q1 + half * v1,
                                   q2 + half * v2, q3 + half * v3,
                                   w0, w1, w2, w3, u0, u1, 0.0, 0.0)
            x0 = v0 + half * b0; x1 = v1 + half * b1
            x2 = v2 + half * b2; x3 = v3 + half * b3
            c0, c1, c2, c3 = accel(q0 + half * w0, q1 + half * w1,
                                   q2 + half * w2, q3 + half * w3,
                                   x0, x1, x2, x3, u0, u1, 0.0, 0.0)
            y0 = v0 + h * c0; y1 = v1 + h * c1
            y2 = v2 + h * c2; y3 = v3 + h * c3
            d0, d1, d2, d3 = accel(q0 + h * x0, q1 + h * x1,
                                   q2 + h * x2, q3 + h * x3,
                                   y0, y1, y2, y3, u0, u1, 0.0, 0.0)
            q0 += sixth * (v0 + 2.0 * (w0 + x0) + y0)
            q1 += sixth * (v1 + 2.0 * (w1 + x1) + y1)
            q2 += sixth * (v2 + 2.0 * (w2 + x2) + y2)
            q3 += sixth * (v3 + 2.0 * (w3 + x3) + y3)
            v0 += sixth * (a0 + 2.0 * (b0 + c0) + d0)
            v1 += sixth * (a1 + 2.0 * (b1 + c1) + d1)
            v2 += sixth * (a2 + 2.0 * (b2 + c2) + d2)
            v3 += sixth * (a3 + 2.0 * (b3 + c3) + d3)

        if (abs(q0) > BLOWUP_ANGLE or abs(q1) > BLOWUP_ANGLE
                or abs(q2) > BLOWUP_ANGLE or abs(q3) > BLOWUP_ANGLE
                or abs(v0) > BLOWUP_RATE or abs(v1) > BLOWUP_RATE
                or abs(v2) > BLOWUP_RATE or abs(v3) > BLOWUP_RATE):
            raise DivergenceError((k + 1) / rate, (q0, q1, q2, q3),
                                  (v0, v1, v2, v3))
        qs[k + 1] = (q0, q1, q2, q3)
        vs[k + 1] = (v0, v1, v2, v3)
        taus[k] = (acc0 / sub, acc1 / sub)

    taus[-1] = taus[-2]
    residual = qs[:, :2] - motion.angles
    rms = np.sqrt(np.mean(residual ** 2, axis=0))
    sat_fraction = n_sat / (2.0 * n_ticks * sub)

    traj = Trajectory(t=t.copy(), q=qs, qdot=vs, tau_h=taus,
                      tau_r=np.zeros((n_ticks + 1, 2)), rate=rate, dt=h)
    profile = HumanTorqueProfile(
        t=t.copy(), tau=taus, cycle_marks=motion.cycle_marks, rate=rate,
        initial_q=des_q[0], initial_qdot=des_v[0])

    notes = []
    if np.any(rms > RESIDUAL_WARN_RMS):
        notes.append(f"tracking residual {np.degrees(rms).round(3)} deg RMS "
                     "exceeds 1 deg; profile may be unreliable")
    if sat_fraction > 0:
        notes.append(f"{sat_fraction:.1%} of tracker updates hit a human "
                     "torque limit")
    if profile.endpoint_mismatch() > PERIODIC_TORQUE_TOLERANCE:
        notes.append("profile endpoints differ by more than "
                     f"{PERIODIC_TORQUE_TOLERANCE} N*m; looping may jump")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return EstimationResult(profile=profile, rms_residual=rms,
                            saturated_fraction=sat_fraction, trajectory=traj,
                            notes=tuple(notes))
