"""Coupled equations of motion, strap interaction forces, and integration.

Generalized coordinates are q = [human_hip, human_knee, exo_hip, exo_knee]
(rad). Hip angles are measured from the downward vertical, flexion positive;
knee flexion is positive and folds the shank backward, so the absolute shank
angle is hip - knee. Each chain is an independent double pendulum; coupling
enters exclusively through the strap bushings, never through inertia.

The equations of motion are written as

    M(q) qddot + bias(q, qdot) = tau_applied + tau_interaction + tau_stops

where ``bias`` bundles Coriolis/centrifugal and gravity terms on the
left-hand side (the generalized force exerted *by* gravity is ``-bias`` at
zero velocity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import CoupledModel, STRAP_SITES

DEFAULT_DT = 2.5e-4          # s; keeps dt * (stiffest bushing mode) well below 0.5
SOFT_RANGE_MARGIN = 0.5      # rad allowed beyond configured joint ranges
BLOWUP_ANGLE = 2.0 * math.pi  # rad; |q| beyond this is treated as divergence
BLOWUP_RATE = 1.0e3          # rad/s


class DynamicsError(ValueError):
    """Invalid state or input handed to the dynamics."""


class DivergenceError(RuntimeError):
    """A rollout exceeded the blow-up bounds (numerical instability)."""

    def __init__(self, t: float, q, qdot):
        super().__init__(f"simulation diverged at t={t:.4f} s")
        self.t = t
        self.q = np.asarray(q, dtype=float)
        self.qdot = np.asarray(qdot, dtype=float)


@dataclass
class CoupledState:
    """Positions and velocities of the four generalized coordinates."""

    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(4).copy()
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(4).copy()
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))
                and math.isfinite(self.t)):
            raise DynamicsError("state entries must be finite")


@dataclass(frozen=True)
class TorqueInput:
    """Human and exo joint torques, clamped to the configured limits."""

    tau_h: np.ndarray
    tau_r: np.ndarray
    saturated: tuple[bool, bool, bool, bool] = (False, False, False, False)

    def __post_init__(self):
        object.__setattr__(self, "tau_h",
                           np.asarray(self.tau_h, dtype=float).reshape(2))
        object.__setattr__(self, "tau_r",
                           np.asarray(self.tau_r, dtype=float).reshape(2))

    @classmethod
    def clamped(cls, model: CoupledModel, tau_h, tau_r) -> "TorqueInput":
        limits = model.torque_limits
        raw = np.concatenate([np.asarray(tau_h, dtype=float).reshape(2),
                              np.asarray(tau_r, dtype=float).reshape(2)])
        clipped = np.clip(raw, [-l for l in limits], limits)
        sat = tuple(bool(a != b) for a, b in zip(raw, clipped))
        return cls(tau_h=clipped[:2], tau_r=clipped[2:], saturated=sat)


@dataclass(frozen=True)
class SiteLoad:
    """Interaction load applied to the human segment at one strap site.

    The exo side receives the exact negation (action-reaction).
    """

    force: tuple[float, float]  # N, in-plane on the human strap point
    torque: float               # N*m on the human segment


@dataclass(frozen=True)
class InteractionForces:
    loads: dict[str, SiteLoad] = field(default_factory=dict)

    def human_load(self, site: str) -> SiteLoad:
        return self.loads[site]

    def exo_load(self, site: str) -> SiteLoad:
        s = self.loads[site]
        return SiteLoad(force=(-s.force[0], -s.force[1]), torque=-s.torque)


@dataclass
class Trajectory:
    """Rollout samples recorded at the controller rate.

    Torque rows hold the command applied over the interval starting at each
    sample; the final row repeats the last applied command so all columns
    share one length.
    """

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau_h: np.ndarray
    tau_r: np.ndarray
    rate: float
    dt: float

    def __len__(self):
        return len(self.t)

    def final_state(self) -> CoupledState:
        return CoupledState(q=self.q[-1], qdot=self.qdot[-1], t=float(self.t[-1]))


TRAJECTORY_COLUMNS = ("t", "q1", "q2", "q3", "q4", "qd1", "qd2", "qd3", "qd4",
                      "tau_h1", "tau_h2", "tau_r1", "tau_r2")


def write_trajectory(traj: Trajectory, path) -> None:
    """Export as delimited text (SI units, radians), one header row."""
    data = np.column_stack([traj.t, traj.q, traj.qdot, traj.tau_h, traj.tau_r])
    np.savetxt(path, data, delimiter=",", header=",".join(TRAJECTORY_COLUMNS),
               comments="", fmt="%.10g")


def read_trajectory(path, rate: float = 100.0, dt: float = DEFAULT_DT) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(t=data[:, 0], q=data[:, 1:5], qdot=data[:, 5:9],
                      tau_h=data[:, 9:11], tau_r=data[:, 11:13],
                      rate=rate, dt=dt)


def _chain_constants(link, gravity: float):
    """Lumped double-pendulum constants for one chain."""
    a = link.thigh_inertia + link.thigh_mass * link.thigh_com_offset ** 2 \
        + link.shank_foot_mass * link.thigh_length ** 2
    b = link.shank_foot_mass * link.thigh_length * link.shank_com_offset
    d = link.shank_inertia + link.shank_foot_mass * link.shank_com_offset ** 2
    g1 = gravity * (link.thigh_mass * link.thigh_com_offset
                    + link.shank_foot_mass * link.thigh_length)
    g2 = gravity * link.shank_foot_mass * link.shank_com_offset
    return a, b, d, g1, g2, link.thigh_length


def _site_table(model: CoupledModel):
    table = []
    for site in STRAP_SITES:
        c = model.bushings.site(site)
        table.append(("shank" in site, model.straps.site(site),
                      c.translational_stiffness, c.translational_damping,
                      c.rotational_stiffness, c.rotational_damping))
    return tuple(table)


@lru_cache(maxsize=64)
def _compiled_accel(model: CoupledModel):
    """Build the scalar acceleration function for one model.

    This is the innermost hot path of every rollout (four calls per RK4
    substep), so it works on plain floats with all model constants bound in
    the closure.
    """
    ah, bh, dh, g1h, g2h, lh = _chain_constants(model.subject, model.gravity)
    ae, be, de, g1e, g2e, le = _chain_constants(model.exo, model.gravity)
    sites = _site_table(model)
    (lo0, hi0), (lo1, hi1), (lo2, hi2), (lo3, hi3) = model.joint_ranges
    ks = model.joint_stop_stiffness
    bs = model.joint_stop_damping
    sin = math.sin
    cos = math.cos

    def accel(q0, q1, q2, q3, v0, v1, v2, v3, t0, t1, t2, t3):
        # segment angles: alpha = hip, beta = hip - knee (absolute shank)
        sah = sin(q0); cah = cos(q0); skh = sin(q1); ckh = cos(q1)
        sbh = sah * ckh - cah * skh
        cbh = cah * ckh + sah * skh
        sae = sin(q2); cae = cos(q2); ske = sin(q3); cke = cos(q3)
        sbe = sae * cke - cae * ske
        cbe = cae * cke + sae * ske
        bdh = v0 - v1  # human shank absolute rate
        bde = v2 - v3

        # strap interaction, accumulated as generalized forces per chain
        f0 = f1 = f2 = f3 = 0.0
        for on_shank, dist, kt, bt, kr, br in sites:
            if on_shank:
                phx = lh * sah + dist * sbh
                phy = -lh * cah - dist * cbh
                pex = le * sae + dist * sbe
                pey = -le * cae - dist * cbe
                vhx = lh * v0 * cah + dist * bdh * cbh
                vhy = lh * v0 * sah + dist * bdh * sbh
                vex = le * v2 * cae + dist * bde * cbe
                vey = le * v2 * sae + dist * bde * sbe
                fx = kt * (pex - phx) + bt * (vex - vhx)
                fy = kt * (pey - phy) + bt * (vey - vhy)
                trq = kr * ((q2 - q3) - (q0 - q1)) + br * (bde - bdh)
                f0 += fx * (lh * cah + dist * cbh) + fy * (lh * sah + dist * sbh) + trq
                f1 += -dist * (fx * cbh + fy * sbh) - trq
                f2 += -fx * (le * cae + dist * cbe) - fy * (le * sae + dist * sbe) - trq
                f3 += dist * (fx * cbe + fy * sbe) + trq
            else:
                fx = kt * (dist * sae - dist * sah) + bt * (dist * v2 * cae - dist * v0 * cah)
                fy = kt * (dist * cah - dist * cae) + bt * (dist * v2 * sae - dist * v0 * sah)
                trq = kr * (q2 - q0) + br * (v2 - v0)
                f0 += dist * (fx * cah + fy * sah) + trq
                f2 += -dist * (fx * cae + fy * sae) - trq

        # soft one-sided joint stops
        if q0 > hi0:
            f0 -= ks * (q0 - hi0) + bs * v0
        elif q0 < lo0:
            f0 -= ks * (q0 - lo0) + bs * v0
        if q1 > hi1:
            f1 -= ks * (q1 - hi1) + bs * v1
        elif q1 < lo1:
            f1 -= ks * (q1 - lo1) + bs * v1
        if q2 > hi2:
            f2 -= ks * (q2 - hi2) + bs * v2
        elif q2 < lo2:
            f2 -= ks * (q2 - lo2) + bs * v2
        if q3 > hi3:
            f3 -= ks * (q3 - hi3) + bs * v3
        elif q3 < lo3:
            f3 -= ks * (q3 - lo3) + bs * v3

        # human chain: mass matrix, bias, 2x2 solve
        hch = bh * skh
        m11 = ah + 2.0 * bh * ckh + dh
        m12 = -(bh * ckh + dh)
        bias_a = hch * bdh * bdh + g1h * sah
        bias_b = -hch * v0 * v0 + g2h * sbh
        r1 = t0 + f0 - (bias_a + bias_b)
        r2 = t1 + f1 + bias_b
        det = m11 * dh - m12 * m12
        if det <= 1.0e-12:
            raise DynamicsError("singular mass matrix (model bug)")
        a0 = (r1 * dh - m12 * r2) / det
        a1 = (m11 * r2 - m12 * r1) / det

        # exo chain
        hce = be * ske
        m11 = ae + 2.0 * be * cke + de
        m12 = -(be * cke + de)
        bias_a = hce * bde * bde + g1e * sae
        bias_b = -hce * v2 * v2 + g2e * sbe
        r1 = t2 + f2 - (bias_a + bias_b)
        r2 = t3 + f3 + bias_b
        det = m11 * de - m12 * m12
        if det <= 1.0e-12:
            raise DynamicsError("singular mass matrix (model bug)")
        a2 = (r1 * de - m12 * r2) / det
        a3 = (m11 * r2 - m12 * r1) / det
        return a0, a1, a2, a3

    return accel


def _chain_mass(consts, knee: float) -> np.ndarray:
    a, b, d = consts[0], consts[1], consts[2]
    ck = math.cos(knee)
    m12 = -(b * ck + d)
    return np.array([[a + 2.0 * b * ck + d, m12], [m12, d]])


def mass_matrix(model: CoupledModel, q) -> np.ndarray:
    """4x4 generalized mass matrix; symmetric positive-definite and
    block-diagonal across the two chains."""
    q = np.asarray(q, dtype=float).reshape(4)
    out = np.zeros((4, 4))
    out[:2, :2] = _chain_mass(_chain_constants(model.subject, model.gravity), q[1])
    out[2:, 2:] = _chain_mass(_chain_constants(model.exo, model.gravity), q[3])
    return out


def _chain_bias(consts, hip, knee, hipd, kneed):
    _, b, _, g1, g2, _ = consts
    beta = hip - knee
    betad = hipd - kneed
    h = b * math.sin(knee)
    bias_a = h * betad * betad + g1 * math.sin(hip)
    bias_b = -h * hipd * hipd + g2 * math.sin(beta)
    return bias_a + bias_b, -bias_b


def bias_and_gravity(model: CoupledModel, q, qdot) -> np.ndarray:
    """Coriolis/centrifugal plus gravity terms on the left-hand side.

    At qdot = 0 this reduces to the gravity vector G(q); the torque gravity
    exerts on the joints is its negation.
    """
    q = np.asarray(q, dtype=float).reshape(4)
    qdot = np.asarray(qdot, dtype=float).reshape(4)
    h = _chain_bias(_chain_constants(model.subject, model.gravity),
                    q[0], q[1], qdot[0], qdot[1])
    e = _chain_bias(_chain_constants(model.exo, model.gravity),
                    q[2], q[3], qdot[2], qdot[3])
    return np.array([h[0], h[1], e[0], e[1]])


def _segment_points(link_consts, hip, knee, hipd, kneed, dist, on_shank):
    l1 = link_consts[5]
    beta = hip - knee
    betad = hipd - kneed
    sa, ca = math.sin(hip), math.cos(hip)
    if not on_shank:
        p = (dist * sa, -dist * ca)
        v = (dist * hipd * ca, dist * hipd * sa)
        theta, thetad = hip, hipd
    else:
        sb, cb = math.sin(beta), math.cos(beta)
        p = (l1 * sa + dist * sb, -l1 * ca - dist * cb)
        v = (l1 * hipd * ca + dist * betad * cb, l1 * hipd * sa + dist * betad * sb)
        theta, thetad = beta, betad
    return p, v, theta, thetad


def bushing_wrench(model: CoupledModel, state: CoupledState) -> InteractionForces:
    """Per-site spring-damper loads on the human chain (exo side negated)."""
    hc = _chain_constants(model.subject, model.gravity)
    ec = _chain_constants(model.exo, model.gravity)
    q, qd = state.q, state.qdot
    loads = {}
    for site, spec in zip(STRAP_SITES, _site_table(model)):
        on_shank, dist, kt, bt, kr, br = spec
        ph, vh, th_h, thd_h = _segment_points(hc, q[0], q[1], qd[0], qd[1], dist, on_shank)
        pe, ve, th_e, thd_e = _segment_points(ec, q[2], q[3], qd[2], qd[3], dist, on_shank)
        fx = kt * (pe[0] - ph[0]) + bt * (ve[0] - vh[0])
        fy = kt * (pe[1] - ph[1]) + bt * (ve[1] - vh[1])
        trq = kr * (th_e - th_h) + br * (thd_e - thd_h)
        loads[site] = SiteLoad(force=(fx, fy), torque=trq)
    return InteractionForces(loads=loads)


def interaction_generalized_forces(model: CoupledModel, state: CoupledState) -> np.ndarray:
    """Strap loads mapped through the chain Jacobians, J(q)^T f."""
    hc = _chain_constants(model.subject, model.gravity)
    ec = _chain_constants(model.exo, model.gravity)
    q, qd = state.q, state.qdot
    wrench = bushing_wrench(model, state)
    out = np.zeros(4)
    for site, spec in zip(STRAP_SITES, _site_table(model)):
        on_shank, dist = spec[0], spec[1]
        load = wrench.human_load(site)
        out[:2] += _point_jacobian_t(hc, q[0], q[1], dist, on_shank, load)
        exo_load = wrench.exo_load(site)
        out[2:] += _point_jacobian_t(ec, q[2], q[3], dist, on_shank, exo_load)
    return out


def _point_jacobian_t(link_consts, hip, knee, dist, on_shank, load: SiteLoad):
    l1 = link_consts[5]
    fx, fy = load.force
    sa, ca = math.sin(hip), math.cos(hip)
    if not on_shank:
        return np.array([dist * (fx * ca + fy * sa) + load.torque, 0.0])
    beta = hip - knee
    sb, cb = math.sin(beta), math.cos(beta)
    t1 = fx * (l1 * ca + dist * cb) + fy * (l1 * sa + dist * sb) + load.torque
    t2 = -dist * (fx * cb + fy * sb) - load.torque
    return np.array([t1, t2])


def _joint_stop_forces(model: CoupledModel, q, qdot) -> np.ndarray:
    out = np.zeros(4)
    ks, bs = model.joint_stop_stiffness, model.joint_stop_damping
    for j, (lo, hi) in enumerate(model.joint_ranges):
        if q[j] > hi:
            out[j] = -ks * (q[j] - hi) - bs * qdot[j]
        elif q[j] < lo:
            out[j] = -ks * (q[j] - lo) - bs * qdot[j]
    return out


def validate_state(model: CoupledModel, state: CoupledState,
                   margin: float = SOFT_RANGE_MARGIN) -> None:
    for j, (lo, hi) in enumerate(model.joint_ranges):
        if not (lo - margin <= state.q[j] <= hi + margin):
            raise DynamicsError(
                f"joint {j} angle {state.q[j]:.3f} rad outside configured "
                f"range [{lo}, {hi}] by more than {margin} rad")


def forward_dynamics(model: CoupledModel, state: CoupledState,
                     torque: TorqueInput) -> np.ndarray:
    """Generalized accelerations for the given state and clamped torques."""
    validate_state(model, state)
    torque = TorqueInput.clamped(model, torque.tau_h, torque.tau_r)
    accel = _compiled_accel(model)
    return np.array(accel(*state.q, *state.qdot,
                          torque.tau_h[0], torque.tau_h[1],
                          torque.tau_r[0], torque.tau_r[1]))


def total_energy(model: CoupledModel, state: CoupledState) -> float:
    """Kinetic + gravitational + elastic (bushing and stop) energy."""
    q, qd = state.q, state.qdot

    def chain(consts, hip, knee, hipd, kneed):
        a, b, d, g1, g2, _ = consts
        betad = hipd - kneed
        kin = 0.5 * a * hipd ** 2 + 0.5 * d * betad ** 2 \
            + b * math.cos(knee) * hipd * betad
        pot = -g1 * math.cos(hip) - g2 * math.cos(hip - knee)
        return kin + pot

    e = chain(_chain_constants(model.subject, model.gravity), q[0], q[1], qd[0], qd[1])
    e += chain(_chain_constants(model.exo, model.gravity), q[2], q[3], qd[2], qd[3])

    hc = _chain_constants(model.subject, model.gravity)
    ec = _chain_constants(model.exo, model.gravity)
    for spec in zip(STRAP_SITES, _site_table(model)):
        on_shank, dist, kt, _, kr, _ = spec[1]
        ph, _, th_h, _ = _segment_points(hc, q[0], q[1], qd[0], qd[1], dist, on_shank)
        pe, _, th_e, _ = _segment_points(ec, q[2], q[3], qd[2], qd[3], dist, on_shank)
        e += 0.5 * kt * ((pe[0] - ph[0]) ** 2 + (pe[1] - ph[1]) ** 2)
        e += 0.5 * kr * (th_e - th_h) ** 2
    ks = model.joint_stop_stiffness
    for j, (lo, hi) in enumerate(model.joint_ranges):
        if q[j] > hi:
            e += 0.5 * ks * (q[j] - hi) ** 2
        elif q[j] < lo:
            e += 0.5 * ks * (q[j] - lo) ** 2
    return e


def integrate(model: CoupledModel, state0: CoupledState, torque_fn,
              duration: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Fixed-step RK4 rollout with the controller held at its own rate.

    ``torque_fn(t, state) -> TorqueInput`` is sampled once per controller
    tick (zero-order hold); physics substeps at ``dt`` within each tick, with
    ``dt`` snapped so substeps tile the tick exactly. Samples are recorded at
    the controller rate. Raises :class:`DivergenceError` when the state
    leaves the blow-up bounds.
    """
    if not dt > 0:
        raise DynamicsError("dt must be > 0")
    if duration < dt:
        raise DynamicsError("duration must be at least one step")
    validate_state(model, state0)

    rate = model.exo.controller_rate
    tick = 1.0 / rate
    n_ticks = max(1, int(round(duration * rate)))
    substeps = max(1, int(round(tick / dt)))
    h = tick / substeps

    accel = _compiled_accel(model)
    limits = model.torque_limits
    neg_limits = tuple(-l for l in limits)

    n = n_ticks + 1
    ts = np.empty(n)
    qs = np.empty((n, 4))
    vs = np.empty((n, 4))
    tau_hs = np.empty((n, 2))
    tau_rs = np.empty((n, 2))

    q0, q1, q2, q3 = state0.q
    v0, v1, v2, v3 = state0.qdot
    t0 = state0.t
    ts[0] = t0
    qs[0] = (q0, q1, q2, q3)
    vs[0] = state0.qdot

    sixth = h / 6.0
    half = h / 2.0
    for k in range(n_ticks):
        t = t0 + k * tick
        cmd = torque_fn(t, CoupledState(q=qs[k], qdot=vs[k], t=t))
        raw = (cmd.tau_h[0], cmd.tau_h[1], cmd.tau_r[0], cmd.tau_r[1])
        u0, u1, u2, u3 = (min(max(x, lo), hi)
                          for x, lo, hi in zip(raw, neg_limits, limits))
        tau_hs[k] = (u0, u1)
        tau_rs[k] = (u2, u3)

        for _ in range(substeps):
            a0, a1, a2, a3 = accel(q0, q1, q2, q3, v0, v1, v2, v3, u0, u1, u2, u3)
            w0 = v0 + half * a0; w1 = v1 + half * a1
            w2 = v2 + half * a2; w3 = v3 + half * a3
            b0, b1, b2, b3 = accel(q0 + half * v0, q1 + half * v1,
                                   q2 + half * v2, q3 + half * v3,
                                   w0, w1, w2, w3, u0, u1, u2, u3)
            x0 = v0 + half * b0; x1 = v1 + half * b1
            x2 = v2 + half * b2; x3 = v3 + half * b3
            c0, c1, c2, c3 = accel(q0 + half * w0, q1 + half * w1,
                                   q2 + half * w2, q3 + half * w3,
                                   x0, x1, x2, x3, u0, u1, u2, u3)
            y0 = v0 + h * c0; y1 = v1 + h * c1
            y2 = v2 + h * c2; y3 = v3 + h * c3
            d0, d1, d2, d3 = accel(q0 + h * x0, q1 + h * x1,
                                   q2 + h * x2, q3 + h * x3,
                                   y0, y1, y2, y3, u0, u1, u2, u3)
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
            raise DivergenceError(t + tick, (q0, q1, q2, q3), (v0, v1, v2, v3))

        ts[k + 1] = t0 + (k + 1) * tick
        qs[k + 1] = (q0, q1, q2, q3)
        vs[k + 1] = (v0, v1, v2, v3)

    tau_hs[-1] = tau_hs[-2]
    tau_rs[-1] = tau_rs[-2]
    return Trajectory(t=ts, q=qs, qdot=vs, tau_h=tau_hs, tau_r=tau_rs,
                      rate=rate, dt=h)
