"""Subject, exoskeleton, and coupling parameters for the planar human-exo model.

The combined system is two planar 2-link chains (thigh + lumped shank/foot)
sharing a coaxial hip: one chain for the human leg, one for the exoskeleton
leg. Chains interact only through strap bushings, configured here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from functools import cached_property

SCHEMA_VERSION = 1

GRAVITY = 9.81  # m/s^2

# Anthropometric fractions for segment properties from body height/mass
# (Winter-style segment tables; shank and foot lumped into one segment).
THIGH_LENGTH_FRACTION = 0.245        # of height
SHANK_FOOT_LENGTH_FRACTION = 0.246   # of height (knee-to-ankle; downstream
                                     # dynamics treat the foot as carried mass)
THIGH_MASS_FRACTION = 0.100          # of body mass
SHANK_FOOT_MASS_FRACTION = 0.061     # shank 0.0465 + foot 0.0145
THIGH_COM_FRACTION = 0.433           # of thigh length, from hip
SHANK_FOOT_COM_FRACTION = 0.568      # of shank length, from knee (lumped)
THIGH_GYRATION_FRACTION = 0.323      # radius of gyration about COM / length
SHANK_FOOT_GYRATION_FRACTION = 0.357  # lumped shank+foot about lumped COM

# Human joint ranges and ideal-actuator limits (defaults; configurable).
DEFAULT_HIP_RANGE = (-0.40, 2.10)    # rad, extension .. flexion
DEFAULT_KNEE_RANGE = (0.0, 2.40)     # rad, knee flexion is positive
DEFAULT_HIP_TORQUE_LIMIT = 150.0     # N*m
DEFAULT_KNEE_TORQUE_LIMIT = 120.0    # N*m

# Exoskeleton defaults. The hardware datasheet values are not part of this
# artifact's ground truth; everything below is configuration.
DEFAULT_EXO_THIGH_MASS = 2.5         # kg per link
DEFAULT_EXO_SHANK_MASS = 2.0
DEFAULT_EXO_GYRATION_FRACTION = 0.35
DEFAULT_EXO_TORQUE_LIMIT = 60.0      # N*m per joint
DEFAULT_CONTROLLER_RATE = 100.0      # Hz

STRAP_SITES = ("upper_thigh", "lower_thigh", "upper_shank", "lower_shank")
DEFAULT_STRAP_FRACTIONS = (0.25, 0.75)  # of segment length, upper/lower

# Soft one-sided joint stops beyond the configured ranges (keeps the ODE
# smooth instead of imposing hard constraints).
DEFAULT_JOINT_STOP_STIFFNESS = 300.0  # N*m/rad
DEFAULT_JOINT_STOP_DAMPING = 20.0     # N*m*s/rad


class ModelValidationError(ValueError):
    """A model parameter violates one of its invariants."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ModelValidationError(message)


def _validate_link_set(obj, kind: str) -> None:
    _require(obj.thigh_length > 0, f"{kind}.thigh_length must be > 0")
    _require(obj.shank_foot_length > 0, f"{kind}.shank_foot_length must be > 0")
    _require(obj.thigh_mass > 0, f"{kind}.thigh_mass must be > 0")
    _require(obj.shank_foot_mass > 0, f"{kind}.shank_foot_mass must be > 0")
    _require(0 < obj.thigh_com_offset < obj.thigh_length,
             f"{kind}.thigh_com_offset must lie inside (0, thigh_length)")
    _require(0 < obj.shank_com_offset < obj.shank_foot_length,
             f"{kind}.shank_com_offset must lie inside (0, shank_foot_length)")
    _require(obj.thigh_inertia > 0, f"{kind}.thigh_inertia must be > 0")
    _require(obj.shank_inertia > 0, f"{kind}.shank_inertia must be > 0")
    _require(obj.hip_angle_range[0] < obj.hip_angle_range[1],
             f"{kind}.hip_angle_range must satisfy min < max")
    _require(obj.knee_angle_range[0] < obj.knee_angle_range[1],
             f"{kind}.knee_angle_range must satisfy min < max")


@dataclass(frozen=True)
class SubjectModel:
    """Inertial/geometric properties of one human leg, foot lumped into shank.

    Angles follow the chain convention used throughout: hip flexion positive
    (thigh forward of vertical), knee flexion positive (shank folded back
    relative to the thigh). COM offsets are measured from the proximal joint.
    """

    thigh_length: float            # m
    shank_foot_length: float       # m, shank plus foot lumped
    thigh_mass: float              # kg
    shank_foot_mass: float         # kg
    thigh_com_offset: float        # m from hip along the thigh
    shank_com_offset: float        # m from knee along the shank
    thigh_inertia: float           # kg*m^2 about the thigh COM
    shank_inertia: float           # kg*m^2 about the lumped COM
    hip_angle_range: tuple[float, float] = DEFAULT_HIP_RANGE    # rad
    knee_angle_range: tuple[float, float] = DEFAULT_KNEE_RANGE  # rad
    hip_torque_limit: float = DEFAULT_HIP_TORQUE_LIMIT          # N*m
    knee_torque_limit: float = DEFAULT_KNEE_TORQUE_LIMIT        # N*m

    def __post_init__(self):
        _validate_link_set(self, "subject")
        _require(self.hip_torque_limit > 0, "subject.hip_torque_limit must be > 0")
        _require(self.knee_torque_limit > 0, "subject.knee_torque_limit must be > 0")


@dataclass(frozen=True)
class ExoModel:
    """Exoskeleton leg: same link layout as the subject plus actuation limits."""

    thigh_length: float
    shank_foot_length: float
    thigh_mass: float
    shank_foot_mass: float
    thigh_com_offset: float
    shank_com_offset: float
    thigh_inertia: float
    shank_inertia: float
    hip_angle_range: tuple[float, float] = (-0.52, 2.18)
    knee_angle_range: tuple[float, float] = (-0.05, 2.40)
    actuator_torque_limit: float = DEFAULT_EXO_TORQUE_LIMIT  # N*m, per joint
    controller_rate: float = DEFAULT_CONTROLLER_RATE         # Hz

    def __post_init__(self):
        _validate_link_set(self, "exo")
        _require(self.actuator_torque_limit > 0,
                 "exo.actuator_torque_limit must be > 0")
        _require(self.controller_rate > 0, "exo.controller_rate must be > 0")


@dataclass(frozen=True)
class BushingCoefficients:
    """Planar spring-damper coefficients for one strap attachment."""

    translational_stiffness: float = 10_000.0  # N/m, per in-plane axis
    translational_damping: float = 100.0       # N*s/m
    rotational_stiffness: float = 100.0        # N*m/rad
    rotational_damping: float = 10.0           # N*m*s/rad

    def __post_init__(self):
        for name in ("translational_stiffness", "translational_damping",
                     "rotational_stiffness", "rotational_damping"):
            _require(getattr(self, name) >= 0, f"bushing.{name} must be >= 0")


@dataclass(frozen=True)
class BushingParams:
    """Bushing coefficients for the four strap sites."""

    upper_thigh: BushingCoefficients = field(default_factory=BushingCoefficients)
    lower_thigh: BushingCoefficients = field(default_factory=BushingCoefficients)
    upper_shank: BushingCoefficients = field(default_factory=BushingCoefficients)
    lower_shank: BushingCoefficients = field(default_factory=BushingCoefficients)

    def site(self, name: str) -> BushingCoefficients:
        return getattr(self, name)

    @classmethod
    def uniform(cls, coeffs: BushingCoefficients) -> "BushingParams":
        return cls(**{site: coeffs for site in STRAP_SITES})


@dataclass(frozen=True)
class StrapPositions:
    """Strap attachment distances along each segment, from the proximal joint.

    The same distances are used on the human and exo side of each pair, which
    is what makes the interaction wrench vanish exactly when the two chains
    coincide.
    """

    upper_thigh: float
    lower_thigh: float
    upper_shank: float
    lower_shank: float

    def site(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class CoupledModel:
    """Validated human chain + exo chain + strap coupling.

    Both chains are rooted at a common, mechanically grounded hip point (the
    alignment step of the build guarantees coaxial hips and matched segment
    lengths), so identical joint coordinates imply identical strap kinematics.
    Immutable after construction; safe to share across concurrent rollouts.
    """

    subject: SubjectModel
    exo: ExoModel
    bushings: BushingParams
    straps: StrapPositions
    gravity: float = GRAVITY
    joint_stop_stiffness: float = DEFAULT_JOINT_STOP_STIFFNESS
    joint_stop_damping: float = DEFAULT_JOINT_STOP_DAMPING

    def __post_init__(self):
        _require(self.gravity > 0, "gravity must be > 0")
        _require(self.joint_stop_stiffness >= 0,
                 "joint_stop_stiffness must be >= 0")
        _require(self.joint_stop_damping >= 0,
                 "joint_stop_damping must be >= 0")
        for site in ("upper_thigh", "lower_thigh"):
            d = self.straps.site(site)
            _require(0 < d <= self.subject.thigh_length,
                     f"strap {site} must lie within the thigh length")
        for site in ("upper_shank", "lower_shank"):
            d = self.straps.site(site)
            _require(0 < d <= self.subject.shank_foot_length,
                     f"strap {site} must lie within the shank length")
        _require(abs(self.exo.thigh_length - self.subject.thigh_length) < 1e-12
                 and abs(self.exo.shank_foot_length
                         - self.subject.shank_foot_length) < 1e-12,
                 "exo segment lengths must be aligned to the subject "
                 "(use build_coupled_model)")

    @cached_property
    def joint_ranges(self) -> tuple[tuple[float, float], ...]:
        """Configured (min, max) per generalized coordinate, human then exo."""
        return (self.subject.hip_angle_range, self.subject.knee_angle_range,
                self.exo.hip_angle_range, self.exo.knee_angle_range)

    @cached_property
    def torque_limits(self) -> tuple[float, float, float, float]:
        return (self.subject.hip_torque_limit, self.subject.knee_torque_limit,
                self.exo.actuator_torque_limit, self.exo.actuator_torque_limit)


def _align_exo(subject: SubjectModel, exo: ExoModel) -> ExoModel:
    """Rescale the exo links to the subject's segment lengths.

    Mirrors fitting the hardware to the wearer: link lengths are adjusted,
    COM positions move proportionally, and inertias scale with length^2.
    """
    def scaled(length, target, com, inertia):
        ratio = target / length
        return target, com * ratio, inertia * ratio * ratio

    t_len, t_com, t_inr = scaled(exo.thigh_length, subject.thigh_length,
                                 exo.thigh_com_offset, exo.thigh_inertia)
    s_len, s_com, s_inr = scaled(exo.shank_foot_length,
                                 subject.shank_foot_length,
                                 exo.shank_com_offset, exo.shank_inertia)
    return replace(exo, thigh_length=t_len, thigh_com_offset=t_com,
                   thigh_inertia=t_inr, shank_foot_length=s_len,
                   shank_com_offset=s_com, shank_inertia=s_inr)


def build_coupled_model(subject: SubjectModel,
                        exo: ExoModel | None = None,
                        bushings: BushingParams | None = None,
                        *,
                        strap_fractions: tuple[float, float] = DEFAULT_STRAP_FRACTIONS,
                        gravity: float = GRAVITY) -> CoupledModel:
    """Build and validate the combined human-exo model.

    The exo is aligned to the subject (coaxial hip, matched segment lengths)
    and straps default to 25% and 75% of each segment. Pure: identical inputs
    produce an identical model.
    """
    if exo is None:
        exo = default_exo_model()
    if bushings is None:
        bushings = BushingParams()
    exo = _align_exo(subject, exo)
    upper, lower = strap_fractions
    _require(0 < upper < lower <= 1.0,
             "strap fractions must satisfy 0 < upper < lower <= 1")
    straps = StrapPositions(
        upper_thigh=upper * subject.thigh_length,
        lower_thigh=lower * subject.thigh_length,
        upper_shank=upper * subject.shank_foot_length,
        lower_shank=lower * subject.shank_foot_length,
    )
    return CoupledModel(subject=subject, exo=exo, bushings=bushings,
                        straps=straps, gravity=gravity)


def anthropometric_subject(height: float, mass: float) -> SubjectModel:
    """Subject model from body height (m) and mass (kg).

    Segment lengths, masses, COM offsets, and inertias come from the fixed
    fraction constants at the top of this module, so all length-like fields
    scale linearly with height and all mass-like fields linearly with mass.
    """
    _require(1.0 <= height <= 2.3, "height must be within [1.0, 2.3] m")
    _require(30.0 <= mass <= 200.0, "mass must be within [30, 200] kg")
    thigh_length = THIGH_LENGTH_FRACTION * height
    shank_length = SHANK_FOOT_LENGTH_FRACTION * height
    thigh_mass = THIGH_MASS_FRACTION * mass
    shank_mass = SHANK_FOOT_MASS_FRACTION * mass
    return SubjectModel(
        thigh_length=thigh_length,
        shank_foot_length=shank_length,
        thigh_mass=thigh_mass,
        shank_foot_mass=shank_mass,
        thigh_com_offset=THIGH_COM_FRACTION * thigh_length,
        shank_com_offset=SHANK_FOOT_COM_FRACTION * shank_length,
        thigh_inertia=thigh_mass * (THIGH_GYRATION_FRACTION * thigh_length) ** 2,
        shank_inertia=shank_mass * (SHANK_FOOT_GYRATION_FRACTION * shank_length) ** 2,
    )


def default_exo_model(thigh_length: float = 0.44,
                      shank_foot_length: float = 0.44) -> ExoModel:
    """Exo leg with the documented default link masses and limits."""
    ti = DEFAULT_EXO_THIGH_MASS * (DEFAULT_EXO_GYRATION_FRACTION * thigh_length) ** 2
    si = DEFAULT_EXO_SHANK_MASS * (DEFAULT_EXO_GYRATION_FRACTION * shank_foot_length) ** 2
    return ExoModel(
        thigh_length=thigh_length,
        shank_foot_length=shank_foot_length,
        thigh_mass=DEFAULT_EXO_THIGH_MASS,
        shank_foot_mass=DEFAULT_EXO_SHANK_MASS,
        thigh_com_offset=0.5 * thigh_length,
        shank_com_offset=0.5 * shank_foot_length,
        thigh_inertia=ti,
        shank_inertia=si,
    )


# --- model configuration documents -----------------------------------------
#
# Schema (version 1): a JSON object with keys
#   schema_version : int, required, must equal 1
#   subject        : either {"height_m": .., "mass_kg": ..} or the full
#                    SubjectModel field set
#   exo            : optional, partial/full ExoModel field set (defaults fill
#                    the gaps)
#   bushings       : optional, {site: {coefficient: value}} per strap site
#   gravity        : optional, m/s^2
#   strap_fractions: optional, [upper, lower]


def _tupled(d: dict, keys: tuple[str, ...]) -> dict:
    out = dict(d)
    for k in keys:
        if k in out:
            out[k] = tuple(out[k])
    return out


def subject_from_document(doc: dict) -> SubjectModel:
    if set(doc) == {"height_m", "mass_kg"}:
        return anthropometric_subject(doc["height_m"], doc["mass_kg"])
    return SubjectModel(**_tupled(doc, ("hip_angle_range", "knee_angle_range")))


def exo_from_document(doc: dict) -> ExoModel:
    base = asdict(default_exo_model())
    base.update(_tupled(doc, ("hip_angle_range", "knee_angle_range")))
    return ExoModel(**base)


def bushings_from_document(doc: dict) -> BushingParams:
    sites = {}
    for site in STRAP_SITES:
        if site in doc:
            sites[site] = BushingCoefficients(**doc[site])
    return BushingParams(**sites)


def model_from_document(doc: dict) -> CoupledModel:
    """Build a CoupledModel from a parsed configuration document."""
    version = doc.get("schema_version")
    _require(version == SCHEMA_VERSION,
             f"unsupported model schema_version: {version!r}")
    _require("subject" in doc, "model document requires a 'subject' section")
    subject = subject_from_document(doc["subject"])
    exo = exo_from_document(doc.get("exo", {}))
    bushings = bushings_from_document(doc.get("bushings", {}))
    kwargs = {}
    if "strap_fractions" in doc:
        kwargs["strap_fractions"] = tuple(doc["strap_fractions"])
    return build_coupled_model(subject, exo, bushings,
                               gravity=doc.get("gravity", GRAVITY), **kwargs)


def model_to_document(model: CoupledModel) -> dict:
    """Canonical document echoing every resolved parameter of the model."""
    return {
        "schema_version": SCHEMA_VERSION,
        "subject": asdict(model.subject),
        "exo": asdict(model.exo),
        "bushings": asdict(model.bushings),
        "straps": asdict(model.straps),
        "gravity": model.gravity,
        "joint_stop_stiffness": model.joint_stop_stiffness,
        "joint_stop_damping": model.joint_stop_damping,
    }


def load_model_config(path) -> CoupledModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_document(json.load(fh))
