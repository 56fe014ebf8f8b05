"""Planar benchmark scenarios: elbow reach, quasi-static push, two routes.

Each builder returns a Scenario bundling one PathProblem, the candidate
skeletons with their successor table, the target description, and the
parameters used.  All three use double-integrator robot coordinates
(acceleration effort rows); the push scenario adds uncontrolled object
coordinates whose passive density is a weak drift penalty and whose
motion is governed by contact equality rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .features import (EFFORT, AccelerationPenalty, AffineFeature, Array,
                       DriftPenalty, coordinate_target)
from .problem import Mode, PathProblem, Skeleton, Switch, free_skeleton


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for all scenarios; geometric quantities must be positive and
    window fractions must lie in [0, 1]."""

    name: str = "elbow"
    N: int = 40
    T: float = 5.0
    sigma: float = 0.1
    # elbow: planar arm over a table at y = 0
    link_lengths: tuple = (0.5, 0.5, 0.5, 0.5)
    start_angles: tuple = (1.0, -0.4, -0.4, -0.4)
    arm_target: tuple = (1.35, 0.25)
    arm_target_weight: float = 1e3
    contact_fraction: float = 0.6
    # push: two finger points and a box pose (x, y, theta)
    box_half: float = 0.1
    box_start: tuple = (0.55, 0.0, 0.0)
    box_target: tuple = (0.85, 0.0, 0.0)
    box_target_weight: float = 100.0
    contact_offset: float = 0.06
    approach_gap: float = 0.15
    sigma_object: float = 0.3
    sigma_object_rot: float = 3.0
    push_fraction: float = 0.4
    # tworoute: point robot with two candidate waypoints
    route_start: tuple = (0.0, 0.0)
    route_target: tuple = (1.0, 0.0)
    waypoint_near: tuple = (0.5, 0.2)
    waypoint_far: tuple = (0.5, 0.8)
    route_target_weight: float = 300.0
    waypoint_fraction: float = 0.5

    def __post_init__(self):
        if self.N < 4:
            raise ValueError("N must be at least 4")
        for label, value in (("T", self.T), ("sigma", self.sigma),
                             ("box_half", self.box_half),
                             ("sigma_object", self.sigma_object),
                             ("sigma_object_rot", self.sigma_object_rot),
                             ("arm_target_weight", self.arm_target_weight),
                             ("box_target_weight", self.box_target_weight),
                             ("route_target_weight", self.route_target_weight),
                             ("approach_gap", self.approach_gap)):
            if not value > 0:
                raise ValueError(f"{label} must be positive, got {value}")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        for label, frac in (("contact_fraction", self.contact_fraction),
                            ("push_fraction", self.push_fraction),
                            ("waypoint_fraction", self.waypoint_fraction)):
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"{label} must lie in [0, 1], got {frac}")

    @property
    def dt(self) -> float:
        return self.T / self.N


@dataclass(frozen=True)
class Scenario:
    name: str
    problem: PathProblem
    skeletons: tuple[Skeleton, ...]
    successors: dict
    target_coords: Array | None
    target_values: Array | None
    final_error: Callable[[Array], float]
    truth: Skeleton | None
    params: ScenarioParams

    def skeleton(self, skeleton_id: str) -> Skeleton:
        for sk in self.skeletons:
            if sk.id == skeleton_id:
                return sk
        raise KeyError(skeleton_id)


# --- planar arm kinematics ------------------------------------------------

def arm_joint_positions(theta: Array, lengths) -> Array:
    """World positions of every link tip of a planar chain rooted at 0."""
    phi = np.cumsum(theta)
    lengths = np.asarray(lengths, dtype=float)
    return np.column_stack([np.cumsum(lengths * np.cos(phi)),
                            np.cumsum(lengths * np.sin(phi))])


def arm_joint_jacobians(theta: Array, lengths) -> Array:
    """d position_k / d theta_i, shape (K, 2, K); zero for i > k."""
    phi = np.cumsum(theta)
    lengths = np.asarray(lengths, dtype=float)
    K = len(lengths)
    dx = -lengths * np.sin(phi)
    dy = lengths * np.cos(phi)
    jac = np.zeros((K, 2, K))
    for k in range(K):
        for i in range(k + 1):
            jac[k, 0, i] = dx[i:k + 1].sum()
            jac[k, 1, i] = dy[i:k + 1].sum()
    return jac


class ArmPointTarget:
    """Task rows sqrt(w) * (tip position - target)."""

    window = 1
    size = 2
    group = "task"

    def __init__(self, lengths, target, weight: float, name: str = "reach"):
        self.lengths = tuple(lengths)
        self.target = np.asarray(target, dtype=float)
        self.w = np.sqrt(weight)
        self.name = name

    def eval(self, xs: Array):
        theta = xs[0]
        pts = arm_joint_positions(theta, self.lengths)
        jac = arm_joint_jacobians(theta, self.lengths)
        return self.w * (pts[-1] - self.target), self.w * jac[-1]


class ArmJointHeight:
    """Equality row: the y coordinate of one link tip (zero on the table)."""

    window = 1
    size = 1

    def __init__(self, joint: int, lengths, name: str | None = None):
        self.joint = int(joint)  # 1-based link tip index
        self.lengths = tuple(lengths)
        self.name = name or f"joint{joint}-on-table"

    def eval(self, xs: Array):
        theta = xs[0]
        pts = arm_joint_positions(theta, self.lengths)
        jac = arm_joint_jacobians(theta, self.lengths)
        k = self.joint - 1
        return np.array([pts[k, 1]]), jac[k, 1:2, :].copy()


class ArmTableClearance:
    """Inequality rows -y_joint <= 0 keeping link tips above the table."""

    window = 1

    def __init__(self, joints, lengths, name: str = "table-clearance"):
        self.joints = tuple(int(j) for j in joints)
        self.lengths = tuple(lengths)
        self.size = len(self.joints)
        self.name = name

    def eval(self, xs: Array):
        theta = xs[0]
        pts = arm_joint_positions(theta, self.lengths)
        jac = arm_joint_jacobians(theta, self.lengths)
        idx = [j - 1 for j in self.joints]
        return -pts[idx, 1], -jac[idx, 1, :]


def build_elbow(params: ScenarioParams) -> Scenario:
    """Four-link arm reaching over a table; fixing joints on the table
    during the tail of the horizon trades path cost against stability."""
    lengths = params.link_lengths
    d = len(lengths)
    target = np.asarray(params.arm_target, dtype=float)
    if np.linalg.norm(target) > sum(lengths):
        raise ValueError(f"target {tuple(target)} outside arm reach {sum(lengths)}")
    theta0 = np.asarray(params.start_angles, dtype=float)
    if theta0.shape != (d,):
        raise ValueError(f"start_angles must have length {d}")
    N, dt = params.N, params.dt
    problem = PathProblem.uniform(
        N=N, d=d, dt=dt, sigma=params.sigma,
        prefix=np.stack([theta0, theta0]),
        per_step=(AccelerationPenalty(d, dt, params.sigma),),
        terminal=(ArmPointTarget(lengths, target, params.arm_target_weight),))

    contact_start = max(2, int(round(params.contact_fraction * N)))
    all_joints = tuple(range(1, d + 1))

    def clearance(exclude=()):
        joints = tuple(j for j in all_joints if j not in exclude)
        return (ArmTableClearance(joints, lengths),)

    def contact_skeleton(fixed: tuple[int, ...], skeleton_id: str) -> Skeleton:
        eq = tuple(ArmJointHeight(j, lengths) for j in fixed)
        tag = "".join(str(j) for j in fixed)
        return Skeleton(
            id=skeleton_id,
            modes=(Mode("free", (1, contact_start - 1), ineq=clearance()),
                   Mode(f"contact-{tag}", (contact_start, N), eq=eq,
                        ineq=clearance(exclude=fixed))),
            switches=(Switch(f"touch-{tag}", contact_start),))

    skeletons = (
        Skeleton(id="free", modes=(Mode("free", (1, N), ineq=clearance()),)),
        contact_skeleton((1,), "fix-joint-1"),
        contact_skeleton((2,), "fix-joint-2"),
        contact_skeleton((1, 2), "fix-both"),
    )
    successors = {("free", "touch-1"): ("contact-1",),
                  ("free", "touch-2"): ("contact-2",),
                  ("free", "touch-12"): ("contact-12",)}

    def final_error(x_final: Array) -> float:
        tip = arm_joint_positions(x_final, lengths)[-1]
        return float(np.linalg.norm(tip - target))

    return Scenario(name="elbow", problem=problem, skeletons=skeletons,
                    successors=successors, target_coords=None,
                    target_values=None, final_error=final_error,
                    truth=None, params=params)


# --- quasi-static push ----------------------------------------------------

def _rot(theta: float) -> Array:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _drot(theta: float) -> Array:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[-s, -c], [c, -s]])


class BoxAtRest:
    """Equality rows pinning the object pose to its previous value."""

    window = 2
    size = 3

    def __init__(self, dim: int, box0: int, name: str = "box-at-rest"):
        self.dim = dim
        self.box0 = box0
        self.name = name
        jac = np.zeros((3, 2 * dim))
        rows = np.arange(3)
        jac[rows, box0 + rows] = -1.0
        jac[rows, dim + box0 + rows] = 1.0
        self._jac = jac

    def eval(self, xs: Array):
        b = slice(self.box0, self.box0 + 3)
        return xs[1][b] - xs[0][b], self._jac


class ContactFacePlane:
    """Single equality row: the box face plane through the contact point
    stays under the finger (normal direction only; tangential slip free)."""

    window = 1
    size = 1

    def __init__(self, finger0: int, box0: int, contact: Array, normal: Array,
                 dim: int, name: str = "face-contact"):
        self.finger0 = finger0
        self.box0 = box0
        self.contact = np.asarray(contact, dtype=float)
        self.normal = np.asarray(normal, dtype=float)
        self.dim = dim
        self.name = name

    def eval(self, xs: Array):
        x = xs[0]
        pf = x[self.finger0:self.finger0 + 2]
        b = x[self.box0:self.box0 + 2]
        th = x[self.box0 + 2]
        R, dR = _rot(th), _drot(th)
        n = R @ self.normal
        rel = pf - b - R @ self.contact
        jac = np.zeros((1, self.dim))
        jac[0, self.finger0:self.finger0 + 2] = n
        jac[0, self.box0:self.box0 + 2] = -n
        jac[0, self.box0 + 2] = (dR @ self.normal) @ rel - n @ (dR @ self.contact)
        return np.array([n @ rel]), jac


class ContactPointTouch:
    """Two equality rows pinning the finger to a box-frame point."""

    window = 1
    size = 2

    def __init__(self, finger0: int, box0: int, contact: Array, dim: int,
                 name: str = "touch"):
        self.finger0 = finger0
        self.box0 = box0
        self.contact = np.asarray(contact, dtype=float)
        self.dim = dim
        self.name = name

    def eval(self, xs: Array):
        x = xs[0]
        pf = x[self.finger0:self.finger0 + 2]
        b = x[self.box0:self.box0 + 2]
        th = x[self.box0 + 2]
        R, dR = _rot(th), _drot(th)
        jac = np.zeros((2, self.dim))
        jac[:, self.finger0:self.finger0 + 2] = np.eye(2)
        jac[:, self.box0:self.box0 + 2] = -np.eye(2)
        jac[:, self.box0 + 2] = -dR @ self.contact
        return pf - b - R @ self.contact, jac


def build_push(params: ScenarioParams) -> Scenario:
    """Two finger points and a box; single- and two-finger push skeletons.

    Coordinates: [f1x, f1y, f2x, f2y, bx, by, btheta].  Only the fingers
    are actuated; the box pose is governed by rest/contact equality rows
    plus a weak drift prior.
    """
    d = 7
    box0 = 4
    half = params.box_half
    a = params.contact_offset
    if not a < half:
        raise ValueError(f"contact offset {a} must lie inside the face half-width {half}")
    N, dt = params.N, params.dt
    box_start = np.asarray(params.box_start, dtype=float)
    box_target = np.asarray(params.box_target, dtype=float)
    bx, by, bth = box_start
    if abs(bth) > 1e-12:
        raise ValueError("box must start axis-aligned")
    x0 = np.array([bx - half - params.approach_gap, by + 0.5 * a,
                   bx - half - params.approach_gap, by - 0.5 * a,
                   bx, by, bth])
    finger_coords = np.array([0, 1, 2, 3])
    box_coords = np.array([box0, box0 + 1, box0 + 2])
    actuated = np.zeros(d, dtype=bool)
    actuated[finger_coords] = True

    problem = PathProblem.uniform(
        N=N, d=d, dt=dt, sigma=params.sigma,
        prefix=np.stack([x0, x0]),
        per_step=(AccelerationPenalty(d, dt, params.sigma, coords=finger_coords),
                  # A pose left alone persists, but rotation is far more
                  # diffuse than translation: pushing at a point barely
                  # determines the spin.
                  DriftPenalty(d, dt, params.sigma_object, coords=box_coords[:2],
                               name="object-drift"),
                  DriftPenalty(d, dt, params.sigma_object_rot, coords=box_coords[2:],
                               name="object-drift-rot")),
        terminal=(coordinate_target(d, box_coords, box_target,
                                    params.box_target_weight, name="box-target"),),
        actuated=actuated)

    touch_step = max(2, int(round(params.push_fraction * N)))
    normal = np.array([1.0, 0.0])  # inward normal of the left face

    def push_skeleton(fingers: tuple[int, ...], skeleton_id: str) -> Skeleton:
        contacts = {1: np.array([-half, 0.0]) if len(fingers) == 1
                    else np.array([-half, a]),
                    2: np.array([-half, -a])}
        eq_touch = tuple(ContactPointTouch(2 * (f - 1), box0, contacts[f], d,
                                           name=f"touch-{f}") for f in fingers)
        eq_push = tuple(ContactFacePlane(2 * (f - 1), box0, contacts[f], normal, d,
                                         name=f"face-{f}") for f in fingers)
        tag = "".join(str(f) for f in fingers)
        return Skeleton(
            id=skeleton_id,
            modes=(Mode("approach", (1, touch_step - 1), eq=(BoxAtRest(d, box0),)),
                   Mode(f"push-{tag}", (touch_step, N), eq=eq_push)),
            switches=(Switch(f"touch-{tag}", touch_step, eq=eq_touch),))

    skeletons = (push_skeleton((1,), "single-finger"),
                 push_skeleton((1, 2), "two-finger"))
    successors = {("approach", "touch-1"): ("push-1",),
                  ("approach", "touch-12"): ("push-12",)}

    def final_error(x_final: Array) -> float:
        return float(np.linalg.norm(x_final[box_coords] - box_target))

    return Scenario(name="push", problem=problem, skeletons=skeletons,
                    successors=successors, target_coords=box_coords,
                    target_values=box_target, final_error=final_error,
                    truth=None, params=params)


# --- two candidate routes -------------------------------------------------

def build_tworoute(params: ScenarioParams) -> Scenario:
    """Point robot with a near and a far waypoint alternative mid-horizon.

    The waypoint equalities are plan preferences, not physics, so the
    truth skeleton used for rollout projection is unconstrained.
    """
    d = 2
    N, dt = params.N, params.dt
    start = np.asarray(params.route_start, dtype=float)
    target = np.asarray(params.route_target, dtype=float)
    problem = PathProblem.uniform(
        N=N, d=d, dt=dt, sigma=params.sigma,
        prefix=np.stack([start, start]),
        per_step=(AccelerationPenalty(d, dt, params.sigma),),
        terminal=(coordinate_target(d, (0, 1), target,
                                    params.route_target_weight, name="goal"),))

    mid = min(N - 1, max(2, int(round(params.waypoint_fraction * N))))

    def route(waypoint, label: str) -> Skeleton:
        touch = AffineFeature(np.eye(2), -np.asarray(waypoint, dtype=float),
                              window=1, name=f"waypoint-{label}")
        return Skeleton(
            id=f"via-{label}",
            modes=(Mode("travel", (1, mid - 1)), Mode("arrive", (mid, N))),
            switches=(Switch(f"via-{label}", mid, eq=(touch,)),))

    skeletons = (route(params.waypoint_near, "near"),
                 route(params.waypoint_far, "far"))
    successors = {("travel", "via-near"): ("arrive",),
                  ("travel", "via-far"): ("arrive",)}

    def final_error(x_final: Array) -> float:
        return float(np.linalg.norm(x_final - target))

    return Scenario(name="tworoute", problem=problem, skeletons=skeletons,
                    successors=successors, target_coords=np.array([0, 1]),
                    target_values=target, final_error=final_error,
                    truth=free_skeleton(N, skeleton_id="unconstrained"),
                    params=params)


_BUILDERS = {"elbow": build_elbow, "push": build_push, "tworoute": build_tworoute}


def build_scenario(params: ScenarioParams) -> Scenario:
    try:
        builder = _BUILDERS[params.name]
    except KeyError:
        raise ValueError(f"unknown scenario '{params.name}'; "
                         f"choose from {sorted(_BUILDERS)}") from None
    return builder(params)
