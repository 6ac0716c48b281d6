"""Kinematic serial arm with joint fault injection and a pose-reaching reward.

The arm is a chain of revolute joints with alternating z/y axes (by default);
each joint is followed by a straight link along its local z axis. Actions are
bounded per-step joint angle changes. Faults act between the commanded change
and the realized joint motion.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


class InvalidInput(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


def _alternating_axes(n: int) -> tuple[str, ...]:
    return tuple("z" if i % 2 == 0 else "y" for i in range(n))


@dataclass(frozen=True)
class ArmConfig:
    n_joints: int = 8
    link_lengths: tuple[float, ...] | None = None
    joint_limits: tuple[tuple[float, float], ...] | None = None
    max_delta: float = 0.1
    episode_max_steps: int = 50
    success_tolerance: float = 0.05
    w_position: float = 1.0
    w_orientation: float = 0.25
    axes: tuple[str, ...] | None = None
    # fraction of each joint range used when drawing goal configurations
    goal_range: float = 0.25
    # gains on the goal-relative observation features (pose error in the ee frame)
    position_error_gain: float = 20.0
    rotation_error_gain: float = 10.0

    def __post_init__(self):
        n = self.n_joints
        if n < 1:
            raise InvalidInput("n_joints must be >= 1")
        if self.link_lengths is None:
            object.__setattr__(self, "link_lengths", (0.1,) * n)
        if self.joint_limits is None:
            object.__setattr__(self, "joint_limits", ((-math.pi / 2, math.pi / 2),) * n)
        if self.axes is None:
            object.__setattr__(self, "axes", _alternating_axes(n))
        object.__setattr__(self, "link_lengths", tuple(float(x) for x in self.link_lengths))
        object.__setattr__(
            self, "joint_limits", tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        )
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.link_lengths) != n or len(self.joint_limits) != n or len(self.axes) != n:
            raise InvalidInput("per-joint fields must have n_joints entries")
        if min(self.link_lengths) <= 0:
            raise InvalidInput("link lengths must be positive")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise InvalidInput("joint limit min must be < max")
        if any(a not in _AXES for a in self.axes):
            raise InvalidInput(f"axes must be x/y/z, got {self.axes}")
        if self.max_delta <= 0 or self.success_tolerance <= 0:
            raise InvalidInput("max_delta and success_tolerance must be positive")
        if self.episode_max_steps < 1:
            raise InvalidInput("episode_max_steps must be >= 1")
        if not 0 < self.goal_range <= 1:
            raise InvalidInput("goal_range must be in (0, 1]")
        if self.position_error_gain < 0 or self.rotation_error_gain < 0:
            raise InvalidInput("observation gains must be >= 0")

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])

    @property
    def obs_dim(self) -> int:
        return self.n_joints + 7 + 7 + 6


@dataclass(frozen=True)
class ArmState:
    joint_angles: np.ndarray
    ee_position: np.ndarray
    ee_orientation: np.ndarray
    step_index: int = 0
    # servo setpoints; differ from joint_angles only for offset-faulted joints
    setpoints: np.ndarray | None = None

    def __post_init__(self):
        if self.setpoints is None:
            object.__setattr__(self, "setpoints", self.joint_angles.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.joint_angles, self.ee_position, self.ee_orientation])


@dataclass(frozen=True)
class GoalPose:
    position: np.ndarray
    orientation: np.ndarray


class FaultMode(str, enum.Enum):
    NONE = "none"
    FROZEN = "frozen"
    OFFSET = "offset"
    JITTER = "jitter"


@dataclass(frozen=True)
class FaultSpec:
    mode: FaultMode = FaultMode.NONE
    affected_joints: tuple[int, ...] = ()
    offset_angle: float = math.pi / 4
    jitter_bound: float = math.radians(10.0)
    rng_stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", FaultMode(self.mode))
        object.__setattr__(self, "affected_joints", tuple(int(j) for j in self.affected_joints))
        js = self.affected_joints
        if len(set(js)) != len(js):
            raise InvalidInput("affected joints must be distinct")
        if len(js) > 4:
            raise InvalidInput("at most 4 faulty joints")
        if any(j < 0 for j in js):
            raise InvalidInput("joint indices must be non-negative")
        if self.mode is FaultMode.NONE and js:
            raise InvalidInput("mode none cannot have affected joints")
        if self.offset_angle < 0 or self.jitter_bound < 0:
            raise InvalidInput("offset_angle and jitter_bound must be >= 0")

    @property
    def degree(self) -> int:
        return len(self.affected_joints)

    def check(self, config: ArmConfig) -> None:
        if any(j >= config.n_joints for j in self.affected_joints):
            raise InvalidInput(f"affected joint index out of range for {config.n_joints} joints")


HEALTHY = FaultSpec()


@dataclass(frozen=True)
class Transition:
    state: ArmState
    action: np.ndarray
    reward: float
    next_state: ArmState
    done: bool
    success: bool


# -- quaternions (w, x, y, z) -------------------------------------------------

def quat_mul(a, b) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_angle(q1, q2) -> float:
    """Geodesic rotation angle between two unit quaternions, in [0, pi]."""
    d = abs(float(np.dot(q1, q2)))
    return 2.0 * math.acos(min(1.0, d))


def forward_kinematics(joint_angles, config: ArmConfig) -> tuple[np.ndarray, np.ndarray]:
    """End-effector position and unit quaternion for the given joint angles."""
    q = np.asarray(joint_angles, dtype=np.float64)
    if q.shape != (config.n_joints,):
        raise InvalidInput(f"expected {config.n_joints} joint angles, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidInput("joint angles must be finite")
    w, x, y, z = 1.0, 0.0, 0.0, 0.0
    px = py = pz = 0.0
    for angle, axis, length in zip(q.tolist(), config.axes, config.link_lengths):
        c = math.cos(0.5 * angle)
        s = math.sin(0.5 * angle)
        ux, uy, uz = _AXES[axis]
        w, x, y, z = quat_mul((w, x, y, z), (c, s * ux, s * uy, s * uz))
        # link runs along the local z axis: third column of the rotation matrix
        px += length * 2.0 * (x * z + w * y)
        py += length * 2.0 * (y * z - w * x)
        pz += length * (1.0 - 2.0 * (x * x + y * y))
    quat = np.array([w, x, y, z])
    quat /= np.linalg.norm(quat)
    return np.array([px, py, pz]), quat


def make_state(joint_angles, config: ArmConfig, step_index: int = 0, setpoints=None) -> ArmState:
    angles = np.asarray(joint_angles, dtype=np.float64).copy()
    pos, quat = forward_kinematics(angles, config)
    sp = None if setpoints is None else np.asarray(setpoints, dtype=np.float64).copy()
    return ArmState(angles, pos, quat, step_index, sp)


# -- faults -------------------------------------------------------------------

def apply_fault(
    commanded,
    current_angles,
    fault: FaultSpec,
    rng: np.random.Generator | None = None,
    setpoints=None,
) -> np.ndarray:
    """Joint angle change actually realized for a commanded change.

    ``setpoints`` are the servo targets before this step; they default to
    ``current_angles`` (a joint whose offset has not yet been realized).
    Frozen joints do not move, offset joints land at ``target + offset_angle``
    and jitter joints receive uniform noise drawn from ``rng``. Limit clipping
    happens afterwards, in :func:`step`.
    """
    delta = np.array(commanded, dtype=np.float64)
    js = list(fault.affected_joints)
    if fault.mode is FaultMode.NONE or not js:
        return delta
    if fault.mode is FaultMode.FROZEN:
        delta[js] = 0.0
    elif fault.mode is FaultMode.OFFSET:
        current = np.asarray(current_angles, dtype=np.float64)
        base = current if setpoints is None else np.asarray(setpoints, dtype=np.float64)
        target = base[js] + delta[js]
        delta[js] = target + fault.offset_angle - current[js]
    elif fault.mode is FaultMode.JITTER:
        if rng is None:
            raise InvalidInput("jitter faults need an rng")
        delta[js] += rng.uniform(-fault.jitter_bound, fault.jitter_bound, size=len(js))
    return delta


# -- reward / episode ---------------------------------------------------------

def pose_distance(state: ArmState, goal: GoalPose, config: ArmConfig) -> float:
    pos_err = math.dist(state.ee_position, goal.position)
    return config.w_position * pos_err + config.w_orientation * quat_angle(
        state.ee_orientation, goal.orientation
    )


def reward(state: ArmState, goal: GoalPose, config: ArmConfig) -> float:
    return -pose_distance(state, goal, config)


def is_success(state: ArmState, goal: GoalPose, config: ArmConfig) -> bool:
    return pose_distance(state, goal, config) <= config.success_tolerance


def reset(config: ArmConfig, goal_rng: np.random.Generator) -> tuple[ArmState, GoalPose]:
    """Zero configuration plus a goal reachable by the healthy arm.

    Goals already satisfied by the start pose are redrawn.
    """
    lo, hi = config.lower, config.upper
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * config.goal_range
    start = make_state(np.clip(np.zeros(config.n_joints), lo, hi), config)
    while True:
        goal_angles = goal_rng.uniform(mid - half, mid + half)
        goal = GoalPose(*forward_kinematics(goal_angles, config))
        if not is_success(start, goal, config):
            return start, goal


def step(
    state: ArmState,
    action,
    goal: GoalPose,
    fault: FaultSpec,
    config: ArmConfig,
    rng: np.random.Generator | None = None,
) -> Transition:
    if state.step_index >= config.episode_max_steps or is_success(state, goal, config):
        raise EpisodeFinished(f"episode already done at step {state.step_index}")
    a = np.clip(np.asarray(action, dtype=np.float64), -config.max_delta, config.max_delta)
    lo, hi = config.lower, config.upper
    setpoints = np.clip(state.setpoints + a, lo, hi)
    delta = apply_fault(setpoints - state.setpoints, state.joint_angles, fault, rng, state.setpoints)
    angles = np.clip(state.joint_angles + delta, lo, hi)
    if fault.mode is FaultMode.FROZEN:
        js = list(fault.affected_joints)
        setpoints[js] = state.setpoints[js]
    elif fault.mode is FaultMode.JITTER:
        setpoints = angles.copy()
    nxt = make_state(angles, config, state.step_index + 1, setpoints)
    r = reward(nxt, goal, config)
    success = -r <= config.success_tolerance
    done = success or nxt.step_index >= config.episode_max_steps
    return Transition(state, a, r, nxt, done, success)


def observe(state: ArmState, goal: GoalPose, config: ArmConfig) -> np.ndarray:
    """Normalized network input.

    Layout: angles/pi, position/reach, quaternion, goal position/reach, goal
    quaternion, then the scaled position error and the vector part of the
    rotation taking the current orientation to the goal. Both quaternions
    and the error rotation are sign-canonicalized (w >= 0).
    """
    reach = config.reach
    q = state.ee_orientation if state.ee_orientation[0] >= 0 else -state.ee_orientation
    gq = goal.orientation if goal.orientation[0] >= 0 else -goal.orientation
    q_err = np.array(quat_mul(gq, (q[0], -q[1], -q[2], -q[3])))
    if q_err[0] < 0:
        q_err = -q_err
    return np.concatenate([
        state.joint_angles / math.pi, state.ee_position / reach, q, goal.position / reach, gq,
        (goal.position - state.ee_position) * config.position_error_gain,
        q_err[1:] * config.rotation_error_gain,
    ])


class ArmEnv:
    """Stateful wrapper around :func:`reset` / :func:`step` for training loops."""

    def __init__(self, config: ArmConfig, fault: FaultSpec = HEALTHY,
                 goal_rng: np.random.Generator | None = None,
                 fault_rng: np.random.Generator | None = None):
        fault.check(config)
        self.config = config
        self.fault = fault
        self.goal_rng = goal_rng if goal_rng is not None else np.random.default_rng(0)
        self.fault_rng = fault_rng if fault_rng is not None else np.random.default_rng(fault.rng_stream_id)
        self.state: ArmState | None = None
        self.goal: GoalPose | None = None

    def reset(self) -> np.ndarray:
        self.state, self.goal = reset(self.config, self.goal_rng)
        return self.observation()

    def observation(self) -> np.ndarray:
        return observe(self.state, self.goal, self.config)

    def step(self, action) -> Transition:
        tr = step(self.state, action, self.goal, self.fault, self.config, self.fault_rng)
        self.state = tr.next_state
        return tr
