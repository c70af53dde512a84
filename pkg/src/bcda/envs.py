"""Deterministic cart-pole and two-link reacher environments.

Both integrate with semi-implicit Euler (velocities first) at ``DT`` seconds.
The functional ``*_reset`` / ``*_step`` pairs hold the physics; the classes
add the step counter and random source needed for episodes.
"""

import math
from dataclasses import dataclass

import numpy as np

DT = 0.02

# cart-pole
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
GRAVITY = 9.8
FORCE_LIMIT = 3.0
THETA_LIMIT = 0.2
X_LIMIT = 2.4
INVPEN_MAX_STEPS = 1000

# reacher
LINK_LENGTH = 0.1
JOINT_INERTIA = 0.01
JOINT_DAMPING = 0.01
TORQUE_LIMIT = 1.0
TARGET_RADIUS = (0.05, 0.19)
CONTROL_COST = 0.1
REACHER_MAX_STEPS = 50


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be < action_high")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


INVPEN_SPEC = EnvSpec(4, 1, np.array([-FORCE_LIMIT]), np.array([FORCE_LIMIT]), INVPEN_MAX_STEPS)
REACHER_SPEC = EnvSpec(
    8, 2, np.full(2, -TORQUE_LIMIT), np.full(2, TORQUE_LIMIT), REACHER_MAX_STEPS
)


def invpen_reset(rng):
    """State ``(x, theta, x_dot, theta_dot)``, each uniform on [-0.01, 0.01]."""
    return rng.uniform(-0.01, 0.01, size=4)


def invpen_dynamics(state, force):
    """One integration step of the frictionless cart-pole, no termination logic."""
    x, theta, x_dot, theta_dot = state
    sin, cos = math.sin(theta), math.cos(theta)
    total = CART_MASS + POLE_MASS
    u = (force + POLE_MASS * POLE_HALF_LENGTH * theta_dot * theta_dot * sin) / total
    theta_acc = (GRAVITY * sin - u * cos) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total)
    )
    x_acc = u - POLE_MASS * POLE_HALF_LENGTH * theta_acc * cos / total
    x_dot = x_dot + DT * x_acc
    theta_dot = theta_dot + DT * theta_acc
    return np.array([x + DT * x_dot, theta + DT * theta_dot, x_dot, theta_dot])


def invpen_energy(state):
    """Total mechanical energy of the cart plus a uniform rod of length 2l."""
    _, theta, x_dot, theta_dot = state
    l = POLE_HALF_LENGTH
    kinetic = (
        0.5 * (CART_MASS + POLE_MASS) * x_dot**2
        + POLE_MASS * l * x_dot * theta_dot * math.cos(theta)
        + 0.5 * POLE_MASS * (4.0 / 3.0) * l * l * theta_dot**2
    )
    return kinetic + POLE_MASS * GRAVITY * l * math.cos(theta)


def invpen_step(state, action, t=0):
    """Advance ``state`` one step; ``t`` is the number of steps already taken.

    Returns ``(next_state, StepResult)``; the observation is the state itself.
    """
    force = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -FORCE_LIMIT, FORCE_LIMIT))
    nxt = invpen_dynamics(state, force)
    terminated = bool(abs(nxt[1]) > THETA_LIMIT or abs(nxt[0]) > X_LIMIT)
    truncated = t + 1 >= INVPEN_MAX_STEPS
    return nxt, StepResult(nxt.copy(), 1.0, terminated, truncated)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def fingertip(theta1, theta2):
    return np.array([
        LINK_LENGTH * math.cos(theta1) + LINK_LENGTH * math.cos(theta1 + theta2),
        LINK_LENGTH * math.sin(theta1) + LINK_LENGTH * math.sin(theta1 + theta2),
    ])


def reacher_observation(state):
    """``(theta1, theta2, dtheta1, dtheta2, target_x, target_y, tip_x, tip_y)``."""
    return np.concatenate([state[:6], fingertip(state[0], state[1])])


def reacher_reset(rng):
    """Internal state ``(theta1, theta2, dtheta1, dtheta2, target_x, target_y)``.

    The target is uniform by area on an annulus inside the arm's reach.
    """
    angles = rng.uniform(-np.pi, np.pi, size=2)
    vel = rng.uniform(-0.005, 0.005, size=2)
    r0, r1 = TARGET_RADIUS
    radius = math.sqrt(rng.uniform(r0 * r0, r1 * r1))
    phi = rng.uniform(-np.pi, np.pi)
    target = np.array([radius * math.cos(phi), radius * math.sin(phi)])
    return np.concatenate([angles, vel, target])


def reacher_reward(state, torque):
    dist = np.linalg.norm(fingertip(state[0], state[1]) - state[4:6])
    return float(-dist - CONTROL_COST * np.dot(torque, torque))


def reacher_step(state, torque, t=0):
    tau = np.clip(np.asarray(torque, dtype=np.float64).reshape(2), -TORQUE_LIMIT, TORQUE_LIMIT)
    reward = reacher_reward(state, tau)
    vel = state[2:4] + DT * (tau - JOINT_DAMPING * state[2:4]) / JOINT_INERTIA
    angles = wrap_angle(state[0:2] + DT * vel)
    nxt = np.concatenate([angles, vel, state[4:6]])
    return nxt, StepResult(reacher_observation(nxt), reward, False, t + 1 >= REACHER_MAX_STEPS)


class InvertedPendulum:
    name = "invpen"

    def __init__(self, rng):
        self.rng = rng
        self.state = None
        self.t = 0

    def spec(self):
        return INVPEN_SPEC

    def reset(self):
        self.state = invpen_reset(self.rng)
        self.t = 0
        return self.state.copy()

    def step(self, action):
        self.state, res = invpen_step(self.state, action, self.t)
        self.t += 1
        return res


class Reacher:
    name = "reacher"

    def __init__(self, rng):
        self.rng = rng
        self.state = None
        self.t = 0

    def spec(self):
        return REACHER_SPEC

    def reset(self):
        self.state = reacher_reset(self.rng)
        self.t = 0
        return reacher_observation(self.state)

    def step(self, action):
        self.state, res = reacher_step(self.state, action, self.t)
        self.t += 1
        return res


ENVIRONMENTS = {"invpen": InvertedPendulum, "reacher": Reacher}


def make_env(task, rng):
    try:
        return ENVIRONMENTS[task](rng)
    except KeyError:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(ENVIRONMENTS)}") from None
