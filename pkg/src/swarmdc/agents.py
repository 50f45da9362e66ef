"""Euler-Maruyama stepping of agent populations with reflecting walls.

Two microscopic models share the interfaces: the generic double integrator
(position driven by velocity, velocity driven by the input, one Wiener
increment per agent per step feeding both rows) and the nonholonomic
mobile robot, which reduces to the integrator after feedback
linearization.  State containers hold whole populations as arrays; a
single agent is a population of one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import DiffusionMatrix


class RngStream:
    """Counter-based Gaussian stream, reproducible and scheduling-independent.

    Draws are keyed by (seed, stream id, block index): each block maps to a
    disjoint counter range of a Philox generator, and one block is consumed
    per simulation step, with agents reading consecutive rows of the block.
    Identical (seed, config) therefore yields bit-identical draws no matter
    how the work inside a step is parallelized.
    """

    def __init__(self, seed: int, stream: int = 0):
        self._key = np.random.SeedSequence(
            entropy=int(seed), spawn_key=(int(stream),)
        ).generate_state(2, np.uint64)
        self._block = 0

    def normals(self, shape, block: int) -> np.ndarray:
        """Standard normals for an explicit block index (pure function)."""
        bitgen = np.random.Philox(key=self._key, counter=int(block) << 128)
        return np.random.Generator(bitgen).standard_normal(shape)

    def uniforms(self, shape, block: int) -> np.ndarray:
        bitgen = np.random.Philox(key=self._key, counter=int(block) << 128)
        return np.random.Generator(bitgen).random(shape)

    def next_block(self) -> int:
        b = self._block
        self._block += 1
        return b

    def next_normals(self, shape) -> np.ndarray:
        return self.normals(shape, self.next_block())

    def next_uniforms(self, shape) -> np.ndarray:
        return self.uniforms(shape, self.next_block())


def reflect_boundary(x: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mirror positions (and flip matching velocity components) into [0, 1]^2.

    Applied per axis and repeated until every coordinate is inside; the
    iteration count is bounded because overshoots are below the domain size
    for stability-scale steps.
    """
    x = np.array(x, dtype=float, copy=True)
    v = np.array(v, dtype=float, copy=True)
    for _ in range(64):
        lo = x < 0.0
        hi = x > 1.0
        if not (lo.any() or hi.any()):
            break
        np.negative(x, where=lo, out=x)
        np.negative(v, where=lo, out=v)
        x[hi] = 2.0 - x[hi]
        np.negative(v, where=hi, out=v)
    else:
        raise RuntimeError("reflection did not terminate; step size far too large")
    return x, v


@dataclass
class AgentState:
    """Population of double-integrator agents.

    x, v have shape (n, 2); g2 has shape (n, 2, 2) and holds each agent's
    velocity noise matrix (the heterogeneous channel).
    """

    x: np.ndarray
    v: np.ndarray
    g2: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.g2 = np.asarray(self.g2, dtype=float)
        n = self.x.shape[0]
        if self.x.shape != (n, 2) or self.v.shape != (n, 2) or self.g2.shape != (n, 2, 2):
            raise ValueError("inconsistent population array shapes")
        if np.any(self.x < 0.0) or np.any(self.x > 1.0):
            raise ValueError("positions must lie in the closed unit square")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite agent state")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def em_step_integrator(
    a: AgentState, u: np.ndarray, D: DiffusionMatrix, dt: float, rng: RngStream
) -> AgentState:
    """One Euler-Maruyama step of the double integrator population.

    Draws one Wiener increment per agent; the same increment drives the
    position row through g1 and the velocity row through the agent's g2.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite input u")
    dw = rng.next_normals((a.n, 2)) * np.sqrt(dt)
    x = a.x + a.v * dt + dw @ D.g1.T
    v = a.v + u * dt + np.einsum("nij,nj->ni", a.g2, dw)
    x, v = reflect_boundary(x, v)
    return AgentState(x=x, v=v, g2=a.g2)


# ---------------------------------------------------------------------------
# Nonholonomic mobile robot
# ---------------------------------------------------------------------------


def heading_matrix(theta: np.ndarray, d: np.ndarray) -> np.ndarray:
    """T(theta, d), the top 2x2 block of the robot kinematics matrix.

    Maps wheel velocities (linear, angular) to the Euclidean velocity of
    the offset reference point; invertible whenever d != 0 (det T = d).
    """
    theta = np.asarray(theta, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), theta.shape)
    c, s = np.cos(theta), np.sin(theta)
    T = np.empty(theta.shape + (2, 2))
    T[..., 0, 0] = c
    T[..., 0, 1] = -d * s
    T[..., 1, 0] = s
    T[..., 1, 1] = d * c
    return T


def heading_matrix_inv(theta: np.ndarray, d: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), theta.shape)
    c, s = np.cos(theta), np.sin(theta)
    Ti = np.empty(theta.shape + (2, 2))
    Ti[..., 0, 0] = c
    Ti[..., 0, 1] = s
    Ti[..., 1, 0] = -s / d
    Ti[..., 1, 1] = c / d
    return Ti


def robot_velocity_command(
    v_d_euclidean: np.ndarray, theta: np.ndarray, d
) -> np.ndarray:
    """Wheel-velocity command T(theta, d)^-1 v for a Euclidean velocity v."""
    if np.any(np.asarray(d) == 0):
        raise ValueError("offset d must be nonzero (T singular otherwise)")
    v = np.asarray(v_d_euclidean, dtype=float)
    Ti = heading_matrix_inv(theta, d)
    return np.einsum("...ij,...j->...i", Ti, v)


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    w = np.mod(-np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    return -(w - np.pi)


@dataclass
class RobotState:
    """Population of nonholonomic robots.

    q holds poses (x1, x2, theta), v wheel velocities (linear, angular).
    M, Vm are per-agent 2x2 inertia and coriolis matrices, F per-agent
    viscous friction coefficients (force = diag(F) v), d the reference
    point offsets.  f2 is the torque-level noise matrix; g2 = M^-1 f2 is
    the matching velocity-level channel seen by the controller.
    f1_theta_row carries the heading components of the kinematic noise
    (the position rows equal g1 of the scenario's diffusion matrix).
    """

    q: np.ndarray
    v: np.ndarray
    d: np.ndarray
    M: np.ndarray
    Vm: np.ndarray
    F: np.ndarray
    f2: np.ndarray
    f1_theta_row: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        n = self.q.shape[0]
        self.d = np.broadcast_to(np.asarray(self.d, dtype=float), (n,))
        self.M = np.broadcast_to(np.asarray(self.M, dtype=float), (n, 2, 2))
        self.Vm = np.broadcast_to(np.asarray(self.Vm, dtype=float), (n, 2, 2))
        self.F = np.broadcast_to(np.asarray(self.F, dtype=float), (n, 2))
        self.f2 = np.broadcast_to(np.asarray(self.f2, dtype=float), (n, 2, 2))
        if self.q.shape != (n, 3) or self.v.shape != (n, 2):
            raise ValueError("inconsistent robot array shapes")
        if np.any(self.d == 0):
            raise ValueError("offset d must be nonzero (T singular otherwise)")
        if np.any(np.linalg.det(self.M) <= 0):
            raise ValueError("inertia matrices must have positive determinant")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.q[:, :2]

    @property
    def theta(self) -> np.ndarray:
        return self.q[:, 2]

    def g2(self) -> np.ndarray:
        """Velocity-level noise channel M^-1 f2."""
        return np.linalg.solve(self.M, self.f2)

    def euclidean_velocity(self) -> np.ndarray:
        return np.einsum(
            "nij,nj->ni", heading_matrix(self.theta, self.d), self.v
        )


def feedback_linearize(r: RobotState, u: np.ndarray) -> np.ndarray:
    """Torque realizing the auxiliary input: tau = M u + Vm v + diag(F) v."""
    u = np.asarray(u, dtype=float)
    return (
        np.einsum("nij,nj->ni", r.M, u)
        + np.einsum("nij,nj->ni", r.Vm, r.v)
        + r.F * r.v
    )


def em_step_robot(
    r: RobotState, tau: np.ndarray, dt: float, rng: RngStream, D: DiffusionMatrix
) -> RobotState:
    """One Euler-Maruyama step of the robot population under torques tau.

    Recovers the auxiliary input u = M^-1 (tau - Vm v - diag(F) v), advances
    the pose along S(q) v and the wheel velocities along u, then reflects at
    the walls: the Euclidean velocity is mirrored, the heading reset to the
    mirrored direction with the speed kept, and at (numerically) zero speed
    the position alone is mirrored.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise ValueError("non-finite torque")
    u = np.linalg.solve(r.M, (tau - np.einsum("nij,nj->ni", r.Vm, r.v) - r.F * r.v)[..., None])[..., 0]

    dw = rng.next_normals((r.n, 2)) * np.sqrt(dt)
    T = heading_matrix(r.theta, r.d)
    xy = r.positions + np.einsum("nij,nj->ni", T, r.v) * dt + dw @ D.g1.T
    theta = r.q[:, 2] + r.v[:, 1] * dt
    if r.f1_theta_row is not None and np.any(r.f1_theta_row):
        theta = theta + dw @ np.asarray(r.f1_theta_row, dtype=float)
    v = r.v + u * dt + np.linalg.solve(r.M, np.einsum("nij,nj->ni", r.f2, dw)[..., None])[..., 0]

    # wall reflection on the Euclidean velocity, then re-solve heading/speed
    e = np.einsum("nij,nj->ni", heading_matrix(theta, r.d), v)
    xy_r, e_r = reflect_boundary(xy, e)
    bounced = np.any(xy_r != xy, axis=1) | np.any(e_r != e, axis=1)
    if np.any(bounced):
        speed = np.hypot(e_r[bounced, 0], e_r[bounced, 1])
        moving = speed > 1e-12
        idx = np.flatnonzero(bounced)[moving]
        theta[idx] = np.arctan2(e_r[idx, 1], e_r[idx, 0])
        v[idx, 0] = speed[moving]
    theta = wrap_angle(theta)

    q = np.column_stack([xy_r, theta])
    return replace(r, q=q, v=v)
