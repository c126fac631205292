"""Planar serial manipulators: body points, Jacobians and gradient pullback.

A body point ``(k, f)`` sits a fraction ``f`` along link ``k``.  Joint ``j``
carries the cumulative angle ``q_0 + ... + q_j``.

Batch routines are written with elementwise operations only, so a row's
result never depends on the other rows in the batch.
"""
from __future__ import annotations

import math

import numpy as np

LINK_SAMPLE_SPACING = 0.05


class PlanarArm:
    def __init__(self, link_lengths, base=(0.0, 0.0), joint_limits=None, body_points=None):
        self.link_lengths = np.asarray(link_lengths, dtype=float)
        if self.link_lengths.ndim != 1 or self.link_lengths.size < 1 or np.any(self.link_lengths <= 0):
            raise ValueError("need at least one link, all lengths positive")
        self.base = np.asarray(base, dtype=float)
        if self.base.shape != (2,):
            raise ValueError("planar arm base must be a 2-vector")
        n = self.n
        if joint_limits is None:
            joint_limits = [(-math.pi, math.pi)] * n
        self.joint_limits = np.asarray(joint_limits, dtype=float).reshape(n, 2)
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy low < high")
        if body_points is None:
            body_points = [(k, 0.5) for k in range(n)] + [(n - 1, 1.0)]
        self.body_points = [(int(k), float(f)) for k, f in body_points]
        if not self.body_points:
            raise ValueError("body_points must be non-empty")
        for k, f in self.body_points:
            if not (0 <= k < n and 0.0 <= f <= 1.0):
                raise ValueError(f"bad body point ({k}, {f})")
        if (n - 1, 1.0) not in self.body_points:
            raise ValueError("body points must include the end-effector")
        self._body_w = self._weights(self.body_points)
        fracs = []
        for k, L in enumerate(self.link_lengths):
            m = max(1, math.ceil(L / LINK_SAMPLE_SPACING))
            fracs += [(k, i / m) for i in range(m + 1)]
        self._check_w = np.concatenate([self._body_w, self._weights(fracs)])

    @property
    def n(self) -> int:
        return self.link_lengths.size

    dim = 2

    @property
    def limits(self):
        return self.joint_limits

    def _weights(self, points):
        # position of a body point = base + sum_j w_j * (cos th_j, sin th_j)
        w = np.zeros((len(points), self.n))
        for r, (k, f) in enumerate(points):
            w[r, :k] = self.link_lengths[:k]
            w[r, k] = f * self.link_lengths[k]
        return w

    def _angles(self, Q):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[1] != self.n:
            raise ValueError(f"expected configurations of shape (N, {self.n}), got {Q.shape}")
        th = np.empty_like(Q)
        th[:, 0] = Q[:, 0]
        for j in range(1, self.n):
            th[:, j] = th[:, j - 1] + Q[:, j]
        return th

    def _positions(self, Q, W):
        th = self._angles(Q)
        c, s = np.cos(th), np.sin(th)
        x = np.full((len(th), len(W)), self.base[0])
        y = np.full((len(th), len(W)), self.base[1])
        for j in range(self.n):
            x = x + W[:, j] * c[:, j:j + 1]
            y = y + W[:, j] * s[:, j:j + 1]
        return np.stack([x, y], axis=-1)

    def body_positions(self, Q) -> np.ndarray:
        """(N, b, 2) task-space positions of every body point."""
        return self._positions(Q, self._body_w)

    def check_positions(self, Q) -> np.ndarray:
        """Dense set of arm points used by the exact collision check."""
        return self._positions(Q, self._check_w)

    def body_jacobians(self, Q) -> np.ndarray:
        """(N, b, 2, n) Jacobians of the body points."""
        th = self._angles(Q)
        c, s = np.cos(th), np.sin(th)
        W = self._body_w
        N, b, n = len(th), len(W), self.n
        J = np.zeros((N, b, 2, n))
        # column i sums the perpendicular contributions of links j >= i
        dx = np.zeros((N, b))
        dy = np.zeros((N, b))
        for j in range(n - 1, -1, -1):
            dx = dx - W[:, j] * s[:, j:j + 1]
            dy = dy + W[:, j] * c[:, j:j + 1]
            J[:, :, 0, j] = dx
            J[:, :, 1, j] = dy
        return J

    def sweep_margin(self, resolution: float) -> float:
        """Bound on how far any arm point strays from the nearest checked pose
        when every joint moves at most ``resolution`` between checks."""
        reach = np.cumsum(self.link_lengths[::-1])[::-1]
        return 0.5 * resolution * float(reach.sum())

    def to_dict(self) -> dict:
        return {"links": self.link_lengths.tolist(), "base": self.base.tolist(),
                "limits": self.joint_limits.tolist(), "body_points": [list(p) for p in self.body_points]}


class PointRobot:
    """Degenerate manipulator whose configuration is its task-space position."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.joint_limits = np.stack([self.lo, self.hi], axis=1)
        self.body_points = [(0, 1.0)]

    @property
    def n(self) -> int:
        return self.lo.size

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def limits(self):
        return self.joint_limits

    def _check(self, Q):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[1] != self.n:
            raise ValueError(f"expected configurations of shape (N, {self.n}), got {Q.shape}")
        return Q

    def body_positions(self, Q):
        return self._check(Q)[:, None, :].copy()

    check_positions = body_positions

    def body_jacobians(self, Q):
        Q = self._check(Q)
        return np.broadcast_to(np.eye(self.n), (len(Q), 1, self.n, self.n)).copy()

    def sweep_margin(self, resolution: float) -> float:
        return 0.5 * resolution * math.sqrt(self.n)

    def to_dict(self) -> dict:
        return {"point_robot": True}


def robot_for_env(env):
    """Robot described by the environment file, or a point robot over its bounds."""
    spec = env.robot
    if spec is None or spec.get("point_robot"):
        return PointRobot(env.lo, env.hi)
    if env.dim != 2:
        raise ValueError("planar arms need a 2-D workspace")
    return PlanarArm(spec["links"], spec.get("base", (0.0, 0.0)), spec.get("limits"), spec.get("body_points"))


def _single(m, q, i):
    q = np.asarray(q, dtype=float)
    if q.shape != (m.n,):
        raise ValueError(f"expected a {m.n}-vector configuration, got shape {q.shape}")
    if not 0 <= i < len(m.body_points):
        raise IndexError(f"body point index {i} out of range")
    return q[None]


def fk_body_point(m, q, i: int) -> np.ndarray:
    return m.body_positions(_single(m, q, i))[0, i]


def jacobian_body_point(m, q, i: int) -> np.ndarray:
    return m.body_jacobians(_single(m, q, i))[0, i]


class CSpaceField:
    """Occupancy gradient pulled into the configuration space.

    ``field(Q)[r] = scale * sum_i J_i(q_r)^T grad f(psi_i(q_r))``; the net is
    queried once for all body points of all rows.
    """

    def __init__(self, robot, net, scale: float = 1.0):
        if net.input_dim != robot.dim:
            raise ValueError(f"net input_dim {net.input_dim} != robot task dimension {robot.dim}")
        self.robot = robot
        self.net = net
        self.scale = float(scale)

    def __call__(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        if isinstance(self.robot, PointRobot):
            # identity Jacobian: the pullback is the task-space gradient itself
            g = self.net.input_grad_batch(self.robot._check(Q))
            return g * self.scale if self.scale != 1.0 else g
        pts = self.robot.body_positions(Q)
        N, b, d = pts.shape
        grads = self.net.input_grad_batch(pts.reshape(N * b, d)).reshape(N, b, d)
        J = self.robot.body_jacobians(Q)
        out = np.zeros((N, self.robot.n))
        for i in range(b):
            for k in range(d):
                out = out + J[:, i, k, :] * grads[:, i, k:k + 1]
        if self.scale != 1.0:
            out = out * self.scale
        return out

    def cost(self, Q) -> np.ndarray:
        """Summed body-point occupancy, the scalar whose gradient this field is."""
        pts = self.robot.body_positions(np.asarray(Q, dtype=float))
        N, b, d = pts.shape
        return self.scale * self.net.forward_batch(pts.reshape(N * b, d)).reshape(N, b).sum(axis=1)


def cspace_grad(m, net, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (m.n,):
        raise ValueError(f"expected a {m.n}-vector configuration, got shape {q.shape}")
    return CSpaceField(m, net)(q[None])[0]
