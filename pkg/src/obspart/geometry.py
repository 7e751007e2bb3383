"""Planar pose algebra (x, y, theta) used by the motion and sensor models."""

import math

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def compose(pose, u):
    """Apply body-frame motion ``u = (dx, dy, dtheta)`` to ``pose``."""
    x, y, th = pose
    dx, dy, dth = u
    c, s = math.cos(th), math.sin(th)
    return np.array([x + c * dx - s * dy, y + s * dx + c * dy, wrap_angle(th + dth)])


def compose_jacobian(pose, u):
    """Jacobian of :func:`compose` with respect to ``pose``."""
    th = pose[2]
    dx, dy = u[0], u[1]
    c, s = math.cos(th), math.sin(th)
    return np.array([
        [1.0, 0.0, -s * dx - c * dy],
        [0.0, 1.0, c * dx - s * dy],
        [0.0, 0.0, 1.0],
    ])


def between(p, q):
    """Relative motion taking pose ``p`` to pose ``q`` (inverse of compose)."""
    c, s = math.cos(p[2]), math.sin(p[2])
    dx, dy = q[0] - p[0], q[1] - p[1]
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(q[2] - p[2])])


def range_bearing(pose, landmark):
    dx = landmark[0] - pose[0]
    dy = landmark[1] - pose[1]
    return np.array([math.hypot(dx, dy), wrap_angle(math.atan2(dy, dx) - pose[2])])


def range_bearing_jacobians(pose, landmark):
    """Return (d h / d pose, d h / d landmark) for the range-bearing model."""
    dx = landmark[0] - pose[0]
    dy = landmark[1] - pose[1]
    q = dx * dx + dy * dy
    r = math.sqrt(q)
    h_pose = np.array([
        [-dx / r, -dy / r, 0.0],
        [dy / q, -dx / q, -1.0],
    ])
    h_lm = np.array([
        [dx / r, dy / r],
        [-dy / q, dx / q],
    ])
    return h_pose, h_lm


def invert_range_bearing(pose, z):
    """Landmark position implied by observing ``z = (range, bearing)`` from ``pose``."""
    a = pose[2] + z[1]
    return np.array([pose[0] + z[0] * math.cos(a), pose[1] + z[0] * math.sin(a)])
