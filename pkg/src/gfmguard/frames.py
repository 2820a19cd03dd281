"""Rotating reference frames: local dq <-> global DQ rotation and frame-angle dynamics."""

from __future__ import annotations

import math
from typing import NamedTuple


class Vec2(NamedTuple):
    """A dq (or DQ) pair in per-unit."""

    a: float
    b: float


def rotate_to_global(theta: float, v_dq: tuple[float, float]) -> Vec2:
    """Map a local-frame pair to the global frame, ``R(theta) @ v``."""
    c, s = math.cos(theta), math.sin(theta)
    a, b = v_dq
    return Vec2(c * a - s * b, s * a + c * b)


def rotate_to_local(theta: float, v_DQ: tuple[float, float]) -> Vec2:
    """Inverse of :func:`rotate_to_global`, ``R(theta).T @ v``."""
    c, s = math.cos(theta), math.sin(theta)
    a, b = v_DQ
    return Vec2(c * a + s * b, -s * a + c * b)


def theta_derivative(omega: float, omega0: float, omega_b: float) -> float:
    # theta is never wrapped; it accumulates freely
    return omega_b * (omega - omega0)
