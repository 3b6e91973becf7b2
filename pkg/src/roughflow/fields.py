"""Ready-made vector fields used by the command line, demos and tests."""

from __future__ import annotations

import numpy as np

from .rde_solver import VectorFieldSet, linear_vector_field

__all__ = ["planar_quadratic_field", "rotation_field", "skew_field", "field_from_spec"]

ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation_field() -> VectorFieldSet:
    """``F(x, y) = (-y, x)`` driven by a scalar path."""
    return linear_vector_field(ROTATION)


def planar_quadratic_field(c: float) -> VectorFieldSet:
    """``F(x, y) = (-y + c x^2, x)`` driven by a scalar path; ``c = 0`` is the rotation."""
    c = float(c)

    def F(y):
        y = np.asarray(y, dtype=float)
        return np.stack([-y[..., 1] + c * y[..., 0] ** 2, y[..., 0]], axis=-1)[..., None]

    def DF(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (2, 1, 2))
        out[..., 0, 0, 0] = 2 * c * y[..., 0]
        out[..., 0, 0, 1] = -1.0
        out[..., 1, 0, 0] = 1.0
        return out

    def D2F(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (2, 1, 2, 2))
        out[..., 0, 0, 0, 0] = 2 * c
        return out

    return VectorFieldSet(2, 1, F, DF, D2F, name=f"planar-quadratic(c={c!r})")


def skew_field(mats) -> VectorFieldSet:
    """Linear fields ``y -> S_i y`` with each ``S_i`` skew-symmetric (tangent to spheres)."""
    S = np.array(mats, dtype=float)
    if S.ndim == 2:
        S = S[None]
    if not np.allclose(S, -np.transpose(S, (0, 2, 1)), atol=1e-14):
        raise ValueError("matrices must be skew-symmetric")
    return linear_vector_field(S)


def field_from_spec(spec: dict) -> VectorFieldSet:
    """Build a field from ``{"type": "linear", "A": ...}``, ``{"type": "rotation"}``,
    ``{"type": "planar-quadratic", "c": ...}`` or ``{"type": "skew", "A": ...}``."""
    kind = spec.get("type")
    if kind == "linear":
        return linear_vector_field(spec["A"])
    if kind == "rotation":
        return rotation_field()
    if kind == "planar-quadratic":
        return planar_quadratic_field(spec.get("c", 0.1))
    if kind == "skew":
        return skew_field(spec["A"])
    raise ValueError(f"unknown field type {kind!r}; expected linear, rotation, planar-quadratic or skew")
