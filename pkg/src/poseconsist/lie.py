"""SO(3)/SE(3) primitives: twists, rigid poses, group operations, pose distance.

Conventions:
    * A twist is the pose estimator's raw 6-DOF output: a 3-vector axis-angle
      rotation plus a 3-vector translation in meters. The exponential map
      applies Rodrigues to the rotation part and copies the translation
      verbatim (no V-matrix coupling), matching the estimator's output split.
    * A RigidPose maps points from its source frame to its destination frame:
      x_dst = R @ x_src + t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this rotation angle, Rodrigues coefficients switch to their Taylor
# expansions to avoid 0/0.
SMALL_ANGLE = 1e-8
# Within this distance of theta = pi, the skew-part axis formula is singular
# and the axis is recovered from the symmetric part instead.
NEAR_PI = 1e-6


@dataclass(frozen=True)
class Twist:
    """Element of se(3): axis_angle (radians) and translation (meters)."""

    axis_angle: np.ndarray
    translation: np.ndarray

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(vec: np.ndarray) -> "Twist":
        vec = np.asarray(vec, dtype=float).reshape(6)
        return Twist(vec[:3].copy(), vec[3:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation])


@dataclass(frozen=True)
class RigidPose:
    """Element of SE(3): 3x3 rotation matrix and 3-vector translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidPose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return RigidPose(m[:3, :3].copy(), m[:3, 3].copy())


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (hat) matrix of a 3-vector."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_exp(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula so(3) -> SO(3), with a Taylor branch near zero."""
    axis_angle = np.asarray(axis_angle, dtype=float)
    theta = math.sqrt(float(axis_angle @ axis_angle))
    k = skew(axis_angle)
    if theta < SMALL_ANGLE:
        # sin(t)/t ~ 1 - t^2/6,  (1-cos(t))/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Inverse of rotation_exp; returns the canonical axis-angle, norm <= pi.

    Near theta = pi the skew part of R vanishes, so the axis is recovered
    from the symmetric part (R + R^T)/2: squared components from the
    diagonal, relative signs from the off-diagonals anchored at the largest
    component, overall sign from the residual skew part (canonicalized to a
    positive leading component when theta is exactly pi).
    """
    r = np.asarray(r, dtype=float)
    tr = float(np.trace(r))
    cos_theta = min(1.0, max(-1.0, 0.5 * (tr - 1.0)))
    theta = math.acos(cos_theta)
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < SMALL_ANGLE:
        return vee
    if math.pi - theta < NEAR_PI:
        sym = 0.5 * (r + r.T)
        one_minus_cos = 1.0 - cos_theta
        sq = np.clip((np.diag(sym) - cos_theta) / one_minus_cos, 0.0, 1.0)
        k = int(np.argmax(sq))
        axis = np.zeros(3)
        axis[k] = math.sqrt(sq[k])
        for i in range(3):
            if i != k:
                axis[i] = sym[i, k] / (one_minus_cos * axis[k])
        norm = math.sqrt(float(axis @ axis))
        axis = axis / norm
        dot = float(axis @ vee)
        if abs(dot) > 1e-12:
            if dot < 0.0:
                axis = -axis
        else:
            # theta == pi: both signs are valid; pick the leading nonzero positive
            for comp in axis:
                if abs(comp) > 1e-12:
                    if comp < 0.0:
                        axis = -axis
                    break
        return theta * axis
    return (theta / math.sin(theta)) * vee


def exp_map(xi: Twist) -> RigidPose:
    """se(3) twist to SE(3) pose; translation is copied verbatim."""
    return RigidPose(rotation_exp(xi.axis_angle), np.asarray(xi.translation, dtype=float).copy())


def log_map(p: RigidPose) -> Twist:
    """Inverse of exp_map on the canonical domain; translation copied verbatim."""
    return Twist(rotation_log(p.rotation), np.asarray(p.translation, dtype=float).copy())


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Group product a*b: apply b first, then a."""
    return RigidPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: RigidPose) -> RigidPose:
    """True SE(3) inverse (R^T, -R^T t).

    Note: a plain translation negation (R^T, -t) is not a group inverse;
    compose(p, inverse(p)) would not be the identity unless R is.
    """
    rt = p.rotation.T
    return RigidPose(rt.copy(), -(rt @ p.translation))


def pose_distance(a: RigidPose, b: RigidPose) -> float:
    """L1-style distance: |1 - (tr(Ra Rb^T) - 1)/2| + ||ta - tb||_1.

    The rotation term equals 1 - cos(theta) of the relative rotation. The
    trace is computed as sum(Ra * Rb), which is symmetric in (a, b) bitwise,
    and clamped to [-1, 3] against floating-point drift.
    """
    tr = float(np.sum(a.rotation * b.rotation))
    tr = min(3.0, max(-1.0, tr))
    rot_term = abs(1.0 - 0.5 * (tr - 1.0))
    trans_term = float(np.abs(a.translation - b.translation).sum())
    return rot_term + trans_term


def validate_rotation(m: np.ndarray, tol: float = 1e-6) -> None:
    """Raise ValueError unless m is orthonormal with determinant +1."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {m.shape}")
    err = float(np.abs(m.T @ m - np.eye(3)).max())
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (max |R^T R - I| = {err:g})")
    det = float(np.linalg.det(m))
    if abs(det - 1.0) > tol:
        raise ValueError(f"matrix determinant {det:g} != 1")
