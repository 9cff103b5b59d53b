"""Deterministic desk-scale scene generator: textured planes, forward camera
trajectories, analytic ray-cast depth, and procedural sinusoid textures.

Camera convention: x right, y down, z forward; poses are camera-to-world.
Depth is the distance along the optical axis (z-depth), matching the
reprojection equations, not the ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lie import RigidPose, compose, inverse, rotation_exp
from .warp import Intrinsics, pixel_rays

# Rays closer to parallel than this to a plane never intersect it.
_RAY_EPS = 1e-12


@dataclass(frozen=True)
class SinusoidTexture:
    """Sum-of-sinusoids color field over a plane's local 2D coordinates.

    amplitudes: (K, 3) per-channel amplitudes around a 0.5 base.
    frequencies: (K, 2) cycles per meter in the plane frame.
    phases: (K, 3) per-channel phase offsets, radians.
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def evaluate(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Colors (..., 3) at in-plane coordinates (s, t)."""
        arg = 2.0 * math.pi * (np.multiply.outer(s, self.frequencies[:, 0])
                               + np.multiply.outer(t, self.frequencies[:, 1]))
        # (..., K, 3) sinusoids summed over K
        waves = self.amplitudes * np.sin(arg[..., None] + self.phases)
        return np.clip(0.5 + waves.sum(axis=-2), 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    """Infinite plane {p : normal . p = offset} with a texture index."""

    normal: np.ndarray
    offset: float
    texture: int

    def local_frame(self):
        """Two orthonormal in-plane axes, chosen deterministically."""
        n = self.normal
        helper = np.zeros(3)
        helper[int(np.argmin(np.abs(n)))] = 1.0
        e1 = np.cross(n, helper)
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return e1, e2


@dataclass(frozen=True)
class SceneSpec:
    planes: list[Plane]
    textures: list[SinusoidTexture]
    rng_seed: int
    d_max: float = 80.0


@dataclass(frozen=True)
class TrajectorySpec:
    n_frames: int
    poses: list[RigidPose]  # camera-to-world
    forward_velocity: float
    yaw_rate: float
    jitter_std: float


@dataclass(frozen=True)
class RenderedSequence:
    frames: list[np.ndarray]      # (H, W, 3) in [0, 1]
    gt_depths: list[np.ndarray]   # (H, W) meters
    gt_poses: list[RigidPose]     # camera-to-world
    k: Intrinsics


def _random_texture(rng: np.random.Generator, n_sinusoids: int, amplitude: float,
                    min_frequency: float, max_frequency: float) -> SinusoidTexture:
    raw = rng.uniform(0.5, 1.0, size=(n_sinusoids, 3)) * rng.choice([-1.0, 1.0], size=(n_sinusoids, 3))
    amps = raw * (amplitude / np.abs(raw).sum(axis=0))
    mags = rng.uniform(min_frequency, max_frequency, size=n_sinusoids)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=n_sinusoids)
    freqs = np.stack([mags * np.cos(angles), mags * np.sin(angles)], axis=1)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(n_sinusoids, 3))
    return SinusoidTexture(amps, freqs, phases)


def corridor_scene(rng_seed: int, d_max: float = 80.0, n_sinusoids: int = 8,
                   texture_amplitude: float = 0.35, min_frequency: float = 0.05,
                   max_frequency: float = 0.5, ground_y: float = 1.5,
                   wall_x: float = 4.0, front_z: float = 25.0) -> SceneSpec:
    """Ground plane plus left/right/front walls, each with its own texture.

    The box geometry guarantees every forward-looking ray hits a plane at a
    positive depth well below d_max for the default trajectories.
    """
    rng = np.random.default_rng(rng_seed)
    planes = [
        Plane(np.array([0.0, 1.0, 0.0]), ground_y, 0),
        Plane(np.array([1.0, 0.0, 0.0]), -wall_x, 1),
        Plane(np.array([1.0, 0.0, 0.0]), wall_x, 2),
        Plane(np.array([0.0, 0.0, 1.0]), front_z, 3),
    ]
    textures = [_random_texture(rng, n_sinusoids, texture_amplitude,
                                min_frequency, max_frequency)
                for _ in planes]
    return SceneSpec(planes, textures, rng_seed, d_max)


def _yaw_matrix(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def forward_trajectory(n_frames: int, forward_velocity: float = 0.5,
                       yaw_rate: float = 0.01, jitter_std: float = 0.02,
                       rng_seed: int = 0) -> TrajectorySpec:
    """Forward motion with mild yaw and per-frame pose jitter.

    Frame 0 is the identity pose (it anchors the world frame); jitter applies
    from frame 1 on. Consecutive poses must differ, so forward_velocity must
    be positive.
    """
    if n_frames < 2:
        raise ValueError(f"need at least 2 frames, got {n_frames}")
    if forward_velocity <= 0:
        raise ValueError("forward_velocity must be positive (static frames are not allowed)")
    rng = np.random.default_rng(rng_seed)
    poses = [RigidPose.identity()]
    pos = np.zeros(3)
    for i in range(1, n_frames):
        heading = _yaw_matrix(yaw_rate * (i - 1))
        pos = pos + heading @ np.array([0.0, 0.0, forward_velocity])
        pos = pos + rng.normal(0.0, jitter_std, 3)
        rot = _yaw_matrix(yaw_rate * i) @ rotation_exp(rng.normal(0.0, jitter_std, 3))
        poses.append(RigidPose(rot, pos.copy()))
    return TrajectorySpec(n_frames, poses, forward_velocity, yaw_rate, jitter_std)


def render_frame(scene: SceneSpec, pose: RigidPose, k: Intrinsics, h: int, w: int,
                 frame_index: int = 0):
    """Ray-cast one frame; returns (image, depth).

    Raises ValueError naming the first uncovered pixel if any ray misses all
    planes or only hits beyond d_max.
    """
    rays_cam = pixel_rays(k, h, w)
    dirs = rays_cam @ pose.rotation.T
    origin = pose.translation
    best_s = np.full((h, w), np.inf)
    best_plane = np.full((h, w), -1, dtype=np.int64)
    for idx, plane in enumerate(scene.planes):
        denom = dirs @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (plane.offset - float(origin @ plane.normal)) / denom
        hit = (np.abs(denom) > _RAY_EPS) & (s > 1e-9)
        closer = hit & (s < best_s)
        best_s = np.where(closer, s, best_s)
        best_plane = np.where(closer, idx, best_plane)
    uncovered = (best_plane < 0) | (best_s > scene.d_max)
    if uncovered.any():
        v, u = np.unravel_index(int(np.argmax(uncovered)), (h, w))
        raise ValueError(
            f"frame {frame_index}: pixel (u={u}, v={v}) hits no plane within "
            f"d_max={scene.d_max} (scene/trajectory violate the coverage invariant)")
    points = origin + best_s[..., None] * dirs
    image = np.zeros((h, w, 3))
    for idx, plane in enumerate(scene.planes):
        mask = best_plane == idx
        if not mask.any():
            continue
        e1, e2 = plane.local_frame()
        p = points[mask]
        image[mask] = scene.textures[plane.texture].evaluate(p @ e1, p @ e2)
    return image, best_s


def render_sequence(scene: SceneSpec, traj: TrajectorySpec, k: Intrinsics,
                    hw: tuple[int, int]) -> RenderedSequence:
    """Render every trajectory pose; fully deterministic for a fixed scene."""
    h, w = hw
    frames, depths = [], []
    for i, pose in enumerate(traj.poses):
        img, depth = render_frame(scene, pose, k, h, w, frame_index=i)
        frames.append(img)
        depths.append(depth)
    return RenderedSequence(frames, depths, list(traj.poses), k)


def relative_pose(gt_poses: list[RigidPose], i: int, j: int) -> RigidPose:
    """Transform taking camera-i coordinates to camera-j coordinates."""
    n = len(gt_poses)
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"frame index out of range: i={i}, j={j}, n_frames={n}")
    return compose(inverse(gt_poses[j]), gt_poses[i])
