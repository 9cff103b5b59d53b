"""Differentiable-style view synthesis in numpy: reprojection, bilinear
sampling, SSIM photometric loss, minimum reprojection, auto-masking, and
edge-aware depth smoothness.

Image grids are (H, W, C) float arrays in [0, 1] with C in {1, 3}; depth
maps are (H, W) positive floats in meters. Pixel coordinate u indexes
columns, v indexes rows, and pixel centers sit at integer coordinates.
Out-of-bounds or behind-camera samples are marked invalid and excluded from
losses rather than clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .lie import RigidPose


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class PhotometricConfig:
    """SSIM + L1 mixture weights; window is fixed 3x3 mean pooling."""

    alpha: float = 0.85
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def pixel_rays(k: Intrinsics, h: int, w: int) -> np.ndarray:
    """(H, W, 3) array of K^-1 [u, v, 1] for every pixel center."""
    u = np.arange(w, dtype=float)
    v = np.arange(h, dtype=float)
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones((h, w))], axis=-1)


def reproject(depth: np.ndarray, pose: RigidPose, k: Intrinsics):
    """Map every target pixel into the source view.

    Unprojects each pixel with its depth, applies the pose, and projects with
    perspective division. Returns (coords, valid) where coords is (H, W, 2)
    holding (u_hat, v_hat); pixels with nonpositive depth-after-transform or
    landing outside the image bounds are invalid (coords forced to 0, never
    NaN).
    """
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape
    pts = depth[..., None] * pixel_rays(k, h, w)
    moved = pts @ pose.rotation.T + pose.translation
    z = moved[..., 2]
    safe_z = np.where(z > 0.0, z, 1.0)
    u_hat = k.fx * moved[..., 0] / safe_z + k.cx
    v_hat = k.fy * moved[..., 1] / safe_z + k.cy
    valid = (z > 0.0) & (u_hat >= 0.0) & (u_hat <= w - 1) & (v_hat >= 0.0) & (v_hat <= h - 1)
    coords = np.stack([np.where(valid, u_hat, 0.0), np.where(valid, v_hat, 0.0)], axis=-1)
    return coords, valid


def sample_bilinear(src: np.ndarray, coords: np.ndarray, valid: np.ndarray):
    """Bilinearly interpolate src at the given (u, v) coordinates.

    Invalid coordinates produce value 0 and stay invalid. Coordinates exactly
    on the far edge read the edge pixel (the clamped neighbor has weight 0).
    """
    src = np.asarray(src, dtype=float)
    h, w, c = src.shape
    u = coords[..., 0]
    v = coords[..., 1]
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (u - x0)[..., None]
    wy = (v - y0)[..., None]
    top = (1.0 - wx) * src[y0, x0] + wx * src[y0, x1]
    bot = (1.0 - wx) * src[y1, x0] + wx * src[y1, x1]
    out = (1.0 - wy) * top + wy * bot
    out = np.where(valid[..., None], out, 0.0)
    return out, valid.copy()


def synthesize_view(src: np.ndarray, depth_of_target: np.ndarray,
                    pose_target_to_src: RigidPose, k: Intrinsics):
    """Reconstruct the target view by sampling src at reprojected coordinates."""
    src = np.asarray(src, dtype=float)
    depth = np.asarray(depth_of_target, dtype=float)
    if src.shape[:2] != depth.shape:
        raise ValueError(f"src {src.shape[:2]} and depth {depth.shape} dims differ")
    coords, valid = reproject(depth, pose_target_to_src, k)
    return sample_bilinear(src, coords, valid)


def _pool3(x: np.ndarray) -> np.ndarray:
    # 3x3 mean pooling with reflection padding (edge not repeated)
    return uniform_filter(x, size=(3, 3, 1), mode="mirror")


def ssim_map(a: np.ndarray, b: np.ndarray, cfg: PhotometricConfig) -> np.ndarray:
    """Per-pixel, per-channel SSIM with 3x3 mean-pooled statistics."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mu_a = _pool3(a)
    mu_b = _pool3(b)
    var_a = _pool3(a * a) - mu_a * mu_a
    var_b = _pool3(b * b) - mu_b * mu_b
    cov = _pool3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1) * (var_a + var_b + cfg.ssim_c2)
    return num / den


def photometric_error_map(target: np.ndarray, synthesized: np.ndarray,
                          cfg: PhotometricConfig) -> np.ndarray:
    """(H, W) per-pixel error: (alpha/2)(1 - SSIM) + (1 - alpha) L1, channel-averaged."""
    target = np.asarray(target, dtype=float)
    synthesized = np.asarray(synthesized, dtype=float)
    if target.shape != synthesized.shape:
        raise ValueError(f"image dims differ: {target.shape} vs {synthesized.shape}")
    ssim = ssim_map(target, synthesized, cfg)
    l1 = np.abs(target - synthesized)
    per_channel = 0.5 * cfg.alpha * (1.0 - ssim) + (1.0 - cfg.alpha) * l1
    return per_channel.mean(axis=2)


def photometric_loss(target: np.ndarray, synthesized: np.ndarray,
                     valid: np.ndarray, cfg: PhotometricConfig) -> float:
    """Mean per-pixel photometric error over valid pixels; 0 if none are valid."""
    err = photometric_error_map(target, synthesized, cfg)
    if not valid.any():
        return 0.0
    return float(err[valid].mean())


def combine_min_reprojection(err_maps, valid_maps):
    """Per-pixel minimum over source error maps with validity handling.

    A pixel invalid in one source uses the other(s); invalid everywhere gives
    value 0 and valid False. Returns (min_map, valid_any).
    """
    err_stack = np.stack(err_maps)
    valid_stack = np.stack(valid_maps)
    big = np.where(valid_stack, err_stack, np.inf)
    min_map = big.min(axis=0)
    valid_any = valid_stack.any(axis=0)
    min_map = np.where(valid_any, min_map, 0.0)
    return min_map, valid_any


def min_reprojection_loss(target, synth_prev, valid_prev, synth_next, valid_next,
                          cfg: PhotometricConfig):
    """Per-pixel min of the two source photometric errors, plus its mean.

    Returns (loss_map, valid_any, mean_over_valid).
    """
    e_prev = photometric_error_map(target, synth_prev, cfg)
    e_next = photometric_error_map(target, synth_next, cfg)
    loss_map, valid_any = combine_min_reprojection([e_prev, e_next], [valid_prev, valid_next])
    mean = float(loss_map[valid_any].mean()) if valid_any.any() else 0.0
    return loss_map, valid_any, mean


def auto_mask(target, neighbor_prev, neighbor_next, synth_prev, valid_prev,
              synth_next, valid_next, cfg: PhotometricConfig) -> np.ndarray:
    """Keep pixels whose best warped error beats the best unwarped one.

    A pixel is kept iff min over valid synthesized sources of the photometric
    error is strictly below the min over the raw (unwarped) neighbor images.
    Ties and pixels with no valid synthesized source are excluded.
    """
    synth_min, valid_any = combine_min_reprojection(
        [photometric_error_map(target, synth_prev, cfg),
         photometric_error_map(target, synth_next, cfg)],
        [valid_prev, valid_next])
    raw_min = np.minimum(photometric_error_map(target, neighbor_prev, cfg),
                         photometric_error_map(target, neighbor_next, cfg))
    return valid_any & (synth_min < raw_min)


def smoothness_loss(depth: np.ndarray, image: np.ndarray) -> float:
    """Edge-aware first-difference smoothness of mean-normalized depth.

    Forward differences along each axis, weighted by exp(-|dI|) with the
    image gradient magnitude averaged over channels; each axis term is
    averaged over its difference grid and the two are summed.
    """
    depth = np.asarray(depth, dtype=float)
    image = np.asarray(image, dtype=float)
    if depth.shape != image.shape[:2]:
        raise ValueError(f"depth {depth.shape} and image {image.shape[:2]} dims differ")
    dbar = depth / depth.mean()
    gx = np.abs(dbar[:, 1:] - dbar[:, :-1])
    gy = np.abs(dbar[1:, :] - dbar[:-1, :])
    ix = np.abs(image[:, 1:] - image[:, :-1]).mean(axis=2)
    iy = np.abs(image[1:, :] - image[:-1, :]).mean(axis=2)
    return float((gx * np.exp(-ix)).mean() + (gy * np.exp(-iy)).mean())
