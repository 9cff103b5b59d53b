"""Measurement stack: depth error metrics, per-frame scale factors and their
coefficient of variation, and 5-frame-snippet absolute trajectory error.

The scale factor of a frame is median(d_true)/median(d_pred) over valid
pixels; its normalized dispersion sigma/mu across a sequence is the
consistency metric (population standard deviation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lie import RigidPose, compose, inverse

DEFAULT_MIN_DEPTH = 1e-3
DEFAULT_MAX_DEPTH = 80.0

SCALING_MODES = ("none", "per_frame", "per_sequence")


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float


@dataclass(frozen=True)
class ScaleSeries:
    """Per-frame scale factors with population mean/std and CoV."""

    scales: np.ndarray
    mu: float
    sigma: float
    cov: float


@dataclass(frozen=True)
class SnippetATE:
    """Mean and std (meters) of window RMSEs over all 5-frame snippets."""

    mean: float
    std: float


def scale_factor(d_true: np.ndarray, d_pred: np.ndarray, valid: np.ndarray,
                 min_depth: float = DEFAULT_MIN_DEPTH,
                 max_depth: float = DEFAULT_MAX_DEPTH) -> float:
    """median(d_true)/median(d_pred) over valid pixels, depths clipped first."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("scale_factor needs at least one valid pixel")
    gt = np.clip(np.asarray(d_true, dtype=float)[valid], min_depth, max_depth)
    pred = np.clip(np.asarray(d_pred, dtype=float)[valid], min_depth, max_depth)
    return float(np.median(gt) / np.median(pred))


def scale_series(frames, min_depth: float = DEFAULT_MIN_DEPTH,
                 max_depth: float = DEFAULT_MAX_DEPTH) -> ScaleSeries:
    """Per-frame scale factors for a sequence of (d_true, d_pred, valid) triples."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError(f"scale_series needs at least 2 frames, got {len(frames)}")
    scales = np.array([scale_factor(gt, pred, valid, min_depth, max_depth)
                       for gt, pred, valid in frames])
    mu = float(scales.mean())
    sigma = float(scales.std())  # population
    return ScaleSeries(scales, mu, sigma, sigma / mu)


def _frame_metrics(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    diff = pred - gt
    abs_rel = np.mean(np.abs(diff) / gt)
    sq_rel = np.mean(diff * diff / gt)
    rmse = math.sqrt(np.mean(diff * diff))
    log_diff = np.log(pred) - np.log(gt)
    rmse_log = math.sqrt(np.mean(log_diff * log_diff))
    ratio = np.maximum(pred / gt, gt / pred)
    deltas = [np.mean(ratio < 1.25 ** i) for i in (1, 2, 3)]
    return np.array([abs_rel, sq_rel, rmse, rmse_log, *deltas])


def eigen_metrics(d_trues, d_preds, valids, scaling: str = "per_frame",
                  min_depth: float = DEFAULT_MIN_DEPTH,
                  max_depth: float = DEFAULT_MAX_DEPTH) -> DepthMetrics:
    """Standard depth error/accuracy metrics, averaged over frames.

    scaling selects how predictions are aligned to ground truth before the
    metrics: one median-ratio scalar per frame, one per sequence (the median
    of the per-frame scalars), or none. Predictions are clamped to
    [min_depth, max_depth] after scaling.
    """
    if scaling not in SCALING_MODES:
        raise ValueError(f"unknown scaling mode {scaling!r}; expected one of {SCALING_MODES}")
    d_trues = [np.asarray(d, dtype=float) for d in d_trues]
    d_preds = [np.asarray(d, dtype=float) for d in d_preds]
    valids = [np.asarray(v, dtype=bool) for v in valids]
    if not (len(d_trues) == len(d_preds) == len(valids)):
        raise ValueError("d_trues, d_preds, valids must have equal lengths")
    for i, v in enumerate(valids):
        if not v.any():
            raise ValueError(f"frame {i} has no valid pixels")

    if scaling == "none":
        factors = np.ones(len(d_trues))
    else:
        factors = np.array([scale_factor(gt, pred, v, min_depth, max_depth)
                            for gt, pred, v in zip(d_trues, d_preds, valids)])
        if scaling == "per_sequence":
            factors = np.full(len(d_trues), np.median(factors))

    per_frame = []
    for gt, pred, v, f in zip(d_trues, d_preds, valids, factors):
        scaled = np.clip(pred[v] * f, min_depth, max_depth)
        per_frame.append(_frame_metrics(gt[v], scaled))
    mean = np.mean(per_frame, axis=0)
    return DepthMetrics(*[float(x) for x in mean])


def accumulate_positions(relative_poses) -> np.ndarray:
    """Camera positions implied by a chain of frame-to-next-frame poses.

    The first camera anchors the coordinate frame at the origin; position k
    is the translation of the accumulated camera-to-anchor transform.
    """
    pose = RigidPose.identity()
    positions = [np.zeros(3)]
    for rel in relative_poses:
        pose = compose(pose, inverse(rel))
        positions.append(pose.translation.copy())
    return np.stack(positions)


def snippet_ate(pred_relative, gt_relative, n_frames: int, window: int = 5) -> SnippetATE:
    """ATE over all overlapping windows of `window` consecutive frames.

    Each window's relative poses are accumulated into positions anchored at
    the window's first frame, the predicted positions are aligned to ground
    truth with the least-squares scale, and the window error is the RMSE of
    the aligned position residuals. Returns mean and population std over
    windows.
    """
    pred_relative = list(pred_relative)
    gt_relative = list(gt_relative)
    if n_frames < window:
        raise ValueError(f"sequence of {n_frames} frames is shorter than the {window}-frame window")
    if len(pred_relative) != n_frames - 1 or len(gt_relative) != n_frames - 1:
        raise ValueError("pose lists must cover all adjacent pairs of the sequence")
    errors = []
    for start in range(n_frames - window + 1):
        pred_pos = accumulate_positions(pred_relative[start:start + window - 1])
        gt_pos = accumulate_positions(gt_relative[start:start + window - 1])
        den = float((pred_pos * pred_pos).sum())
        s = float((pred_pos * gt_pos).sum()) / den if den > 0.0 else 1.0
        residual = s * pred_pos - gt_pos
        errors.append(math.sqrt(float((residual * residual).sum() / window)))
    errors = np.array(errors)
    return SnippetATE(float(errors.mean()), float(errors.std()))
