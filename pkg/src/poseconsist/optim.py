"""Desk-scale stand-in for network training.

Two regimes share one composite objective (photometric + smoothness +
weighted pose-consistency terms):

* Regime A frees one log depth-scale per frame (depth shape stays at ground
  truth) and one raw twist per ordered adjacent frame pair, both directions.
  This isolates the per-frame scale gauge that the photometric loss alone
  cannot pin: scaling a frame's depth and its pair translations together
  leaves every reprojection fixed.
* Regime B replaces the free twists with a tiny linear regressor from
  downsampled grayscale frame pairs to a 6-vector twist, which makes the
  duplicated-frame (identity) constraint meaningful.

Gradients are central finite differences. The objective decomposes into
terms each touching a few parameters, so a probe re-evaluates only the
touched terms; the result is exactly the central difference of the full
objective because untouched terms cancel.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import uniform_filter

from . import evaluate
from ._kernels import error_map as _error_map_kernel
from ._kernels import warp_sample as _warp_sample_kernel
from .config import ExperimentConfig
from .evaluate import ScaleSeries, SnippetATE, scale_series, snippet_ate
from .lie import RigidPose, Twist, compose, exp_map, inverse, log_map, pose_distance, rotation_exp
from .warp import PhotometricConfig, combine_min_reprojection, pixel_rays, smoothness_loss
from .world import RenderedSequence, corridor_scene, forward_trajectory, relative_pose, render_sequence

CONSTRAINTS = ("fb", "id", "cyc")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Composite-objective weights and optimizer hyperparameters."""

    constraint_weight: float = 0.1
    constraints: tuple = ()
    smoothness_weight: float = 1e-3
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    learning_rate: float = 0.02
    iterations: int = 60
    fd_step: float = 1e-4
    regime: str = "A"
    feature_height: int = 16
    feature_width: int = 24
    divergence_threshold: float = 1e6
    d_max: float = 80.0

    def __post_init__(self):
        if self.constraint_weight < 0:
            raise ValueError("constraint weight must be non-negative")
        for name in self.constraints:
            if name not in CONSTRAINTS:
                raise ValueError(f"unknown constraint {name!r}")
        if "id" in self.constraints and self.regime != "B":
            raise ValueError("the identity constraint needs a shared estimator (regime B)")
        if self.regime not in ("A", "B"):
            raise ValueError(f"regime must be 'A' or 'B', got {self.regime!r}")


@dataclass(frozen=True)
class LossBreakdown:
    photometric: float
    smoothness: float
    fb: float
    id: float
    cyc: float
    total: float


def _assemble(cfg: ObjectiveConfig, photometric, smoothness, fb, id_, cyc) -> LossBreakdown:
    enabled = 0.0
    if "fb" in cfg.constraints:
        enabled += fb
    if "id" in cfg.constraints:
        enabled += id_
    if "cyc" in cfg.constraints:
        enabled += cyc
    total = photometric + cfg.smoothness_weight * smoothness + cfg.constraint_weight * enabled
    return LossBreakdown(photometric, smoothness, fb, id_, cyc, total)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    photometric: float
    smoothness: float
    fb: float
    id: float
    cyc: float
    total: float
    cov_scales: float


@dataclass
class ParamSetA:
    """Per-frame log depth-scales plus both-direction adjacent-pair twists."""

    log_scales: np.ndarray   # (N,)
    fwd_twists: np.ndarray   # (N-1, 6): twist for t -> t+1
    bwd_twists: np.ndarray   # (N-1, 6): twist for t+1 -> t

    def copy(self) -> "ParamSetA":
        return ParamSetA(self.log_scales.copy(), self.fwd_twists.copy(), self.bwd_twists.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.log_scales, self.fwd_twists.ravel(), self.bwd_twists.ravel()])

    @staticmethod
    def from_vector(vec: np.ndarray, template: "ParamSetA") -> "ParamSetA":
        n = template.log_scales.size
        p = template.fwd_twists.shape[0]
        ls = vec[:n].copy()
        fwd = vec[n:n + 6 * p].reshape(p, 6).copy()
        bwd = vec[n + 6 * p:].reshape(p, 6).copy()
        return ParamSetA(ls, fwd, bwd)


@dataclass
class ParamSetB:
    """Linear pose regressor (weights, bias) plus per-frame log depth-scales."""

    weights: np.ndarray      # (6, F)
    bias: np.ndarray         # (6,)
    log_scales: np.ndarray   # (N,)

    def copy(self) -> "ParamSetB":
        return ParamSetB(self.weights.copy(), self.bias.copy(), self.log_scales.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.log_scales, self.weights.ravel(), self.bias])

    @staticmethod
    def from_vector(vec: np.ndarray, template: "ParamSetB") -> "ParamSetB":
        n = template.log_scales.size
        wsize = template.weights.size
        ls = vec[:n].copy()
        w = vec[n:n + wsize].reshape(template.weights.shape).copy()
        b = vec[n + wsize:].copy()
        return ParamSetB(w, b, ls)


@dataclass
class OptimizeResult:
    params: object
    trace: list
    diverged: bool


def _pose_from_vec(vec6: np.ndarray) -> RigidPose:
    return RigidPose(rotation_exp(vec6[:3]), vec6[3:].copy())


class ObjectiveEvaluator:
    """Caches per-sequence data and evaluates the composite objective.

    The photometric term covers every frame as a target: interior frames use
    the per-pixel minimum over both warped neighbors, boundary frames use
    their single neighbor (otherwise end-frame scales and the outermost
    twists would receive no photometric gradient at all).
    """

    def __init__(self, seq: RenderedSequence, cfg: ObjectiveConfig):
        self.cfg = cfg
        self.k = seq.k
        self.frames = np.ascontiguousarray(np.stack(seq.frames), dtype=np.float64)
        self.gt_depths = np.ascontiguousarray(np.stack(seq.gt_depths), dtype=np.float64)
        self.n_frames, self.h, self.w, self.c = self.frames.shape
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        self.rays = np.ascontiguousarray(pixel_rays(seq.k, self.h, self.w))

        pc = cfg.photometric
        mu = uniform_filter(self.frames, size=(1, 3, 3, 1), mode="mirror")
        var = uniform_filter(self.frames * self.frames, size=(1, 3, 3, 1), mode="mirror") - mu * mu
        self.mu_t = np.ascontiguousarray(mu)
        self.var_t = np.ascontiguousarray(var)

        # scratch buffers for the kernels
        self._synth = np.empty((self.h, self.w, self.c))
        self._valid = np.empty((self.h, self.w), dtype=np.bool_)
        self._hs = np.empty((self.h, self.w, self.c))
        self._hss = np.empty((self.h, self.w, self.c))
        self._hts = np.empty((self.h, self.w, self.c))
        self._err = np.empty((self.h, self.w))

        # target -> list of (src_frame, pair_index, direction); pair i is (i, i+1)
        self.sources = []
        for t in range(self.n_frames):
            srcs = []
            if t - 1 >= 0:
                srcs.append((t - 1, t - 1, "bwd"))
            if t + 1 < self.n_frames:
                srcs.append((t + 1, t, "fwd"))
            self.sources.append(srcs)

        # raw (unwarped) neighbor errors for auto-masking; parameter-independent
        self.raw_min = []
        for t in range(self.n_frames):
            maps = [self._raw_error(t, src) for src, _, _ in self.sources[t]]
            self.raw_min.append(np.minimum.reduce(maps))

        # smoothness of mean-normalized depth is invariant to the per-frame
        # scale parameters, so it is a per-sequence constant
        self.smoothness_value = float(np.mean(
            [smoothness_loss(self.gt_depths[t], self.frames[t]) for t in range(self.n_frames)]))

        self.n_pairs = self.n_frames - 1
        self.n_triples = max(self.n_frames - 2, 0)

        if cfg.regime == "B":
            self._init_regime_b()

    # ----- regime B plumbing -------------------------------------------------

    def _init_regime_b(self):
        fh, fw = self.cfg.feature_height, self.cfg.feature_width
        if self.h % fh or self.w % fw:
            raise ValueError(
                f"regime B needs image dims divisible by the {fh}x{fw} feature grid, got {self.h}x{self.w}")
        gray = self.frames.mean(axis=3)
        down = gray.reshape(self.n_frames, fh, self.h // fh, fw, self.w // fw).mean(axis=(2, 4))
        flat = down.reshape(self.n_frames, fh * fw)

        n = self.n_frames
        self.pair_frames = []
        self.row_fwd = {}
        self.row_bwd = {}
        self.row_dirp = {}
        self.row_dirn = {}
        self.row_self = {}
        for i in range(n - 1):
            self.row_fwd[i] = len(self.pair_frames)
            self.pair_frames.append((i, i + 1))
        for i in range(n - 1):
            self.row_bwd[i] = len(self.pair_frames)
            self.pair_frames.append((i + 1, i))
        for m in range(1, n - 1):
            self.row_dirp[m] = len(self.pair_frames)
            self.pair_frames.append((m - 1, m + 1))
        for m in range(1, n - 1):
            self.row_dirn[m] = len(self.pair_frames)
            self.pair_frames.append((m + 1, m - 1))
        for t in range(n):
            self.row_self[t] = len(self.pair_frames)
            self.pair_frames.append((t, t))

        feats = np.stack([np.concatenate([flat[a], flat[b]]) for a, b in self.pair_frames])
        self.features = feats - feats.mean(axis=1, keepdims=True)

    def feature_dim(self) -> int:
        return 2 * self.cfg.feature_height * self.cfg.feature_width

    def regressor_twists(self, params: ParamSetB) -> np.ndarray:
        """(P, 6) twist rows for every frame pair the objective touches."""
        return self.features @ params.weights.T + params.bias

    # ----- shared pieces ------------------------------------------------------

    def _raw_error(self, t: int, src: int) -> np.ndarray:
        pc = self.cfg.photometric
        _error_map_kernel(self.frames[t], self.frames[src], self.mu_t[t], self.var_t[t],
                          pc.ssim_c1, pc.ssim_c2, pc.alpha,
                          self._hs, self._hss, self._hts, self._err)
        return self._err.copy()

    def _branch(self, t: int, src: int, rot: np.ndarray, trans: np.ndarray,
                depth: np.ndarray):
        """Warp src into target t under (rot, trans) and score it. Returns views
        into scratch; copy before the next _branch call if kept."""
        pc = self.cfg.photometric
        _warp_sample_kernel(self.frames[src], depth, self.rays, rot, trans,
                            self.k.fx, self.k.fy, self.k.cx, self.k.cy,
                            self._synth, self._valid)
        _error_map_kernel(self.frames[t], self._synth, self.mu_t[t], self.var_t[t],
                          pc.ssim_c1, pc.ssim_c2, pc.alpha,
                          self._hs, self._hss, self._hts, self._err)
        return self._err, self._valid

    def _photometric_term(self, t: int, err_maps, valid_maps) -> float:
        min_map, valid_any = combine_min_reprojection(err_maps, valid_maps)
        keep = valid_any & (min_map < self.raw_min[t])
        if not keep.any():
            return 0.0
        return float(min_map[keep].mean())

    def _depths(self, log_scales: np.ndarray) -> np.ndarray:
        return np.exp(log_scales)[:, None, None] * self.gt_depths

    def _adjacent_poses(self, params):
        """(fwd_poses, bwd_poses) lists of RigidPose for pairs (i, i+1)."""
        if self.cfg.regime == "A":
            fwd = [_pose_from_vec(params.fwd_twists[i]) for i in range(self.n_pairs)]
            bwd = [_pose_from_vec(params.bwd_twists[i]) for i in range(self.n_pairs)]
        else:
            xi = self.regressor_twists(params)
            fwd = [_pose_from_vec(xi[self.row_fwd[i]]) for i in range(self.n_pairs)]
            bwd = [_pose_from_vec(xi[self.row_bwd[i]]) for i in range(self.n_pairs)]
        return fwd, bwd

    def adjacent_forward_twists(self, params) -> np.ndarray:
        """(N-1, 6) estimated twists t -> t+1, used for trajectory evaluation."""
        if self.cfg.regime == "A":
            return params.fwd_twists.copy()
        xi = self.regressor_twists(params)
        return np.stack([xi[self.row_fwd[i]] for i in range(self.n_pairs)])

    @staticmethod
    def _fb_pair(fwd_pose: RigidPose, bwd_pose: RigidPose) -> float:
        # both orderings of the pair count as instances (n = +1 and n = -1)
        return (pose_distance(bwd_pose, inverse(fwd_pose))
                + pose_distance(fwd_pose, inverse(bwd_pose)))

    def _cyc_triple_a(self, fwd, bwd, m: int) -> float:
        # Regime A: the direct 2-step estimate is realized from the
        # opposite-direction chain (see module docstring); each triple yields
        # an n=+1 and an n=-1 instance.
        fwd_chain = compose(fwd[m], fwd[m - 1])      # frame m-1 -> m+1
        bwd_chain = compose(bwd[m - 1], bwd[m])      # frame m+1 -> m-1
        return (pose_distance(inverse(bwd_chain), fwd_chain)
                + pose_distance(inverse(fwd_chain), bwd_chain))

    def _cyc_triple_b(self, xi: np.ndarray, m: int) -> float:
        fwd_chain = compose(_pose_from_vec(xi[self.row_fwd[m]]),
                            _pose_from_vec(xi[self.row_fwd[m - 1]]))
        bwd_chain = compose(_pose_from_vec(xi[self.row_bwd[m - 1]]),
                            _pose_from_vec(xi[self.row_bwd[m]]))
        plus = pose_distance(_pose_from_vec(xi[self.row_dirp[m]]), fwd_chain)
        minus = pose_distance(_pose_from_vec(xi[self.row_dirn[m]]), bwd_chain)
        return plus + minus

    # ----- objective ----------------------------------------------------------

    def breakdown(self, params) -> LossBreakdown:
        depths = self._depths(params.log_scales)
        fwd, bwd = self._adjacent_poses(params)
        pose_of = {"fwd": fwd, "bwd": bwd}

        photo_terms = []
        for t in range(self.n_frames):
            errs, valids = [], []
            for src, pair, direction in self.sources[t]:
                pose = pose_of[direction][pair]
                err, valid = self._branch(t, src, pose.rotation, pose.translation, depths[t])
                errs.append(err.copy())
                valids.append(valid.copy())
            photo_terms.append(self._photometric_term(t, errs, valids))
        photometric = float(np.mean(photo_terms))

        fb = sum(self._fb_pair(fwd[i], bwd[i]) for i in range(self.n_pairs)) / (2 * self.n_pairs)

        cyc = 0.0
        if self.n_triples:
            if self.cfg.regime == "A":
                cyc = sum(self._cyc_triple_a(fwd, bwd, m)
                          for m in range(1, self.n_frames - 1)) / (2 * self.n_triples)
            else:
                xi = self.regressor_twists(params)
                cyc = sum(self._cyc_triple_b(xi, m)
                          for m in range(1, self.n_frames - 1)) / (2 * self.n_triples)

        id_ = 0.0
        if self.cfg.regime == "B":
            xi = self.regressor_twists(params)
            id_ = float(np.mean([np.abs(xi[self.row_self[t]]).sum() for t in range(self.n_frames)]))

        return _assemble(self.cfg, photometric, self.smoothness_value, fb, id_, cyc)

    def scale_cov(self, params) -> float:
        depths = self._depths(params.log_scales)
        ones = np.ones((self.h, self.w), dtype=bool)
        series = scale_series([(self.gt_depths[t], depths[t], ones) for t in range(self.n_frames)],
                              max_depth=self.cfg.d_max)
        return series.cov

    # ----- gradient -----------------------------------------------------------

    def gradient(self, params):
        if self.cfg.regime == "A":
            return self._gradient_a(params)
        return self._gradient_b(params)

    def _check_finite(self, value: float, flat_index: int):
        if not math.isfinite(value):
            raise FloatingPointError(
                f"non-finite objective at probe of parameter index {flat_index}")
        return value

    def _base_branches(self, params, depths, fwd, bwd):
        """err/valid maps for every (target, source) at the current params."""
        pose_of = {"fwd": fwd, "bwd": bwd}
        cache = []
        for t in range(self.n_frames):
            per_t = []
            for src, pair, direction in self.sources[t]:
                pose = pose_of[direction][pair]
                err, valid = self._branch(t, src, pose.rotation, pose.translation, depths[t])
                per_t.append((err.copy(), valid.copy()))
            cache.append(per_t)
        return cache

    def _photometric_with_replacement(self, t, cache, slot, err, valid) -> float:
        errs = [err if i == slot else cache[t][i][0] for i in range(len(cache[t]))]
        valids = [valid if i == slot else cache[t][i][1] for i in range(len(cache[t]))]
        return self._photometric_term(t, errs, valids)

    def _gradient_a(self, params: ParamSetA) -> ParamSetA:
        cfg = self.cfg
        h = cfg.fd_step
        n = self.n_frames
        lam = cfg.constraint_weight
        fb_on = "fb" in cfg.constraints
        cyc_on = "cyc" in cfg.constraints
        depths = self._depths(params.log_scales)
        fwd, bwd = self._adjacent_poses(params)
        cache = self._base_branches(params, depths, fwd, bwd)

        grad_ls = np.zeros(n)
        grad_fwd = np.zeros((self.n_pairs, 6))
        grad_bwd = np.zeros((self.n_pairs, 6))
        pose_of = {"fwd": fwd, "bwd": bwd}

        # log-scales touch only their own frame's photometric term
        for t in range(n):
            probes = []
            for sgn in (1.0, -1.0):
                depth = math.exp(params.log_scales[t] + sgn * h) * self.gt_depths[t]
                errs, valids = [], []
                for src, pair, direction in self.sources[t]:
                    pose = pose_of[direction][pair]
                    err, valid = self._branch(t, src, pose.rotation, pose.translation, depth)
                    errs.append(err.copy())
                    valids.append(valid.copy())
                probes.append(self._check_finite(self._photometric_term(t, errs, valids), t))
            grad_ls[t] = (probes[0] - probes[1]) / (2.0 * h) / n

        def twist_probe(direction, i, vec):
            """Touched-term value for pair i of the given direction at twist vec."""
            pose = _pose_from_vec(vec)
            if direction == "fwd":
                target, partner = i, bwd[i]
                fwd_i, bwd_i = pose, partner
            else:
                target, partner = i + 1, fwd[i]
                fwd_i, bwd_i = partner, pose
            # photometric branch: the probed pose warps exactly one target
            slot = next(s for s, (_, pair, d) in enumerate(self.sources[target])
                        if pair == i and d == direction)
            src = self.sources[target][slot][0]
            err, valid = self._branch(target, src, pose.rotation, pose.translation, depths[target])
            value = self._photometric_with_replacement(target, cache, slot, err, valid) / n
            if fb_on:
                value += lam * self._fb_pair(fwd_i, bwd_i) / (2 * self.n_pairs)
            if cyc_on and self.n_triples:
                fwd_l = list(fwd)
                bwd_l = list(bwd)
                fwd_l[i], bwd_l[i] = fwd_i, bwd_i
                for m in (i, i + 1):
                    if 1 <= m <= n - 2:
                        value += lam * self._cyc_triple_a(fwd_l, bwd_l, m) / (2 * self.n_triples)
            return value

        for direction, grad in (("fwd", grad_fwd), ("bwd", grad_bwd)):
            base = params.fwd_twists if direction == "fwd" else params.bwd_twists
            offset = n + (0 if direction == "fwd" else 6 * self.n_pairs)
            for i in range(self.n_pairs):
                for kcomp in range(6):
                    flat = offset + 6 * i + kcomp
                    vec = base[i].copy()
                    vec[kcomp] += h
                    up = self._check_finite(twist_probe(direction, i, vec), flat)
                    vec[kcomp] -= 2.0 * h
                    dn = self._check_finite(twist_probe(direction, i, vec), flat)
                    grad[i, kcomp] = (up - dn) / (2.0 * h)

        return ParamSetA(grad_ls, grad_fwd, grad_bwd)

    def _gradient_b(self, params: ParamSetB) -> ParamSetB:
        cfg = self.cfg
        h = cfg.fd_step
        n = self.n_frames
        lam = cfg.constraint_weight
        fb_on = "fb" in cfg.constraints
        cyc_on = "cyc" in cfg.constraints
        id_on = "id" in cfg.constraints

        depths = self._depths(params.log_scales)
        xi = self.regressor_twists(params)
        fwd = [_pose_from_vec(xi[self.row_fwd[i]]) for i in range(self.n_pairs)]
        bwd = [_pose_from_vec(xi[self.row_bwd[i]]) for i in range(self.n_pairs)]
        cache = self._base_branches(params, depths, fwd, bwd)
        pose_of = {"fwd": fwd, "bwd": bwd}

        grad_ls = np.zeros(n)
        for t in range(n):
            probes = []
            for sgn in (1.0, -1.0):
                depth = math.exp(params.log_scales[t] + sgn * h) * self.gt_depths[t]
                errs, valids = [], []
                for src, pair, direction in self.sources[t]:
                    pose = pose_of[direction][pair]
                    err, valid = self._branch(t, src, pose.rotation, pose.translation, depth)
                    errs.append(err.copy())
                    valids.append(valid.copy())
                probes.append(self._check_finite(self._photometric_term(t, errs, valids), t))
            grad_ls[t] = (probes[0] - probes[1]) / (2.0 * h) / n

        def row_probe(kind, index, vec):
            value = 0.0
            if kind in ("fwd", "bwd"):
                i = index
                pose = _pose_from_vec(vec)
                if kind == "fwd":
                    target, fwd_i, bwd_i = i, pose, bwd[i]
                else:
                    target, fwd_i, bwd_i = i + 1, fwd[i], pose
                slot = next(s for s, (_, pair, d) in enumerate(self.sources[target])
                            if pair == i and d == kind)
                src = self.sources[target][slot][0]
                err, valid = self._branch(target, src, pose.rotation, pose.translation, depths[target])
                value += self._photometric_with_replacement(target, cache, slot, err, valid) / n
                if fb_on:
                    value += lam * self._fb_pair(fwd_i, bwd_i) / (2 * self.n_pairs)
                if cyc_on and self.n_triples:
                    row = self.row_fwd[i] if kind == "fwd" else self.row_bwd[i]
                    xi_l = xi.copy()
                    xi_l[row] = vec
                    for m in (i, i + 1):
                        if 1 <= m <= n - 2:
                            value += lam * self._cyc_triple_b(xi_l, m) / (2 * self.n_triples)
            elif kind in ("dirp", "dirn"):
                m = index
                row = self.row_dirp[m] if kind == "dirp" else self.row_dirn[m]
                xi_l = xi.copy()
                xi_l[row] = vec
                value += lam * self._cyc_triple_b(xi_l, m) / (2 * self.n_triples)
            else:  # self pair
                value += lam * float(np.abs(vec).sum()) / n
            return value

        rows = []
        for i in range(self.n_pairs):
            rows.append(("fwd", i, self.row_fwd[i]))
        for i in range(self.n_pairs):
            rows.append(("bwd", i, self.row_bwd[i]))
        if cyc_on:
            for m in range(1, n - 1):
                rows.append(("dirp", m, self.row_dirp[m]))
                rows.append(("dirn", m, self.row_dirn[m]))
        if id_on:
            for t in range(n):
                rows.append(("self", t, self.row_self[t]))

        g_xi = np.zeros_like(xi)
        for kind, index, row in rows:
            for kcomp in range(6):
                vec = xi[row].copy()
                vec[kcomp] += h
                up = self._check_finite(row_probe(kind, index, vec), row * 6 + kcomp)
                vec[kcomp] -= 2.0 * h
                dn = self._check_finite(row_probe(kind, index, vec), row * 6 + kcomp)
                g_xi[row, kcomp] = (up - dn) / (2.0 * h)

        # chain rule through xi = features @ W.T + b
        grad_w = g_xi.T @ self.features
        grad_b = g_xi.sum(axis=0)
        return ParamSetB(grad_w, grad_b, grad_ls)


# ----- public operation surface ----------------------------------------------


def total_objective(params, seq: RenderedSequence, cfg: ObjectiveConfig) -> LossBreakdown:
    """Composite objective with its per-term breakdown.

    Constraint terms are always measured, even when disabled; only enabled
    ones enter the total (weighted by the constraint weight).
    """
    return ObjectiveEvaluator(seq, cfg).breakdown(params)


def fd_gradient(params, seq: RenderedSequence, cfg: ObjectiveConfig):
    """Central-difference gradient of the total objective, params-shaped.

    Regime A differentiates each scalar directly; Regime B differentiates the
    6 twist components of every frame pair and chains through the linear
    regressor (dL/dW = dL/dxi outer features), with log-scales differenced
    directly.
    """
    return ObjectiveEvaluator(seq, cfg).gradient(params)


def _adam_step(x, g, m, v, t, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    x = x - lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return x, m, v


def adam_minimize(value_fn, x0, learning_rate=1e-2, iterations=100, fd_step=1e-4,
                  gradient_fn=None, divergence_threshold=1e6):
    """Generic Adam loop over a scalar objective; the optimizer's test hook.

    Without gradient_fn, gradients are per-coordinate central differences.
    Returns (x, per-iteration values incl. the final point, diverged flag).
    """
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    values = []
    diverged = False

    def fd(xc):
        g = np.zeros_like(xc)
        for i in range(xc.size):
            e = np.zeros_like(xc)
            e[i] = fd_step
            up = value_fn(xc + e)
            dn = value_fn(xc - e)
            if not (math.isfinite(up) and math.isfinite(dn)):
                raise FloatingPointError(f"non-finite objective at probe of parameter index {i}")
            g[i] = (up - dn) / (2.0 * fd_step)
        return g

    grad = gradient_fn or fd
    for t in range(1, iterations + 1):
        fx = float(value_fn(x))
        values.append(fx)
        if not math.isfinite(fx) or fx > divergence_threshold:
            diverged = True
            break
        x, m, v = _adam_step(x, grad(x), m, v, t, learning_rate)
    values.append(float(value_fn(x)))
    return x, np.array(values), diverged


def optimize(init_params, seq: RenderedSequence, cfg: ObjectiveConfig,
             evaluator: ObjectiveEvaluator | None = None) -> OptimizeResult:
    """Adam on the composite objective with a full per-iteration trace.

    Deterministic for fixed inputs. A total above the divergence threshold
    terminates early with the trace flagged.
    """
    ev = evaluator if evaluator is not None else ObjectiveEvaluator(seq, cfg)
    template = init_params.copy()
    from_vector = type(init_params).from_vector
    x = init_params.to_vector()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trace = []
    diverged = False
    it = 0
    for it in range(cfg.iterations):
        params = from_vector(x, template)
        bd = ev.breakdown(params)
        trace.append(TraceRow(it, bd.photometric, bd.smoothness, bd.fb, bd.id, bd.cyc,
                              bd.total, ev.scale_cov(params)))
        if not math.isfinite(bd.total) or bd.total > cfg.divergence_threshold:
            diverged = True
            break
        g = ev.gradient(params).to_vector()
        x, m, v = _adam_step(x, g, m, v, it + 1, cfg.learning_rate)
    params = from_vector(x, template)
    if not diverged:
        bd = ev.breakdown(params)
        trace.append(TraceRow(cfg.iterations, bd.photometric, bd.smoothness, bd.fb, bd.id,
                              bd.cyc, bd.total, ev.scale_cov(params)))
    return OptimizeResult(params, trace, diverged)


# ----- initialization ---------------------------------------------------------


def perturb_initialization(seq: RenderedSequence, pose_noise_std: float,
                           scale_noise_std: float, rng_seed: int) -> ParamSetA:
    """Ground-truth twists plus Gaussian noise; Gaussian per-frame log-scales.

    Zero stds reproduce the ground truth exactly; fixed seeds reproduce the
    same draw. The per-frame log-scales model the scale drift under test.
    """
    if pose_noise_std < 0 or scale_noise_std < 0:
        raise ValueError("noise standard deviations must be non-negative")
    rng = np.random.default_rng(rng_seed)
    n = len(seq.frames)
    log_scales = rng.normal(0.0, scale_noise_std, n)
    fwd = np.zeros((n - 1, 6))
    bwd = np.zeros((n - 1, 6))
    for i in range(n - 1):
        fwd[i] = log_map(relative_pose(seq.gt_poses, i, i + 1)).as_vector() \
            + rng.normal(0.0, pose_noise_std, 6)
        bwd[i] = log_map(relative_pose(seq.gt_poses, i + 1, i)).as_vector() \
            + rng.normal(0.0, pose_noise_std, 6)
    return ParamSetA(log_scales, fwd, bwd)


def initial_params_b(seq: RenderedSequence, cfg: ObjectiveConfig, rng_seed: int,
                     regressor_init_std: float = 0.05,
                     scale_noise_std: float = 0.1) -> ParamSetB:
    """Random small regressor weights; Gaussian per-frame log-scales."""
    rng = np.random.default_rng(rng_seed)
    n = len(seq.frames)
    f = 2 * cfg.feature_height * cfg.feature_width
    log_scales = rng.normal(0.0, scale_noise_std, n)
    weights = rng.normal(0.0, regressor_init_std, (6, f))
    bias = rng.normal(0.0, regressor_init_std, 6)
    return ParamSetB(weights, bias, log_scales)


# ----- experiment driver -------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    name: str
    constraints: tuple
    scale_series: ScaleSeries
    cov: float
    ate: SnippetATE
    depth_metrics: dict
    id_statistic: float | None
    diverged: bool
    trace: list


@dataclass
class ExperimentResult:
    records: list

    def names(self):
        seen = []
        for r in self.records:
            if r.name not in seen:
                seen.append(r.name)
        return seen

    def covs(self, name):
        return np.array([r.cov for r in self.records if r.name == name])

    def median_cov(self, name) -> float:
        return float(np.median(self.covs(name)))

    def ates(self, name):
        return np.array([r.ate.mean for r in self.records if r.name == name])

    def median_ate(self, name) -> float:
        return float(np.median(self.ates(name)))


def config_name(constraints) -> str:
    return "+".join(constraints) if constraints else "baseline"


def _derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def objective_config_from(cfg: ExperimentConfig, constraints) -> ObjectiveConfig:
    o = cfg.objective
    return ObjectiveConfig(
        constraint_weight=o.constraint_weight,
        constraints=tuple(constraints),
        smoothness_weight=o.smoothness_weight,
        photometric=PhotometricConfig(o.alpha, o.ssim_c1, o.ssim_c2),
        learning_rate=o.learning_rate,
        iterations=o.iterations,
        fd_step=o.fd_step,
        regime=o.regime,
        feature_height=o.feature_height,
        feature_width=o.feature_width,
        divergence_threshold=o.divergence_threshold,
        d_max=cfg.scene.d_max,
    )


def render_for_seed(cfg: ExperimentConfig, seed: int) -> RenderedSequence:
    """Scene, trajectory, and rendering for one experiment seed."""
    s = cfg.scene
    scene = corridor_scene(_derive_seed(seed, 0), d_max=s.d_max, n_sinusoids=s.n_sinusoids,
                           texture_amplitude=s.texture_amplitude,
                           min_frequency=s.min_frequency, max_frequency=s.max_frequency,
                           ground_y=s.ground_y, wall_x=s.wall_x, front_z=s.front_z)
    t = cfg.trajectory
    traj = forward_trajectory(t.n_frames, t.forward_velocity, t.yaw_rate, t.jitter_std,
                              rng_seed=_derive_seed(seed, 1))
    return render_sequence(scene, traj, s.intrinsics(), (s.height, s.width))


def initialization_for_seed(cfg: ExperimentConfig, seq: RenderedSequence, seed: int):
    if cfg.objective.regime == "A":
        return perturb_initialization(seq, cfg.noise.pose_noise_std,
                                      cfg.noise.scale_noise_std, _derive_seed(seed, 2))
    ocfg = objective_config_from(cfg, ())
    return initial_params_b(seq, ocfg, _derive_seed(seed, 2),
                            cfg.noise.regressor_init_std, cfg.noise.scale_noise_std)


def evaluate_run(cfg: ExperimentConfig, seq: RenderedSequence,
                 evaluator: ObjectiveEvaluator, result: OptimizeResult,
                 seed: int, constraints) -> RunRecord:
    e = cfg.evaluation
    n = len(seq.frames)
    params = result.params
    depths = np.exp(params.log_scales)[:, None, None] * np.stack(seq.gt_depths)
    ones = np.ones(depths.shape[1:], dtype=bool)
    series = scale_series([(seq.gt_depths[t], depths[t], ones) for t in range(n)],
                          min_depth=e.min_depth, max_depth=e.max_depth)
    fwd = evaluator.adjacent_forward_twists(params)
    pred_rel = [exp_map(Twist.from_vector(fwd[i])) for i in range(n - 1)]
    gt_rel = [relative_pose(seq.gt_poses, i, i + 1) for i in range(n - 1)]
    ate = snippet_ate(pred_rel, gt_rel, n, e.ate_window)
    metrics = {mode: evaluate.eigen_metrics(seq.gt_depths, list(depths), [ones] * n,
                                            mode, e.min_depth, e.max_depth)
               for mode in evaluate.SCALING_MODES}
    id_stat = result.trace[-1].id if cfg.objective.regime == "B" else None
    return RunRecord(seed, config_name(constraints), tuple(constraints), series,
                     series.cov, ate, metrics, id_stat, result.diverged, result.trace)


def run_seed(cfg: ExperimentConfig, seed: int) -> list:
    """Render, perturb, then optimize and evaluate every configuration."""
    seq = render_for_seed(cfg, seed)
    init = initialization_for_seed(cfg, seq, seed)
    configurations = list(cfg.objective.configurations)
    if () not in [tuple(c) for c in configurations]:
        configurations = [()] + configurations
    records = []
    for constraints in configurations:
        ocfg = objective_config_from(cfg, constraints)
        ev = ObjectiveEvaluator(seq, ocfg)
        result = optimize(init.copy(), seq, ocfg, evaluator=ev)
        records.append(evaluate_run(cfg, seq, ev, result, seed, constraints))
    return records


def resolve_threads(threads=None, n_tasks=None) -> int:
    if threads is None:
        env = os.environ.get("POSECONSIST_THREADS", "0")
        try:
            threads = int(env)
        except ValueError:
            threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    if n_tasks is not None:
        threads = min(threads, n_tasks)
    return max(threads, 1)


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(cfg: ExperimentConfig, seeds=None, threads=None) -> ExperimentResult:
    """Per-seed render/perturb/optimize/evaluate over all constraint configs.

    Seeds run independently (optionally in parallel processes); records are
    assembled in seed order, so output is deterministic regardless of the
    worker count.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    workers = resolve_threads(threads, len(seeds))
    if workers == 1 or len(seeds) == 1:
        per_seed = [run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed_star, [(cfg, s) for s in seeds]))
    records = [r for group in per_seed for r in group]
    return ExperimentResult(records)
