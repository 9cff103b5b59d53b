"""Pose-consistency losses over raw twist estimates.

Three constraints, each zero exactly when the estimates agree:
forward/backward inversion, no-motion on duplicated frames, and cycle
closure of a 2-step chain against the direct 2-step estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie import Twist, compose, exp_map, inverse, pose_distance


@dataclass(frozen=True)
class PosePairEstimate:
    """Both-direction estimates for a frame pair (t, t+n), n in {-1, +1}."""

    forward: Twist
    backward: Twist
    n: int = 1

    def __post_init__(self):
        if self.n == 0:
            raise ValueError("frame offset n must be nonzero")


@dataclass(frozen=True)
class TripleEstimate:
    """Estimates around a middle frame: t-n -> t, t -> t+n, and direct t-n -> t+n."""

    prev_to_mid: Twist
    mid_to_next: Twist
    prev_to_next: Twist


def forward_backward_loss(pair: PosePairEstimate) -> float:
    """Distance between the backward estimate and the inverted forward one."""
    return pose_distance(exp_map(pair.backward), inverse(exp_map(pair.forward)))


def identity_loss(self_estimate: Twist) -> float:
    """L1 norm of the twist predicted on a duplicated-frame input."""
    return float(np.abs(self_estimate.axis_angle).sum() + np.abs(self_estimate.translation).sum())


def cycle_loss(triple: TripleEstimate) -> float:
    """Distance between the direct 2-step estimate and the composed chain.

    The chain applies prev_to_mid first, so the comparison is
    d(exp(prev_to_next), exp(mid_to_next) * exp(prev_to_mid)).
    """
    chained = compose(exp_map(triple.mid_to_next), exp_map(triple.prev_to_mid))
    return pose_distance(exp_map(triple.prev_to_next), chained)
