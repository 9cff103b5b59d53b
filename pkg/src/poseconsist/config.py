"""Experiment configuration: strict JSON parsing with per-field validation.

Unknown keys are rejected and every invariant violation names the offending
field path, so a bad config fails fast at parse time rather than mid-run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .warp import Intrinsics

CONSTRAINT_NAMES = ("fb", "id", "cyc")


class ConfigError(ValueError):
    """Malformed configuration; message includes the field path."""


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 96
    fx: float = 100.0
    fy: float = 100.0
    cx: float | None = None  # default: (width - 1) / 2
    cy: float | None = None  # default: (height - 1) / 2
    d_max: float = 80.0
    n_sinusoids: int = 8
    texture_amplitude: float = 0.35
    min_frequency: float = 0.05
    max_frequency: float = 0.5
    ground_y: float = 1.5
    wall_x: float = 4.0
    front_z: float = 25.0

    def intrinsics(self) -> Intrinsics:
        cx = self.cx if self.cx is not None else (self.width - 1) / 2.0
        cy = self.cy if self.cy is not None else (self.height - 1) / 2.0
        return Intrinsics(self.fx, self.fy, cx, cy)


@dataclass(frozen=True)
class TrajectoryConfig:
    n_frames: int = 30
    forward_velocity: float = 0.5
    yaw_rate: float = 0.01
    jitter_std: float = 0.02


@dataclass(frozen=True)
class NoiseConfig:
    pose_noise_std: float = 0.01
    scale_noise_std: float = 0.1
    regressor_init_std: float = 0.05


@dataclass(frozen=True)
class ObjectiveSection:
    constraint_weight: float = 0.1  # JSON key "lambda"
    smoothness_weight: float = 1e-3
    alpha: float = 0.85
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2
    learning_rate: float = 0.02
    iterations: int = 60
    fd_step: float = 1e-4
    regime: str = "A"
    feature_height: int = 16
    feature_width: int = 24
    divergence_threshold: float = 1e6
    configurations: tuple = ((), ("fb",), ("cyc",))


@dataclass(frozen=True)
class EvaluationSection:
    min_depth: float = 1e-3
    max_depth: float = 80.0
    ate_window: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs/default"


# JSON keys that differ from the dataclass field name
_ALIASES = {"lambda": "constraint_weight"}
_ALIASES_BACK = {v: k for k, v in _ALIASES.items()}

_INT_FIELDS = {"height", "width", "n_sinusoids", "n_frames", "iterations",
               "feature_height", "feature_width", "ate_window"}


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _coerce(path: str, name: str, value, target_type):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, f"expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, f"expected an integer, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            _fail(path, f"expected a string, got {value!r}")
        return value
    return value


def _parse_section(cls, obj, path: str):
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in obj.items():
        name = _ALIASES.get(key, key)
        if name not in fields:
            _fail(f"{path}.{key}", "unknown key")
        if name == "configurations":
            values[name] = _parse_configurations(raw, f"{path}.{key}")
        elif name in ("cx", "cy"):
            values[name] = None if raw is None else _coerce(f"{path}.{key}", name, raw, float)
        elif name in _INT_FIELDS:
            values[name] = _coerce(f"{path}.{key}", name, raw, int)
        elif name == "regime":
            values[name] = _coerce(f"{path}.{key}", name, raw, str)
        else:
            values[name] = _coerce(f"{path}.{key}", name, raw, float)
    return cls(**values)


def _parse_configurations(raw, path: str):
    if not isinstance(raw, list):
        _fail(path, "expected a list of constraint-name lists")
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, list):
            _fail(f"{path}[{i}]", "expected a list of constraint names")
        for name in entry:
            if name not in CONSTRAINT_NAMES:
                _fail(f"{path}[{i}]", f"unknown constraint {name!r}; expected one of {CONSTRAINT_NAMES}")
        if len(set(entry)) != len(entry):
            _fail(f"{path}[{i}]", "duplicate constraint name")
        out.append(tuple(entry))
    return tuple(out)


def parse_config_dict(obj: dict) -> ExperimentConfig:
    """Strict parse: unknown keys rejected, defaults applied, invariants checked."""
    if not isinstance(obj, dict):
        raise ConfigError(f"top level: expected an object, got {type(obj).__name__}")
    known = {"scene", "trajectory", "noise", "objective", "evaluation", "seeds", "output_dir"}
    for key in obj:
        if key not in known:
            _fail(key, "unknown key")
    scene = _parse_section(SceneConfig, obj.get("scene"), "scene")
    trajectory = _parse_section(TrajectoryConfig, obj.get("trajectory"), "trajectory")
    noise = _parse_section(NoiseConfig, obj.get("noise"), "noise")
    objective = _parse_section(ObjectiveSection, obj.get("objective"), "objective")
    evaluation = _parse_section(EvaluationSection, obj.get("evaluation"), "evaluation")
    seeds = obj.get("seeds", list(ExperimentConfig().seeds))
    if not isinstance(seeds, list) or not seeds:
        _fail("seeds", "expected a non-empty list of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            _fail(f"seeds[{i}]", f"expected a non-negative integer, got {s!r}")
    if len(set(seeds)) != len(seeds):
        _fail("seeds", "duplicate seed")
    output_dir = obj.get("output_dir", ExperimentConfig().output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        _fail("output_dir", "expected a non-empty string")
    cfg = ExperimentConfig(scene, trajectory, noise, objective, evaluation,
                           tuple(seeds), output_dir)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    s = cfg.scene
    if s.height < 8 or s.width < 8:
        _fail("scene.height/width", f"images must be at least 8x8, got {s.height}x{s.width}")
    if s.fx <= 0 or s.fy <= 0:
        _fail("scene.fx/fy", "focal lengths must be positive")
    if s.d_max <= 0:
        _fail("scene.d_max", "must be positive")
    if s.n_sinusoids < 1:
        _fail("scene.n_sinusoids", "must be at least 1")
    if not 0 < s.texture_amplitude <= 0.5:
        _fail("scene.texture_amplitude", "must be in (0, 0.5]")
    if not 0 < s.min_frequency <= s.max_frequency:
        _fail("scene.min_frequency/max_frequency", "need 0 < min <= max")
    t = cfg.trajectory
    if t.n_frames < 2:
        _fail("trajectory.n_frames", "need at least 2 frames")
    if t.forward_velocity <= 0:
        _fail("trajectory.forward_velocity", "must be positive (consecutive poses must differ)")
    if t.jitter_std < 0:
        _fail("trajectory.jitter_std", "must be non-negative")
    n = cfg.noise
    if n.pose_noise_std < 0 or n.scale_noise_std < 0 or n.regressor_init_std < 0:
        _fail("noise", "standard deviations must be non-negative")
    o = cfg.objective
    if o.constraint_weight < 0:
        _fail("objective.lambda", "must be non-negative")
    if o.smoothness_weight < 0:
        _fail("objective.smoothness_weight", "must be non-negative")
    if not 0 <= o.alpha <= 1:
        _fail("objective.alpha", "must be in [0, 1]")
    if o.ssim_c1 <= 0 or o.ssim_c2 <= 0:
        _fail("objective.ssim_c1/ssim_c2", "must be positive")
    if o.learning_rate <= 0:
        _fail("objective.learning_rate", "must be positive")
    if o.iterations < 1:
        _fail("objective.iterations", "must be at least 1")
    if o.fd_step <= 0:
        _fail("objective.fd_step", "must be positive")
    if o.regime not in ("A", "B"):
        _fail("objective.regime", f"must be 'A' or 'B', got {o.regime!r}")
    if o.feature_height < 1 or o.feature_width < 1:
        _fail("objective.feature_height/feature_width", "must be positive")
    for i, names in enumerate(o.configurations):
        if "id" in names and o.regime != "B":
            _fail(f"objective.configurations[{i}]",
                  "the 'id' constraint needs a shared estimator (regime B)")
    if o.regime == "B":
        if s.height % o.feature_height or s.width % o.feature_width:
            _fail("objective.feature_height/feature_width",
                  f"regime B needs image dims divisible by the feature grid; "
                  f"got {s.height}x{s.width} vs {o.feature_height}x{o.feature_width}")
    e = cfg.evaluation
    if not 0 < e.min_depth < e.max_depth:
        _fail("evaluation.min_depth/max_depth", "need 0 < min_depth < max_depth")
    if e.ate_window < 2:
        _fail("evaluation.ate_window", "must be at least 2")


def parse_config(path) -> ExperimentConfig:
    """Load and strictly parse a JSON config file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    return parse_config_dict(obj)


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Plain JSON-ready dict; parse_config_dict(serialize_config(c)) == c."""
    out = {}
    for section in ("scene", "trajectory", "noise", "objective", "evaluation"):
        sec = getattr(cfg, section)
        d = {}
        for f in dataclasses.fields(sec):
            key = _ALIASES_BACK.get(f.name, f.name)
            value = getattr(sec, f.name)
            if f.name == "configurations":
                value = [list(v) for v in value]
            d[key] = value
        out[section] = d
    out["seeds"] = list(cfg.seeds)
    out["output_dir"] = cfg.output_dir
    return out


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the fully-resolved configuration."""
    canon = json.dumps(serialize_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
