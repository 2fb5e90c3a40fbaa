"""Synthetic workcell scenarios.

Stands in for the camera, the keypoint detector and the gesture device:
operators walk between random waypoints, each robot has a latent command
state following a two-state Markov chain, and per-robot feature observations
are drawn from a known parameter set given that state. Keypoints are
projected through the configured virtual view and perturbed with pixel
noise; lifting them back is left to the consumer.

Every random stream is derived from ``(seed, purpose, index)`` so that, for
example, the feature stream of robot 0 does not change when operators are
added.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, ParameterError
from .fusion import FeatureSet, GridSpec, ModelParams, sample_features
from .geometry import CameraRig, Correspondence, DEFAULT_KEYPOINT_HEIGHTS, ImagePoint, look_rotation, reference_rig

STREAMS = {"walkers": 0, "commands": 1, "features": 2, "detections": 3, "calibration": 4}

# lateral offsets (m) of left/right keypoints from the body center
KEYPOINT_HALF_WIDTH = {"foot": 0.10, "hip": 0.15, "shoulder": 0.20}


def default_true_params() -> ModelParams:
    """Generative parameters used by default scenarios.

    Positions are robot-relative on an 8 m x 8 m grid. Operators roam
    uniformly when idle; commands come from a few stations next to the robot,
    with the operator roughly facing it and the gesture device fairly (not
    fully) confident.
    """
    grid = GridSpec.uniform((-4.0, 4.0), (-4.0, 4.0))
    # rows = x bins, cols = y bins
    stations = np.array(
        [
            [0.02, 0.05, 0.05, 0.02],
            [0.05, 1.00, 8.00, 0.05],
            [0.05, 10.0, 0.50, 0.05],
            [0.02, 0.05, 3.00, 0.02],
        ]
    )
    alpha = np.stack([np.full(16, 1.0 / 16), stations.ravel() / stations.sum()])
    return ModelParams(
        theta=0.15,
        a=[1.3, 2.5],
        b=[2.5, 1.5],
        alpha=alpha,
        mu=[-0.1, 0.6],
        sigma=[0.45, 0.2],
        grid=grid,
    )


def default_rig() -> CameraRig:
    """Virtual view covering most of a 10 m x 8 m floor from one short side."""
    return reference_rig(
        ground_position=(-1.0, 4.0),
        virtual_rotation=look_rotation(0.0, np.deg2rad(55.0)),
        virtual_focal=800.0,
    )


@dataclass(frozen=True)
class NoiseConfig:
    sigma_p: float = 15.0
    sigma_c: float = 3.5


@dataclass(frozen=True)
class ScenarioConfig:
    workspace: tuple[float, float] = (10.0, 8.0)
    robots: tuple = ((4.5, 4.0), (6.0, 4.0))
    n_operators: int = 2
    duration: float = 300.0
    rate: float = 15.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    true_params: ModelParams = field(default_factory=default_true_params)
    seed: int = 0
    base_rate: float = 0.15
    mean_command_duration: float = 3.0
    v_max: float = 1.5
    walker_omega: float = 1.2
    rig: CameraRig = field(default_factory=default_rig)

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("rate must be positive")
        if self.duration < 0:
            raise ConfigError("duration must be nonnegative")
        if self.n_operators < 0:
            raise ConfigError("n_operators must be nonnegative")
        if not 0 < self.base_rate < 1:
            raise ConfigError("base_rate must lie in (0, 1)")
        if self.mean_command_duration * self.rate < 1:
            raise ConfigError("mean command duration must span at least one frame")
        if self.noise.sigma_p < 0 or self.noise.sigma_c < 0:
            raise ConfigError("noise scales must be nonnegative")
        W, H = self.workspace
        for r in self.robots:
            if not (0 <= r[0] <= W and 0 <= r[1] <= H):
                raise ConfigError(f"robot {r} lies outside the {W} x {H} workspace")
        object.__setattr__(self, "robots", tuple(tuple(map(float, r)) for r in self.robots))

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.rate))

    def to_dict(self) -> dict:
        p = self.true_params
        rig = self.rig
        return {
            "format_version": 1,
            "workspace": list(self.workspace),
            "robots": [list(r) for r in self.robots],
            "n_operators": self.n_operators,
            "duration": self.duration,
            "rate": self.rate,
            "noise": asdict(self.noise),
            "true_params": {
                **p.as_dict(),
                "grid": {"x_edges": p.grid.x_edges.tolist(), "y_edges": p.grid.y_edges.tolist()},
            },
            "seed": self.seed,
            "base_rate": self.base_rate,
            "mean_command_duration": self.mean_command_duration,
            "v_max": self.v_max,
            "walker_omega": self.walker_omega,
            "rig": rig_to_dict(rig),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        version = d.pop("format_version", 1)
        if version != 1:
            raise ConfigError(f"unsupported scenario format_version {version}")
        kwargs = {}
        for key in ("duration", "rate", "seed", "base_rate", "mean_command_duration", "v_max", "walker_omega"):
            if key in d:
                kwargs[key] = d.pop(key)
        if "n_operators" in d:
            kwargs["n_operators"] = int(d.pop("n_operators"))
        if "workspace" in d:
            kwargs["workspace"] = tuple(d.pop("workspace"))
        if "robots" in d:
            kwargs["robots"] = tuple(tuple(r) for r in d.pop("robots"))
        if "noise" in d:
            kwargs["noise"] = NoiseConfig(**d.pop("noise"))
        if "true_params" in d:
            kwargs["true_params"] = params_from_dict(d.pop("true_params"))
        if "rig" in d:
            kwargs["rig"] = rig_from_dict(d.pop("rig"))
        if d:
            raise ConfigError(f"unknown scenario keys: {sorted(d)}")
        try:
            return cls(**kwargs)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def params_from_dict(d: dict) -> ModelParams:
    g = d.get("grid")
    grid = GridSpec(g["x_edges"], g["y_edges"]) if g else GridSpec.uniform((-4.0, 4.0), (-4.0, 4.0))
    return ModelParams(d["theta"], d["a"], d["b"], d["alpha"], d["mu"], d["sigma"], grid)


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "focal": rig.focal,
        "principal_point": list(rig.principal_point),
        "source_size": list(rig.source_size),
        "source_model": rig.source_model,
        "max_polar_angle": rig.max_polar_angle,
        "height_above_ground": rig.height_above_ground,
        "ground_position": list(rig.ground_position),
        "virtual_rotation": np.asarray(rig.virtual_rotation).tolist(),
        "virtual_focal": rig.virtual_focal,
        "virtual_principal_point": list(rig.virtual_principal_point),
        "virtual_size": list(rig.virtual_size),
    }


def rig_from_dict(d: dict) -> CameraRig:
    d = dict(d)
    for key in ("principal_point", "source_size", "ground_position", "virtual_principal_point", "virtual_size"):
        if key in d:
            d[key] = tuple(d[key])
    if "virtual_rotation" in d:
        d["virtual_rotation"] = np.asarray(d["virtual_rotation"], dtype=float)
    elif "view" in d:
        view = d.pop("view")
        d["virtual_rotation"] = look_rotation(np.deg2rad(view["azimuth_deg"]), np.deg2rad(view["tilt_deg"]))
    return CameraRig(**d)


def _rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[stream], int(index)])


def orientation_feature(operator_pos, operator_facing, robot_pos) -> float:
    """Cosine between the facing direction and the direction to the robot."""
    to_robot = np.asarray(robot_pos, dtype=float) - np.asarray(operator_pos, dtype=float)
    n = np.linalg.norm(to_robot)
    if n <= 1e-12:
        raise ParameterError("operator and robot positions coincide; direction undefined")
    facing = np.asarray(operator_facing, dtype=float)
    facing = facing / np.linalg.norm(facing)
    return float(np.clip(facing @ to_robot / n, -1.0, 1.0))


def command_states(config: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Two-state Markov chain with stationary probability ``base_rate``."""
    p_off = 1.0 / (config.mean_command_duration * config.rate)
    p_on = p_off * config.base_rate / (1.0 - config.base_rate)
    u = rng.random(n)
    states = np.empty(n, dtype=int)
    c = int(rng.random() < config.base_rate)
    for t in range(n):
        states[t] = c
        c = int(u[t] >= p_off) if c else int(u[t] < p_on)
    return states


def sample_feature_set(config: ScenarioConfig, n: int, seed: int | None = None, robot: int = 0) -> FeatureSet:
    """Labeled feature observations for one robot, exactly as ``generate`` emits them."""
    seed = config.seed if seed is None else seed
    states = command_states(config, n, _rng(seed, "commands", robot))
    return sample_features(config.true_params, n, _rng(seed, "features", robot), classes=states, truncate_fo=True)


def calibration_points(config: ScenarioConfig, spacing: float = 1.0) -> list[Correspondence]:
    """Floor markers on a regular grid, observed with ``sigma_c`` pixel noise.

    Only markers that land inside the virtual view are returned.
    """
    W, H = config.workspace
    gx, gy = np.meshgrid(np.arange(0.0, W + 1e-9, spacing), np.arange(0.0, H + 1e-9, spacing))
    ground = np.column_stack([gx.ravel(), gy.ravel()])
    uv, front = config.rig.project_world(np.column_stack([ground, np.zeros(len(ground))]))
    noise = _rng(config.seed, "calibration").normal(0.0, config.noise.sigma_c, uv.shape)
    vw, vh = config.rig.virtual_size
    keep = front & np.all((uv >= 0) & (uv <= [vw - 1, vh - 1]), axis=1)
    uv = uv + noise
    return [Correspondence(ImagePoint(float(u), float(v)), (float(x), float(y))) for (u, v), (x, y) in zip(uv[keep], ground[keep])]


class _Walker:
    def __init__(self, config: ScenarioConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        self.pos = self._waypoint()
        self.vel = np.zeros(2)
        self.target = self._waypoint()
        angle = rng.uniform(0, 2 * np.pi)
        self.facing = np.array([np.cos(angle), np.sin(angle)])

    def _waypoint(self) -> np.ndarray:
        W, H = self.cfg.workspace
        return self.rng.uniform([0.5, 0.5], [W - 0.5, H - 0.5])

    def advance(self, dt: float):
        w = self.cfg.walker_omega
        if np.linalg.norm(self.target - self.pos) < 0.3:
            self.target = self._waypoint()
        acc = w * w * (self.target - self.pos) - 2.0 * w * self.vel
        self.vel = self.vel + acc * dt
        speed = np.linalg.norm(self.vel)
        if speed > self.cfg.v_max:
            self.vel *= self.cfg.v_max / speed
        self.pos = self.pos + self.vel * dt
        if np.linalg.norm(self.vel) > 0.1:
            self.facing = self.vel / np.linalg.norm(self.vel)


def body_keypoints(pos, facing) -> dict:
    """World-space (x, y, z) of the modeled keypoints of a standing person."""
    pos = np.asarray(pos, dtype=float)
    facing = np.asarray(facing, dtype=float)
    # left-to-right axis: facing rotated by +90 degrees
    across = np.array([-facing[1], facing[0]])
    out = {}
    for part, half in KEYPOINT_HALF_WIDTH.items():
        h = DEFAULT_KEYPOINT_HEIGHTS[f"left_{part}"]
        for side, sign in (("left", -1.0), ("right", 1.0)):
            xy = pos + sign * half * across
            out[f"{side}_{part}"] = np.array([xy[0], xy[1], h])
    return out


@dataclass
class Frame:
    time: float
    ground_truth: dict
    detections: dict
    features: list


class ScenarioGenerator:
    """Frame-by-frame generator; iterate it or call ``generate``."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        n = config.n_frames
        seed = config.seed
        self.walkers = [_Walker(config, _rng(seed, "walkers", k)) for k in range(config.n_operators)]
        self.features = [sample_feature_set(config, n, seed, r) for r in range(len(config.robots))]
        self.det_rng = _rng(seed, "detections")

    def __iter__(self) -> Iterator[Frame]:
        cfg = self.config
        dt = 1.0 / cfg.rate
        rig = cfg.rig
        W, H = rig.virtual_size
        for k in range(cfg.n_frames):
            t = round(k * dt, 9)
            if k:
                for w in self.walkers:
                    w.advance(dt)
            operators = []
            dets = []
            for i, w in enumerate(self.walkers):
                operators.append(
                    {
                        "id": i,
                        "position": w.pos.tolist(),
                        "velocity": w.vel.tolist(),
                        "facing": w.facing.tolist(),
                        "f_o_geom": [orientation_feature(w.pos, w.facing, r) for r in cfg.robots],
                    }
                )
                kps = body_keypoints(w.pos, w.facing)
                names = list(kps)
                uv, front = rig.project_world(np.array([kps[n] for n in names]))
                noise = self.det_rng.normal(0.0, 1.0, uv.shape) * cfg.noise.sigma_p
                visible = front.all() and np.all((uv >= 0) & (uv <= [W - 1, H - 1]))
                if visible:
                    uv = uv + noise
                    dets.append({"truth_id": i, "keypoints": {n: uv[j].tolist() for j, n in enumerate(names)}})
            truth = {
                "t": t,
                "operators": operators,
                "robots": [
                    {"id": r, "position": list(p), "command": int(self.features[r].label[k])}
                    for r, p in enumerate(cfg.robots)
                ],
            }
            feats = []
            for r, fs in enumerate(self.features):
                feats.append(
                    {
                        "t": t,
                        "robot": r,
                        "f_g": float(fs.f_g[k]),
                        "f_xy": fs.f_xy[k].tolist(),
                        "f_o": float(fs.f_o[k]),
                        "label": int(fs.label[k]),
                    }
                )
            yield Frame(t, truth, {"t": t, "detections": dets}, feats)


def generate(config: ScenarioConfig):
    """Run a scenario; returns (ground truth, detection, feature) record lists."""
    truth, dets, feats = [], [], []
    for frame in ScenarioGenerator(config):
        truth.append(frame.ground_truth)
        dets.append(frame.detections)
        feats.extend(frame.features)
    return truth, dets, feats
