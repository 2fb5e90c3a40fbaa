"""Floor-plane pose lifting, people tracking and command fusion pipeline.

Subcommands mirror the pipeline stages; ``run`` chains them from a pipeline
config and writes a manifest of seeds, versions and file digests.

Exit codes: 0 ok, 2 config error, 3 missing upstream artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import io as pio
from .errors import ConfigError, DependencyError, NumericalError, ParameterError, PoseFusionError
from .experiment import DEFAULT_FRACTIONS, TEST_STREAM_OFFSET, SweepSettings, run_sweep, split_labels
from .fusion import FeatureSet, fit_semisupervised, fit_supervised, posterior
from .geometry import BodyModel, CameraRig, GroundPoint, estimate_homography, fuse_positions, lift_body, lift_points
from .metrics import pr_curve
from .simulate import ScenarioConfig, calibration_points, generate, sample_feature_set
from .tracking import Tracker

log = logging.getLogger("posefusion")

STAGES = ("simulate", "calibrate", "lift", "track", "fit", "predict", "eval")


# ---------------------------------------------------------------------------
# stage implementations shared by subcommands and `run`


def do_calibrate(points_path, sigma_c, out_path):
    corr, file_sigma, rig = pio.load_calibration(points_path)
    sigma = sigma_c if sigma_c is not None else (file_sigma if file_sigma is not None else 3.5)
    hom = estimate_homography(corr, sigma)
    pio.save_homography(out_path, hom, rig)
    return hom


def lift_record(rec: dict, hom, rig: CameraRig | None, sigma_p: float, body: BodyModel) -> dict:
    out = []
    for det in rec.get("detections", []):
        if "keypoints" in det:
            kps = det["keypoints"]
            if rig is None:
                kps = {k: v for k, v in kps.items() if body.heights.get(k, 1.0) == 0.0}
                if not kps:
                    raise ConfigError("body keypoints above the floor need a rig in the homography file")
                xy, cov = lift_points(hom, list(kps.values()), sigma_p)
                pos = fuse_positions([GroundPoint(*p, c) for p, c in zip(xy, cov)])
                facing = None
            else:
                pos, facing, _ = lift_body(kps, hom, rig, sigma_p, body)
        else:
            xy, cov = lift_points(hom, [[det["u"], det["v"]]], sigma_p)
            pos, facing = GroundPoint(float(xy[0, 0]), float(xy[0, 1]), cov[0]), None
        extra = {"facing": facing.tolist()} if facing is not None else {}
        out.append(pio.ground_point_record(pos, **extra))
    return {"t": rec["t"], "detections": out}


def do_lift(hom_path, sigma_p, in_path, out_path):
    hom, rig = pio.load_homography(hom_path)
    body = BodyModel()
    pio.write_jsonl(out_path, (lift_record(r, hom, rig, sigma_p, body) for r in pio.read_jsonl(in_path)))


def do_track(in_path, out_path, gate=1.5, max_misses=15):
    tracker = Tracker(gate=gate, max_misses=max_misses)
    records = []
    for rec in pio.read_jsonl(in_path):
        dets = pio.detection_set_from_record(rec)
        tracks = tracker.step(dets)
        records.append(pio.track_record(dets.time, tracks))
    pio.write_jsonl(out_path, records)


def do_fit(labeled_path, unlabeled_path, out_path, method="NB-SEM", balance=True, gain=10.0, sem_gain=True):
    labeled = pio.load_features(labeled_path).labeled()
    unlabeled = pio.load_features(unlabeled_path, keep_labels=False) if unlabeled_path else None
    if method == "NB":
        params = fit_supervised(labeled, gain=gain)
    else:
        params, trace = fit_semisupervised(
            labeled, unlabeled if unlabeled is not None else FeatureSet.empty(), balance=balance, gain=gain if sem_gain else 1.0
        )
        log.info("EM finished after %d iterations, L=%.6f", len(trace), trace[-1])
    pio.save_model(out_path, params, method)
    return params


def do_predict(model_path, in_path, out_path):
    params = pio.load_model(model_path)
    records = list(pio.read_jsonl(in_path))
    data = pio.feature_set_from_records(records)
    scores = posterior(params, data) if len(data) else np.zeros(0)
    out = []
    for rec, s in zip(records, scores):
        r = {k: rec[k] for k in ("t", "robot", "label") if k in rec}
        r["score"] = float(s)
        out.append(r)
    pio.write_jsonl(out_path, out)


def write_pr_csv(scores_path, out_path):
    recs = [r for r in pio.read_jsonl(scores_path) if "label" in r]
    precision, recall, thr = pr_curve([r["score"] for r in recs], [r["label"] for r in recs])
    with open(out_path, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, p, r in zip(thr, precision, recall):
            fh.write(f"{t:.9f},{p:.9f},{r:.9f}\n")


def do_sweep(scenario: ScenarioConfig, fractions, seeds, out_path, settings=SweepSettings(), n_jobs=1):
    result = run_sweep(scenario, fractions, seeds, settings, n_jobs)
    Path(out_path).write_text(result.to_csv())
    return result


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineConfig:
    out: Path
    seed: int
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    scenario_path: Path | None = None
    calibration: Path | None = None
    homography: Path | None = None
    detections: Path | None = None
    features: Path | None = None
    model: Path | None = None
    fo_fraction: float = 0.02
    robot: int = 0
    sigma_p: float | None = None
    sigma_c: float | None = None
    gate: float = 1.5
    fractions: tuple = DEFAULT_FRACTIONS
    n_seeds: int = 20
    sweep: SweepSettings = field(default_factory=SweepSettings)
    n_jobs: int = 1
    stages: tuple = STAGES

    @classmethod
    def load(cls, path, out=None, seed=None) -> "PipelineConfig":
        d = pio.read_json(path) if path else {}
        base = Path(path).parent if path else Path(".")
        version = d.pop("format_version", 1)
        if version != 1:
            raise ConfigError(f"unsupported pipeline format_version {version}")

        def ref(key):
            v = d.pop(key, None)
            if v is None:
                return None
            p = (base / v) if not Path(v).is_absolute() else Path(v)
            if not p.exists():
                raise ConfigError(f"{key} file {p} does not exist")
            return p

        kwargs = {}
        for key in ("calibration", "homography", "detections", "features", "model"):
            kwargs[key] = ref(key)
        scenario_path = ref("scenario")
        if scenario_path:
            kwargs["scenario"] = ScenarioConfig.load(scenario_path)
            kwargs["scenario_path"] = scenario_path
        for key in ("fo_fraction", "robot", "sigma_p", "sigma_c", "gate", "n_seeds", "n_jobs"):
            if key in d:
                kwargs[key] = d.pop(key)
        if "fractions" in d:
            kwargs["fractions"] = tuple(float(f) for f in d.pop("fractions"))
        if "sweep" in d:
            kwargs["sweep"] = SweepSettings(**d.pop("sweep"))
        file_seed = d.pop("seed", None)
        file_out = d.pop("out", None)
        if "stages" in d:
            kwargs["stages"] = tuple(d.pop("stages"))
        if d:
            raise ConfigError(f"unknown pipeline keys: {sorted(d)}")
        seed = seed if seed is not None else file_seed
        if seed is None:
            raise ConfigError("a seed is required (--seed or 'seed' in the config)")
        out = out or file_out or "out"
        return cls(out=Path(out), seed=int(seed), **kwargs)


def _need(path: Path | None, stage: str, what: str, producer: str) -> Path:
    if path is None or not Path(path).exists():
        raise DependencyError(f"stage '{stage}' needs {what}; run stage '{producer}' first or pass it in the config")
    return Path(path)


def run_pipeline(cfg: PipelineConfig, stages) -> dict:
    stages = [s.strip() for s in stages if s.strip()]
    unknown = sorted(set(stages) - set(STAGES))
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")
    order = [s for s in STAGES if s in stages]
    out = pio.ensure_dir(cfg.out)
    scenario = replace(cfg.scenario, seed=cfg.seed)
    if cfg.sigma_p is not None or cfg.sigma_c is not None:
        noise = replace(
            scenario.noise,
            **{k: v for k, v in (("sigma_p", cfg.sigma_p), ("sigma_c", cfg.sigma_c)) if v is not None},
        )
        scenario = replace(scenario, noise=noise)

    paths = {
        "calibration": cfg.calibration or out / "calibration_points.json",
        "homography": cfg.homography or out / "homography.json",
        "detections": cfg.detections or out / "detections.jsonl",
        "ground_detections": out / "ground_detections.jsonl",
        "tracks": out / "tracks.jsonl",
        "features": cfg.features or out / "features.jsonl",
        "labeled": out / "features_labeled.jsonl",
        "unlabeled": out / "features_unlabeled.jsonl",
        "model": cfg.model or out / "model.json",
        "model_nb": out / "model_nb.json",
        "test_features": out / "features_test.jsonl",
        "scores": out / "scores.jsonl",
        "table": out / "table.csv",
        "pr": out / "pr.csv",
    }
    inputs = [p for p in (cfg.scenario_path, cfg.calibration, cfg.homography, cfg.detections, cfg.features, cfg.model) if p]
    produced = []

    for stage in order:
        log.info("stage %s", stage)
        if stage == "simulate":
            truth, dets, feats = generate(scenario)
            pio.write_jsonl(out / "ground_truth.jsonl", truth)
            pio.write_jsonl(out / "detections.jsonl", dets)
            pio.write_jsonl(out / "features.jsonl", feats)
            pio.save_calibration(out / "calibration_points.json", calibration_points(scenario), scenario.noise.sigma_c, scenario.rig)
            paths["detections"] = cfg.detections or out / "detections.jsonl"
            paths["features"] = cfg.features or out / "features.jsonl"
            produced += ["ground_truth.jsonl", "detections.jsonl", "features.jsonl", "calibration_points.json"]
        elif stage == "calibrate":
            src = _need(paths["calibration"], stage, "calibration points", "simulate")
            do_calibrate(src, cfg.sigma_c, out / "homography.json")
            paths["homography"] = out / "homography.json"
            produced.append("homography.json")
        elif stage == "lift":
            hom = _need(paths["homography"], stage, "a homography", "calibrate")
            dets = _need(paths["detections"], stage, "a detection stream", "simulate")
            sigma_p = cfg.sigma_p if cfg.sigma_p is not None else scenario.noise.sigma_p
            do_lift(hom, sigma_p, dets, paths["ground_detections"])
            produced.append("ground_detections.jsonl")
        elif stage == "track":
            src = _need(paths["ground_detections"], stage, "lifted detections", "lift")
            do_track(src, paths["tracks"], cfg.gate)
            produced.append("tracks.jsonl")
        elif stage == "fit":
            src = _need(paths["features"], stage, "a feature stream", "simulate")
            data = pio.load_features(src, robot=cfg.robot)
            rng = np.random.default_rng([cfg.seed, 17])
            labeled, unlabeled = split_labels(data.labeled(), cfg.fo_fraction, rng)
            pio.write_jsonl(paths["labeled"], pio.feature_records(labeled))
            pio.write_jsonl(paths["unlabeled"], pio.feature_records(unlabeled))
            s = cfg.sweep
            do_fit(paths["labeled"], None, paths["model_nb"], "NB", gain=s.gain)
            model_out = out / "model.json"
            do_fit(paths["labeled"], paths["unlabeled"], model_out, "NB-SEM", s.balance, s.gain, s.sem_gain)
            paths["model"] = model_out
            produced += ["features_labeled.jsonl", "features_unlabeled.jsonl", "model_nb.json", "model.json"]
        elif stage == "predict":
            model = _need(paths["model"], stage, "a fitted model", "fit")
            test = sample_feature_set(scenario, cfg.sweep.test_size, cfg.seed, cfg.robot + TEST_STREAM_OFFSET)
            pio.write_jsonl(paths["test_features"], pio.feature_records(test))
            do_predict(model, paths["test_features"], paths["scores"])
            produced += ["features_test.jsonl", "scores.jsonl"]
        elif stage == "eval":
            seeds = [cfg.seed + i for i in range(cfg.n_seeds)]
            do_sweep(scenario, cfg.fractions, seeds, paths["table"], cfg.sweep, cfg.n_jobs)
            produced.append("table.csv")
            if paths["scores"].exists():
                write_pr_csv(paths["scores"], paths["pr"])
                produced.append("pr.csv")

    manifest = {
        "format_version": 1,
        "posefusion": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": cfg.seed,
        "stages": order,
        "inputs": {str(p): pio.file_digest(p) for p in inputs},
        "outputs": {name: pio.file_digest(out / name) for name in produced},
    }
    pio.write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# argument parsing


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--config", default=None, help="config file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input file {p} does not exist")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="posefusion", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="estimate the ground homography")
    p.add_argument("--points", required=True)
    p.add_argument("--sigma-c", type=float, default=None)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic scenario")

    p = sub.add_parser("lift", parents=[common], help="lift image detections to the floor")
    p.add_argument("--homography", required=True)
    p.add_argument("--sigma-p", type=float, default=15.0)
    p.add_argument("--input", required=True)

    p = sub.add_parser("track", parents=[common], help="track lifted detections")
    p.add_argument("--input", required=True)
    p.add_argument("--gate", type=float, default=1.5)
    p.add_argument("--max-misses", type=int, default=15)

    p = sub.add_parser("fit", parents=[common], help="fit the command classifier")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", default=None)
    p.add_argument("--method", choices=("NB", "NB-SEM"), default="NB-SEM")
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--gain", type=float, default=10.0)
    p.add_argument("--sem-gain", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("predict", parents=[common], help="score feature observations")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluation")
    ev = p.add_subparsers(dest="eval_command", required=True)
    q = ev.add_parser("sweep", parents=[common], help="labeled-fraction sweep")
    q.add_argument("--scenario", default=None)
    q.add_argument("--fractions", default="0.02,0.2,0.8")
    q.add_argument("--seeds", type=int, default=20)
    q.add_argument("--train-size", type=int, default=4500)
    q.add_argument("--test-size", type=int, default=5000)
    q.add_argument("--jobs", type=int, default=1)
    q = ev.add_parser("pr", parents=[common], help="PR curve points from scored, labeled records")
    q.add_argument("--input", required=True)

    p = sub.add_parser("run", parents=[common], help="run pipeline stages")
    p.add_argument("--stages", default=None, help=f"comma-separated subset of {','.join(STAGES)}")
    return parser


def _out(args, default: str) -> str:
    return args.out or default


def dispatch(args) -> int:
    cmd = args.command
    if cmd == "calibrate":
        do_calibrate(_existing(args.points), args.sigma_c, _out(args, "homography.json"))
    elif cmd == "simulate":
        scenario = ScenarioConfig.load(_existing(args.config)) if args.config else ScenarioConfig()
        seed = args.seed if args.seed is not None else scenario.seed
        cfg = PipelineConfig(out=Path(_out(args, "sim")), seed=seed, scenario=scenario)
        run_pipeline(cfg, ["simulate"])
    elif cmd == "lift":
        do_lift(_existing(args.homography), args.sigma_p, _existing(args.input), _out(args, "ground_detections.jsonl"))
    elif cmd == "track":
        do_track(_existing(args.input), _out(args, "tracks.jsonl"), args.gate, args.max_misses)
    elif cmd == "fit":
        unl = _existing(args.unlabeled) if args.unlabeled else None
        do_fit(_existing(args.labeled), unl, _out(args, "model.json"), args.method, args.balance, args.gain, args.sem_gain)
    elif cmd == "predict":
        do_predict(_existing(args.model), _existing(args.input), _out(args, "scores.jsonl"))
    elif cmd == "eval":
        if args.eval_command == "sweep":
            path = args.scenario or args.config
            scenario = ScenarioConfig.load(_existing(path)) if path else ScenarioConfig()
            fractions = [float(f) for f in args.fractions.split(",") if f]
            seed0 = args.seed if args.seed is not None else 0
            settings = SweepSettings(train_size=args.train_size, test_size=args.test_size)
            result = do_sweep(scenario, fractions, range(seed0, seed0 + args.seeds), _out(args, "table.csv"), settings, args.jobs)
            sys.stdout.write(result.to_csv())
        else:
            write_pr_csv(_existing(args.input), _out(args, "pr.csv"))
    elif cmd == "run":
        cfg = PipelineConfig.load(_existing(args.config) if args.config else None, args.out, args.seed)
        run_pipeline(cfg, args.stages.split(",") if args.stages else cfg.stages)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except DependencyError as exc:
        log.error("%s", exc)
        return 3
    except (NumericalError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return 4
    except (ConfigError, ParameterError, KeyError, FileNotFoundError) as exc:
        log.error("configuration error: %s", exc)
        return 2
    except PoseFusionError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
