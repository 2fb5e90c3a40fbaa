"""File formats: JSON-lines streams, calibration/homography files, model files.

All structured files are JSON objects carrying ``format_version``.

Calibration points::

    {"format_version": 1, "sigma_c": 3.5, "rig": {...},
     "correspondences": [{"image": [u, v], "ground": [x, y]}, ...]}

Homography::

    {"format_version": 1, "homography": [[...], [...], [...]],
     "covariance": [[...] * 9] | null, "rig": {...} | null}

Model::

    {"format_version": 1, "method": "NB-SEM",
     "grid": {"x_edges": [...], "y_edges": [...]},
     "params": {"theta": ..., "a": [..], "b": [..], "alpha": [[..], [..]],
                "mu": [..], "sigma": [..]}}
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError
from .fusion import FeatureSet, GridSpec, ModelParams
from .geometry import CameraRig, Correspondence, GroundPoint, Homography, ImagePoint
from .simulate import rig_from_dict, rig_to_dict
from .tracking import DetectionSet, Track

FORMAT_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def read_jsonl(path) -> Iterator[dict]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc})") from exc


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(_dumps(r) + "\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check_version(d: dict, what: str) -> None:
    v = d.get("format_version", FORMAT_VERSION)
    if v != FORMAT_VERSION:
        raise ConfigError(f"unsupported {what} format_version {v}")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# calibration / homography ---------------------------------------------------


def load_calibration(path):
    """Returns (correspondences, sigma_c or None, rig or None)."""
    d = read_json(path)
    _check_version(d, "calibration")
    try:
        corr = [Correspondence(ImagePoint(*c["image"]), tuple(c["ground"])) for c in d["correspondences"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed correspondence list") from exc
    rig = rig_from_dict(d["rig"]) if d.get("rig") else None
    return corr, d.get("sigma_c"), rig


def save_calibration(path, correspondences, sigma_c=None, rig: CameraRig | None = None) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "sigma_c": sigma_c,
            "rig": rig_to_dict(rig) if rig else None,
            "correspondences": [
                {"image": [c.image.u, c.image.v], "ground": list(c.ground)} for c in correspondences
            ],
        },
    )


def save_homography(path, hom: Homography, rig: CameraRig | None = None) -> None:
    write_json(
        path,
        {
            "format_version": FORMAT_VERSION,
            "homography": hom.H.tolist(),
            "covariance": hom.cov.tolist(),
            "rig": rig_to_dict(rig) if rig else None,
        },
    )


def load_homography(path):
    """Returns (Homography, rig or None)."""
    d = read_json(path)
    _check_version(d, "homography")
    if "homography" not in d:
        raise ConfigError(f"{path}: missing 'homography'")
    cov = d.get("covariance")
    hom = Homography(np.asarray(d["homography"], dtype=float), np.zeros((9, 9)) if cov is None else cov)
    rig = rig_from_dict(d["rig"]) if d.get("rig") else None
    return hom, rig


# streams --------------------------------------------------------------------


def ground_point_record(p: GroundPoint, **extra) -> dict:
    return {"x": p.x, "y": p.y, "cov": np.asarray(p.cov).tolist(), **extra}


def detection_set_from_record(rec: dict) -> DetectionSet:
    dets = tuple(
        GroundPoint(float(d["x"]), float(d["y"]), np.asarray(d.get("cov", np.zeros((2, 2))), dtype=float))
        for d in rec.get("detections", [])
    )
    return DetectionSet(float(rec["t"]), dets)


def track_record(t: float, tracks: Iterable[Track]) -> dict:
    return {
        "t": t,
        "tracks": [
            {
                "id": tr.id,
                "x": float(tr.state[0]),
                "y": float(tr.state[1]),
                "vx": float(tr.state[2]),
                "vy": float(tr.state[3]),
                "cov": tr.cov.tolist(),
            }
            for tr in tracks
        ],
    }


def feature_set_from_records(records: Iterable[dict], keep_labels: bool = True) -> FeatureSet:
    records = list(records)
    if not records:
        return FeatureSet.empty()
    labels = [r.get("label") for r in records] if keep_labels else [None] * len(records)
    return FeatureSet(
        [r["f_g"] for r in records],
        [r["f_xy"] for r in records],
        [r["f_o"] for r in records],
        [-1 if c is None else int(c) for c in labels],
    )


def feature_records(data: FeatureSet, extra: list[dict] | None = None) -> list[dict]:
    out = []
    for i, (g, xy, o, c) in enumerate(zip(data.f_g, data.f_xy, data.f_o, data.label)):
        rec = dict(extra[i]) if extra else {}
        rec.update({"f_g": float(g), "f_xy": [float(xy[0]), float(xy[1])], "f_o": float(o)})
        if c >= 0:
            rec["label"] = int(c)
        else:
            rec.pop("label", None)
        out.append(rec)
    return out


def load_features(path, robot: int | None = None, keep_labels: bool = True) -> FeatureSet:
    recs = read_jsonl(path)
    if robot is not None:
        recs = (r for r in recs if r.get("robot", robot) == robot)
    return feature_set_from_records(recs, keep_labels)


# model ----------------------------------------------------------------------


def model_to_dict(params: ModelParams, method: str = "NB-SEM") -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "method": method,
        "grid": {"x_edges": params.grid.x_edges.tolist(), "y_edges": params.grid.y_edges.tolist()},
        "params": params.as_dict(),
    }


def model_from_dict(d: dict) -> ModelParams:
    _check_version(d, "model")
    try:
        g = d["grid"]
        p = d["params"]
        return ModelParams(p["theta"], p["a"], p["b"], p["alpha"], p["mu"], p["sigma"], GridSpec(g["x_edges"], g["y_edges"]))
    except KeyError as exc:
        raise ConfigError(f"model file lacks {exc}") from exc


def save_model(path, params: ModelParams, method: str = "NB-SEM") -> None:
    write_json(path, model_to_dict(params, method))


def load_model(path) -> ModelParams:
    return model_from_dict(read_json(path))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
