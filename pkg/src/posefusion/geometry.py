"""Image to ground-plane geometry.

Covers three things:

* view synthesis: mapping every pixel of a virtual rectilinear (pinhole)
  camera to a pixel of the panoramic source image, plus bilinear sampling;
* ground-plane homographies: normalized DLT estimation with a first-order
  covariance of the 9 matrix entries, and lifting of image points to metric
  ground coordinates with propagated uncertainty;
* a small body model that lifts keypoints known to sit at a nominal height
  above the floor (hips, shoulders) and derives a body orientation.

Coordinate conventions
----------------------
World frame: x, y span the floor, z points up (meters).
Source camera frame: looks straight down, x_s = x_w, y_s = -y_w, z_s = -z_w.
Virtual camera frames follow the OpenCV convention (x right, y down, z
forward) and are related to the source frame by ``rig.virtual_rotation``,
which maps virtual-frame directions into the source frame.
Images are indexed ``image[v, u]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegeneracyError,
    GeometryError,
    HorizonError,
    OrientationUndefinedError,
    ParameterError,
    SamplingError,
)

HORIZON_EPS = 1e-9
DEGENERACY_RATIO = 1e-10
ROTATION_TOL = 1e-9

# Nominal keypoint heights above the floor (meters) for the body model.
DEFAULT_KEYPOINT_HEIGHTS = {
    "left_foot": 0.0,
    "right_foot": 0.0,
    "left_hip": 1.00,
    "right_hip": 1.00,
    "left_shoulder": 1.45,
    "right_shoulder": 1.45,
}

# world-from-source rotation for a camera looking straight down
R_WORLD_SOURCE = np.diag([1.0, -1.0, -1.0])


# ---------------------------------------------------------------------------
# Basic types


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float

    def __array__(self, dtype=None, copy=None):
        return np.array([self.u, self.v], dtype=dtype or float)


@dataclass(frozen=True)
class GroundPoint:
    x: float
    y: float
    cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.all(np.isfinite(cov)) or abs(cov[0, 1] - cov[1, 0]) > 1e-9 * (1 + np.abs(cov).max()):
            raise ParameterError("ground point covariance must be finite and symmetric")
        cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def sigma(self) -> float:
        """1-sigma extent along the major axis of the error ellipse."""
        return float(np.sqrt(max(np.linalg.eigvalsh(self.cov)[-1], 0.0)))


@dataclass(frozen=True)
class Correspondence:
    image: ImagePoint
    ground: tuple[float, float]


def check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ParameterError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        raise ParameterError("rotation must be orthonormal with determinant +1")
    return R


def look_rotation(azimuth: float, tilt: float) -> np.ndarray:
    """Virtual-camera rotation (source-from-virtual) for a given view direction.

    ``tilt`` is the angle of the optical axis from the nadir, ``azimuth`` the
    world heading of the axis (radians, counter-clockwise from +x). The image
    x axis stays horizontal.
    """
    d = np.array([np.sin(tilt) * np.cos(azimuth), np.sin(tilt) * np.sin(azimuth), -np.cos(tilt)])
    right = np.array([np.sin(azimuth), -np.cos(azimuth), 0.0])
    down = np.cross(d, right)
    R_world_virtual = np.column_stack([right, down, d])
    return R_WORLD_SOURCE.T @ R_world_virtual


@dataclass(frozen=True)
class CameraRig:
    """Panoramic source camera mounted above the floor plus one virtual view."""

    focal: float = 700.0
    principal_point: tuple[float, float] = (1231.5, 1027.5)
    source_size: tuple[int, int] = (2464, 2056)
    source_model: str = "equidistant"
    max_polar_angle: float = np.pi / 2
    height_above_ground: float = 3.5
    ground_position: tuple[float, float] = (0.0, 0.0)
    virtual_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    virtual_focal: float = 700.0
    virtual_principal_point: tuple[float, float] = (1231.5, 1027.5)
    virtual_size: tuple[int, int] = (2464, 2056)

    def __post_init__(self):
        R = check_rotation(self.virtual_rotation)
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "virtual_rotation", R)
        if self.height_above_ground <= 0:
            raise ParameterError("camera height must be positive")
        if self.focal <= 0 or self.virtual_focal <= 0:
            raise ParameterError("focal lengths must be positive")
        if self.source_model not in SOURCE_MODELS:
            raise ParameterError(f"unknown source model {self.source_model!r}")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        gx, gy = self.ground_position
        return np.array([gx, gy, self.height_above_ground])

    def world_from_virtual(self) -> np.ndarray:
        return R_WORLD_SOURCE @ self.virtual_rotation

    def virtual_intrinsics(self) -> np.ndarray:
        cx, cy = self.virtual_principal_point
        f = self.virtual_focal
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    def project_world(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Project world points (..., 3) into the virtual view.

        Returns pixel coordinates (..., 2) and a mask of points in front of
        the camera.
        """
        P = np.asarray(points, dtype=float)
        d = (P - self.center) @ self.world_from_virtual()
        front = d[..., 2] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = self.virtual_focal * d[..., :2] / d[..., 2:3] + np.asarray(self.virtual_principal_point)
        return uv, front

    def ground_homography(self) -> np.ndarray:
        """Exact image-to-ground homography of the virtual view."""
        C = self.center
        G = self.virtual_intrinsics() @ self.world_from_virtual().T @ np.array(
            [[1.0, 0.0, -C[0]], [0.0, 1.0, -C[1]], [0.0, 0.0, -C[2]]]
        )
        H = np.linalg.inv(G)
        return H / H[2, 2]


def reference_rig(**overrides) -> CameraRig:
    """Overhead rig used for the uncertainty study.

    3.5 m mounting height, 2464x2056 px images and a virtual view looking
    along +x, tilted 56 degrees from the nadir so objects between roughly 2 m
    and 14 m ground distance are in view.
    """
    kwargs = dict(
        focal=700.0,
        height_above_ground=3.5,
        ground_position=(0.0, 0.0),
        virtual_rotation=look_rotation(0.0, np.deg2rad(56.0)),
        virtual_focal=1500.0,
    )
    kwargs.update(overrides)
    return CameraRig(**kwargs)


# ---------------------------------------------------------------------------
# View synthesis


def _project_equidistant(d: np.ndarray, focal: float, max_theta: float):
    norm = np.linalg.norm(d, axis=-1)
    theta = np.arccos(np.clip(d[..., 2] / norm, -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    r = focal * theta
    uv = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    return uv, theta <= max_theta + 1e-12


def _project_pinhole(d: np.ndarray, focal: float, max_theta: float):
    z = d[..., 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = focal * d[..., :2] / np.where(front, z, 1.0)[..., None]
    return uv, front


SOURCE_MODELS = {
    "equidistant": _project_equidistant,
    "pinhole": _project_pinhole,
}


def synthesize_view_mapping(rig: CameraRig, out_size: tuple[int, int]):
    """Source pixel coordinates for every pixel of the virtual view.

    Parameters
    ----------
    rig : CameraRig
    out_size : (W, H) of the virtual image

    Returns
    -------
    map_u, map_v : (H, W) float arrays of source coordinates
    valid : (H, W) bool array; False where the ray leaves the source field
        of view or lands outside the source image
    """
    W, H = out_size
    if W < 1 or H < 1:
        raise ParameterError("output size must be at least 1x1")
    check_rotation(rig.virtual_rotation)
    u, v = np.meshgrid(np.arange(W, dtype=float), np.arange(H, dtype=float))
    cx, cy = rig.virtual_principal_point
    rays = np.stack([(u - cx) / rig.virtual_focal, (v - cy) / rig.virtual_focal, np.ones_like(u)], axis=-1)
    d = rays @ rig.virtual_rotation.T
    uv, valid = SOURCE_MODELS[rig.source_model](d, rig.focal, rig.max_polar_angle)
    map_u = uv[..., 0] + rig.principal_point[0]
    map_v = uv[..., 1] + rig.principal_point[1]
    sw, sh = rig.source_size
    valid &= (map_u >= 0) & (map_u <= sw - 1) & (map_v >= 0) & (map_v <= sh - 1)
    return map_u, map_v, valid


def sample_bilinear(image, p) -> np.ndarray | float:
    """Bilinearly interpolated color of ``image`` at fractional point ``p``."""
    img = np.asarray(image)
    u, v = (p.u, p.v) if isinstance(p, ImagePoint) else (float(p[0]), float(p[1]))
    h, w = img.shape[:2]
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        raise SamplingError(f"point ({u}, {v}) outside image of size {w}x{h}")
    u0, v0 = min(int(np.floor(u)), max(w - 2, 0)), min(int(np.floor(v)), max(h - 2, 0))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    a, b = u - u0, v - v0
    out = (
        img[v0, u0] * (1 - a) * (1 - b)
        + img[v0, u1] * a * (1 - b)
        + img[v1, u0] * (1 - a) * b
        + img[v1, u1] * a * b
    )
    return out if np.ndim(out) else float(out)


def remap_bilinear(image, map_u, map_v, valid=None, fill=0.0) -> np.ndarray:
    """Vectorized bilinear lookup; invalid pixels receive ``fill``."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    inside = (map_u >= 0) & (map_u <= w - 1) & (map_v >= 0) & (map_v <= h - 1)
    if valid is not None:
        inside &= valid
    u = np.where(inside, map_u, 0.0)
    v = np.where(inside, map_v, 0.0)
    u0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    v0 = np.clip(np.floor(v).astype(int), 0, max(h - 2, 0))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = u - u0
    b = v - v0
    if img.ndim == 3:
        a, b = a[..., None], b[..., None]
    out = (
        img[v0, u0] * (1 - a) * (1 - b)
        + img[v0, u1] * a * (1 - b)
        + img[v1, u0] * (1 - a) * b
        + img[v1, u1] * a * b
    )
    mask = inside[..., None] if img.ndim == 3 else inside
    return np.where(mask, out, fill)


def synthesize_view(image, rig: CameraRig, out_size=None, fill=0.0) -> np.ndarray:
    out_size = out_size or rig.virtual_size
    map_u, map_v, valid = synthesize_view_mapping(rig, out_size)
    return remap_bilinear(image, map_u, map_v, valid, fill=fill)


# ---------------------------------------------------------------------------
# Homographies


@dataclass(frozen=True)
class Homography:
    """Image (px) to ground (m) homography with 9x9 entry covariance (row-major)."""

    H: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.zeros((9, 9)))

    def __post_init__(self):
        H = np.array(self.H, dtype=float).reshape(3, 3)
        cov = np.array(self.cov, dtype=float).reshape(9, 9)
        if not np.all(np.isfinite(H)):
            raise ParameterError("homography must be finite")
        if abs(H[2, 2]) > 1e-300:
            scale = H[2, 2]
            H = H / scale
            cov = cov / scale**2
        if abs(np.linalg.det(H)) <= 1e-12:
            raise DegeneracyError("homography is singular")
        if np.abs(cov - cov.T).max() > 1e-9 * (1.0 + np.abs(cov).max()):
            raise ParameterError("homography covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        H.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "cov", cov)

    def inverse_matrix(self) -> np.ndarray:
        Hi = np.linalg.inv(self.H)
        return Hi / Hi[2, 2]


def dehomogenize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., :-1] / x[..., -1:]


def hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and mean distance to sqrt(2).

    Works on (..., N, 2) and returns (..., 3, 3).
    """
    mean = pts.mean(axis=-2)
    dist = np.linalg.norm(pts - mean[..., None, :], axis=-1).mean(axis=-1)
    s = np.sqrt(2.0) / dist
    T = np.zeros(pts.shape[:-2] + (3, 3))
    T[..., 0, 0] = s
    T[..., 1, 1] = s
    T[..., 0, 2] = -s * mean[..., 0]
    T[..., 1, 2] = -s * mean[..., 1]
    T[..., 2, 2] = 1.0
    return T


def _apply_affine(T, pts):
    return pts @ np.swapaxes(T[..., :2, :2], -1, -2) + T[..., None, :2, 2]


def _design_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT rows for src -> dst, batched over leading dims; shape (..., 2N, 9)."""
    n = src.shape[-2]
    X = np.concatenate([src, np.ones(src.shape[:-1] + (1,))], axis=-1)
    A = np.zeros(src.shape[:-2] + (2 * n, 9))
    A[..., 0::2, 0:3] = X
    A[..., 0::2, 6:9] = -dst[..., 0:1] * X
    A[..., 1::2, 3:6] = X
    A[..., 1::2, 6:9] = -dst[..., 1:2] * X
    return A


def dlt_homography(image_pts, ground_pts, check: bool = True) -> np.ndarray:
    """Normalized DLT estimate of the image-to-ground map, H[2,2] = 1.

    Accepts (N, 2) arrays or batches (B, N, 2).
    """
    img = np.asarray(image_pts, dtype=float)
    gnd = np.asarray(ground_pts, dtype=float)
    if img.shape != gnd.shape or img.shape[-1] != 2:
        raise ParameterError("image and ground points must both be (N, 2)")
    if img.shape[-2] < 4:
        raise ParameterError(f"need at least 4 correspondences, got {img.shape[-2]}")
    T1 = hartley_normalization(img)
    T2 = hartley_normalization(gnd)
    A = _design_matrix(_apply_affine(T1, img), _apply_affine(T2, gnd))
    # full_matrices keeps the null vector when A is only 8 x 9 (four points)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if check and np.any(s[..., 7] / s[..., 0] < DEGENERACY_RATIO):
        raise DegeneracyError("degenerate correspondence configuration")
    Hn = Vt[..., -1, :].reshape(Vt.shape[:-2] + (3, 3))
    H = np.linalg.inv(T2) @ Hn @ T1
    return H / H[..., 2:3, 2:3]


def dlt_jacobian(image_pts, ground_pts) -> np.ndarray:
    """Jacobian (9, 2N) of the normalized DLT estimate w.r.t. image coordinates.

    Columns are ordered u_0, v_0, u_1, v_1, ... The Hartley transforms are
    held fixed; at exact data the estimate does not depend on them, so this
    is the full first-order derivative.
    """
    img = np.asarray(image_pts, dtype=float)
    gnd = np.asarray(ground_pts, dtype=float)
    n = img.shape[0]
    T1 = hartley_normalization(img)
    T2 = hartley_normalization(gnd)
    xs = _apply_affine(T1, img)
    ys = _apply_affine(T2, gnd)
    A = _design_matrix(xs, ys)
    M = A.T @ A
    lam, V = np.linalg.eigh(M)
    h = V[:, 0]
    # pseudo-inverse of (M - lam0 I) restricted to the complement of h
    P = (V[:, 1:] / (lam[1:] - lam[0])) @ V[:, 1:].T
    Ah = A @ h

    Jh = np.empty((9, 2 * n))
    for i in range(n):
        yx, yy = ys[i]
        for k in range(2):
            dx = np.zeros(3)
            dx[k] = T1[k, k]
            r1 = np.concatenate([dx, np.zeros(3), -yx * dx])
            r2 = np.concatenate([np.zeros(3), dx, -yy * dx])
            dM_h = r1 * Ah[2 * i] + r2 * Ah[2 * i + 1] + A[2 * i] * (r1 @ h) + A[2 * i + 1] * (r2 @ h)
            Jh[:, 2 * i + k] = -P @ dM_h

    # H = T2^-1 Hn T1, row-major vec(A X B) = (A kron B^T) vec(X)
    J_lin = np.kron(np.linalg.inv(T2), T1.T)
    Hvec = J_lin @ h
    h22 = Hvec[8]
    J_scale = np.eye(9) / h22
    J_scale[:, 8] -= Hvec / h22**2
    return J_scale @ J_lin @ Jh


def estimate_homography(correspondences: Sequence[Correspondence], sigma_c: float) -> Homography:
    """DLT homography from image/ground correspondences with entry covariance.

    Image coordinates are assumed to carry i.i.d. isotropic noise of
    ``sigma_c`` pixels; ground coordinates are exact.
    """
    if len(correspondences) < 4:
        raise ParameterError(f"need at least 4 correspondences, got {len(correspondences)}")
    img = np.array([[c.image.u, c.image.v] for c in correspondences], dtype=float)
    gnd = np.array([c.ground for c in correspondences], dtype=float)
    return estimate_homography_arrays(img, gnd, sigma_c)


def estimate_homography_arrays(image_pts, ground_pts, sigma_c: float) -> Homography:
    if sigma_c < 0:
        raise ParameterError("sigma_c must be nonnegative")
    H = dlt_homography(image_pts, ground_pts)
    J = dlt_jacobian(image_pts, ground_pts)
    return Homography(H, sigma_c**2 * J @ J.T)


def lift_points(hom: Homography, pts, sigma_p: float):
    """Vectorized ground lifting of image points (N, 2).

    Returns (xy (N, 2), cov (N, 2, 2)).
    """
    H = hom.H
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    w = ph @ H.T
    if np.any(np.abs(w[:, 2]) <= HORIZON_EPS):
        raise HorizonError("image point maps to the horizon (|w| <= 1e-9)")
    xy = w[:, :2] / w[:, 2:3]
    inv_w = 1.0 / w[:, 2]

    # d(xy)/d(u, v)
    Jp = (H[None, :2, :2] - xy[:, :, None] * H[None, 2:3, :2]) * inv_w[:, None, None]
    # d(xy)/d(vec H)
    Jh = np.zeros((len(pts), 2, 9))
    Jh[:, 0, 0:3] = ph * inv_w[:, None]
    Jh[:, 1, 3:6] = ph * inv_w[:, None]
    Jh[:, 0, 6:9] = -ph * (xy[:, 0] * inv_w)[:, None]
    Jh[:, 1, 6:9] = -ph * (xy[:, 1] * inv_w)[:, None]

    cov = sigma_p**2 * Jp @ np.swapaxes(Jp, 1, 2) + Jh @ hom.cov @ np.swapaxes(Jh, 1, 2)
    return xy, 0.5 * (cov + np.swapaxes(cov, 1, 2))


def lift_to_ground(hom: Homography, p, sigma_p: float) -> GroundPoint:
    """Map an image point to metric ground coordinates with covariance."""
    xy, cov = lift_points(hom, [np.asarray(p, dtype=float)], sigma_p)
    return GroundPoint(float(xy[0, 0]), float(xy[0, 1]), cov[0])


def ground_to_image(hom: Homography, g) -> np.ndarray:
    """Inverse map: ground point(s) (..., 2) to image pixels."""
    g = np.asarray(g, dtype=float)
    gh = np.concatenate([g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return dehomogenize(gh @ hom.inverse_matrix().T)


def lift_at_height(p, h: float, hom: Homography, rig: CameraRig, sigma_p: float = 0.0) -> GroundPoint:
    """Floor position below a keypoint known to be ``h`` meters above the floor."""
    zc = rig.height_above_ground
    if not 0 <= h < zc:
        raise GeometryError(f"keypoint height {h} must lie in [0, {zc})")
    hit = lift_to_ground(hom, p, sigma_p)
    s = (zc - h) / zc
    cam = np.asarray(rig.ground_position, dtype=float)
    xy = cam + (hit.xy - cam) * s
    return GroundPoint(float(xy[0]), float(xy[1]), hit.cov * s**2)


def _xy(p) -> np.ndarray:
    return p.xy if isinstance(p, GroundPoint) else np.asarray(p, dtype=float)[:2]


def body_orientation(left_shoulder, right_shoulder, left_hip, right_hip, eps: float = 1e-6) -> np.ndarray:
    """Unit facing direction on the floor from shoulder and hip positions.

    The facing vector is the left-to-right body axis rotated by -90 degrees.
    Shoulder and hip axes are averaged; a degenerate pair is dropped.
    """
    axes = []
    for left, right in ((left_shoulder, right_shoulder), (left_hip, right_hip)):
        a = _xy(right) - _xy(left)
        if np.linalg.norm(a) > eps:
            axes.append(a)
    if not axes:
        raise OrientationUndefinedError("shoulder and hip segments are both degenerate")
    across = np.sum(axes, axis=0)
    n = np.linalg.norm(across)
    if n <= eps:
        raise OrientationUndefinedError("shoulder and hip axes cancel")
    across = across / n
    return np.array([across[1], -across[0]])


@dataclass(frozen=True)
class BodyModel:
    """Nominal keypoint heights and per-keypoint confidence weights."""

    heights: dict = field(default_factory=lambda: dict(DEFAULT_KEYPOINT_HEIGHTS))
    weights: dict = field(default_factory=dict)

    def weight(self, name: str) -> float:
        return float(self.weights.get(name, 1.0))


def fuse_positions(points: Iterable[GroundPoint], weights: Iterable[float] | None = None) -> GroundPoint:
    """Information-weighted combination of several floor estimates.

    Each point's inverse covariance is scaled by its confidence weight.
    Points with a singular covariance are treated as exact.
    """
    points = list(points)
    if not points:
        raise ParameterError("no points to fuse")
    weights = [1.0] * len(points) if weights is None else list(weights)
    exact = [p for p, w in zip(points, weights) if w > 0 and np.linalg.matrix_rank(p.cov) < 2]
    if exact:
        xy = np.mean([p.xy for p in exact], axis=0)
        return GroundPoint(float(xy[0]), float(xy[1]), np.zeros((2, 2)))
    info = np.zeros((2, 2))
    vec = np.zeros(2)
    for p, w in zip(points, weights):
        if w <= 0:
            continue
        Pi = w * np.linalg.inv(p.cov)
        info += Pi
        vec += Pi @ p.xy
    if not np.any(info):
        raise ParameterError("all fusion weights are zero")
    cov = np.linalg.inv(info)
    xy = cov @ vec
    return GroundPoint(float(xy[0]), float(xy[1]), cov)


def lift_body(keypoints: dict, hom: Homography, rig: CameraRig, sigma_p: float, model: BodyModel | None = None):
    """Lift a dict of named pixel keypoints.

    Returns (floor position, facing vector or None, per-keypoint GroundPoints).
    Floor position fuses every lifted keypoint with its body-model weight.
    """
    model = model or BodyModel()
    lifted = {}
    for name, uv in keypoints.items():
        if name not in model.heights:
            continue
        lifted[name] = lift_at_height(uv, model.heights[name], hom, rig, sigma_p)
    if not lifted:
        raise ParameterError("no known keypoints to lift")
    position = fuse_positions(lifted.values(), [model.weight(n) for n in lifted])
    facing = None
    names = ("left_shoulder", "right_shoulder", "left_hip", "right_hip")
    zero = GroundPoint(0.0, 0.0)
    pts = []
    for left, right in (names[:2], names[2:]):
        if left in lifted and right in lifted:
            pts += [lifted[left], lifted[right]]
        else:
            pts += [zero, zero]
    if any(p is not zero for p in pts):
        try:
            facing = body_orientation(*pts)
        except OrientationUndefinedError:
            facing = None
    return position, facing, lifted
