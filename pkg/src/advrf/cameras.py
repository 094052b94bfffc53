"""Pinhole cameras: rays, depth sampling, projection, bilinear feature lookup.

Convention used throughout the package: pixel (px, py) covers the unit
square whose center sits at continuous coordinate (px + 0.5, py + 0.5);
``project`` therefore returns px + 0.5 for a point on the ray through
pixel px.  ``bilinear_sample`` works in array-index space (integer
coordinate = pixel center), so projected coordinates are shifted by 0.5
before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, RangeError

BEHIND_EPS = 1e-6


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray  # [3,3] orthonormal, det +1
    translation: np.ndarray  # [3]

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        r = self.rotation
        if r.shape != (3, 3) or self.translation.shape != (3,):
            raise ContractError(f"pose needs 3x3 rotation and 3-vector, got {r.shape}, {self.translation.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ContractError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ContractError("rotation determinant is not +1 within 1e-9")

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError(f"principal point ({self.cx},{self.cy}) outside {self.width}x{self.height}")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # [3]
    direction: np.ndarray  # [3], unit
    near: float
    far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ContractError("ray direction must be unit length")
        if not 0 < self.near < self.far:
            raise ContractError(f"need 0 < near < far, got near={self.near}, far={self.far}")


def look_at_pose(eye, at, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose with +z looking from eye toward at; image y runs toward world-down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(at, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ContractError("view direction is parallel to the up vector")
    right = right / n
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    # re-orthonormalize so pose invariants hold to full precision
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    return CameraPose(rotation=rot, translation=-rot @ eye)


def ray_through_pixel(pose: CameraPose, intr: Intrinsics, px: int, py: int,
                      near: float, far: float) -> Ray:
    """Ray from the camera center through the center of pixel (px, py)."""
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise RangeError(f"pixel ({px},{py}) outside {intr.width}x{intr.height}")
    d_cam = np.array([(px + 0.5 - intr.cx) / intr.fx, (py + 0.5 - intr.cy) / intr.fy, 1.0])
    d_world = pose.rotation.T @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return Ray(origin=pose.center, direction=d_world, near=near, far=far)


def rays_for_camera(pose: CameraPose, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Origins [N,3] and unit directions [N,3] for every pixel, row-major."""
    xs = np.arange(intr.width) + 0.5
    ys = np.arange(intr.height) + 0.5
    u, v = np.meshgrid(xs, ys)  # [H,W]
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    d_world = d_cam.reshape(-1, 3) @ pose.rotation  # (R^T d)^T = d^T R
    d_world = d_world / np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.center, d_world.shape).copy()
    return origins, d_world


def sample_depths(ray: Ray, count: int, mode: str = "stratified", seed=0) -> np.ndarray:
    """Ordered depths in [near, far]: one per equal bin.

    "stratified" draws uniformly inside each bin; "midpoint" takes bin
    centers and is deterministic for tests.
    """
    t = sample_depth_matrix(1, count, ray.near, ray.far, mode, seed)
    return t[0]


def sample_depth_matrix(n_rays: int, count: int, near: float, far: float,
                        mode: str = "stratified", seed=0) -> np.ndarray:
    """Depth samples for a batch of rays, shape [n_rays, count]."""
    if count < 1:
        raise ContractError(f"need at least one depth sample, got {count}")
    edges = np.linspace(near, far, count + 1)
    width = (far - near) / count
    if mode == "midpoint":
        offsets = np.full((n_rays, count), 0.5)
    elif mode == "stratified":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        offsets = rng.random((n_rays, count))
    else:
        raise ContractError(f"unknown sampling mode {mode!r}")
    return edges[:-1][None, :] + offsets * width


def project(point, pose: CameraPose, intr: Intrinsics):
    """Project one world point; returns (u, v, depth, valid).

    valid is False when the point sits at or behind the camera plane; the
    consumer substitutes zero features rather than raising.
    """
    u, v, z, valid = project_points(np.asarray(point, dtype=np.float64)[None, :], pose, intr)
    return float(u[0]), float(v[0]), float(z[0]), bool(valid[0])


def project_points(points: np.ndarray, pose: CameraPose, intr: Intrinsics):
    """Vectorised projection of [N,3] world points -> (u[N], v[N], z[N], valid[N])."""
    p_cam = points @ pose.rotation.T + pose.translation
    z = p_cam[:, 2]
    valid = z > BEHIND_EPS
    zsafe = np.where(valid, z, 1.0)
    u = intr.fx * p_cam[:, 0] / zsafe + intr.cx
    v = intr.fy * p_cam[:, 1] / zsafe + intr.cy
    return u, v, z, valid


def bilinear_plan(u: np.ndarray, v: np.ndarray, valid: np.ndarray,
                  height: int, width: int):
    """Precompute corner indices, weights and in-bounds mask for sampling.

    u, v are array-index coordinates (column, row).  Points out of bounds
    or already invalid get zero weights and validity 0.  The plan depends
    on geometry only, so it can be reused across iterations while the
    sampled map changes.
    """
    ok = valid & (u >= 0.0) & (u <= width - 1.0) & (v >= 0.0) & (v <= height - 1.0)
    uc = np.clip(u, 0.0, width - 1.0)
    vc = np.clip(v, 0.0, height - 1.0)
    x0 = np.minimum(np.floor(uc), width - 2 if width > 1 else 0).astype(np.intp)
    y0 = np.minimum(np.floor(vc), height - 2 if height > 1 else 0).astype(np.intp)
    fu = uc - x0
    fv = vc - y0
    m = ok.astype(np.float64)
    w00 = (1.0 - fu) * (1.0 - fv) * m
    w10 = fu * (1.0 - fv) * m
    w01 = (1.0 - fu) * fv * m
    w11 = fu * fv * m
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    return (y0, x0, y1, x1), (w00, w10, w01, w11), ok


def sample_with_plan(fmap: ad.Tensor, plan) -> ad.Tensor:
    """Apply a precomputed bilinear plan to a [C,H,W] map -> [P,C] Tensor."""
    corners, weights, _ = plan
    return ad.corner_gather(fmap, corners, weights)


def bilinear_sample(fmap: ad.Tensor, u, v, valid: bool = True):
    """Bilinearly interpolate a [C,H,W] map at one (u, v) -> ([C] Tensor, flag).

    Differentiable w.r.t. both the map values and (u, v) when those are
    Tensors.  Out-of-bounds or behind-camera lookups return zeros with
    validity 0.
    """
    c, h, w = fmap.shape
    u_t = u if isinstance(u, ad.Tensor) else ad.Tensor(float(u))
    v_t = v if isinstance(v, ad.Tensor) else ad.Tensor(float(v))
    uf, vf = float(u_t.data), float(v_t.data)
    ok = bool(valid) and 0.0 <= uf <= w - 1.0 and 0.0 <= vf <= h - 1.0
    if not ok:
        return ad.Tensor(np.zeros(c)), False
    x0 = int(min(np.floor(uf), w - 2 if w > 1 else 0))
    y0 = int(min(np.floor(vf), h - 2 if h > 1 else 0))
    fu = u_t - float(x0)
    fv = v_t - float(y0)
    one = ad.Tensor(1.0)
    corners = [
        (y0, x0, (one - fu) * (one - fv)),
        (y0, min(x0 + 1, w - 1), fu * (one - fv)),
        (min(y0 + 1, h - 1), x0, (one - fu) * fv),
        (min(y0 + 1, h - 1), min(x0 + 1, w - 1), fu * fv),
    ]
    total = None
    for yy, xx, wt in corners:
        g = ad.take_pixels(fmap, np.array([yy]), np.array([xx]))  # [1,C]
        term = ad.broadcast_to(ad.reshape(wt, (1, 1)), (1, c)) * g
        total = term if total is None else total + term
    return ad.reshape(total, (c,)), True
