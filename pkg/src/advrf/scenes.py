"""Procedural synthetic scenes and the analytic oracle renderer.

Scenes are a handful of Lambert-shaded spheres and axis-aligned boxes in
a unit-radius working volume.  The oracle ray-traces them exactly, which
gives bit-reproducible ground truth for training and -- by editing the
scene and re-rendering -- physically consistent edited target images.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .cameras import CameraPose, Intrinsics, look_at_pose, rays_for_camera
from .errors import ContractError, RangeError, VisibilityError

WORKING_VOLUME_RADIUS = 1.0
MIN_CENTER_SPACING = 0.15
HIT_EPS = 1e-9


@dataclass
class ScenePrimitive:
    kind: str  # "sphere" | "box"
    center: np.ndarray  # [3]
    size: np.ndarray  # sphere: [1] radius; box: [3] half-extents
    albedo: np.ndarray  # RGB in [0,1]

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(3)
        if self.kind not in ("sphere", "box"):
            raise ContractError(f"unknown primitive kind {self.kind!r}")
        if self.kind == "sphere" and self.size.shape != (1,):
            raise ContractError("sphere size is a single radius")
        if self.kind == "box" and self.size.shape != (3,):
            raise ContractError("box size is three half-extents")
        if np.any(self.size <= 0):
            raise ContractError("primitive size components must be positive")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ContractError("albedo components must lie in [0,1]")


@dataclass
class SceneSpec:
    primitives: list[ScenePrimitive]
    background: np.ndarray  # RGB
    light_dir: np.ndarray  # unit [3]
    ambient: float
    seed: int = 0

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.light_dir)
        if abs(n - 1.0) > 1e-9:
            raise ContractError("light_dir must be unit length")
        if not 0.0 <= self.ambient <= 1.0:
            raise ContractError("ambient must lie in [0,1]")


@dataclass
class SceneEdit:
    """A programmatic stand-in for hand-edited target images.

    kind "modify" replaces primitive target_index with new_primitive,
    "delete" removes it (background shows through on re-render), and
    "add" appends new_primitive.
    """

    kind: str  # "modify" | "delete" | "add"
    target_index: int = 0
    new_primitive: ScenePrimitive | None = None


@dataclass
class SourceView:
    image: np.ndarray  # [3,H,W] in [0,1]
    pose: CameraPose
    intrinsics: Intrinsics


@dataclass
class TargetView:
    pose: CameraPose
    intrinsics: Intrinsics
    image: np.ndarray  # [3,H,W] ground truth


@dataclass
class MultiViewDataset:
    scene: SceneSpec
    source_views: list[SourceView]
    target_views: list[TargetView]
    near: float
    far: float
    name: str = "scene"

    @property
    def n_views(self) -> int:
        return len(self.source_views)


def random_scene(seed: int, n_primitives: int = 3) -> SceneSpec:
    """Deterministic scene with separated primitives inside the working volume."""
    if n_primitives < 1:
        raise ContractError("need at least one primitive")
    rng = np.random.default_rng(seed)
    centers: list[np.ndarray] = []
    prims: list[ScenePrimitive] = []
    max_size = 0.35
    while len(prims) < n_primitives:
        c = rng.uniform(-0.6, 0.6, size=3)
        if np.linalg.norm(c) + max_size > WORKING_VOLUME_RADIUS:
            continue
        if centers and min(np.linalg.norm(c - p) for p in centers) < MIN_CENTER_SPACING:
            continue
        kind = "sphere" if rng.random() < 0.6 else "box"
        if kind == "sphere":
            size = np.array([rng.uniform(0.12, max_size)])
        else:
            size = rng.uniform(0.10, 0.30, size=3)
        albedo = rng.uniform(0.15, 1.0, size=3)
        prims.append(ScenePrimitive(kind=kind, center=c, size=size, albedo=albedo))
        centers.append(c)
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 0.5  # keep the light loosely overhead
    light = light / np.linalg.norm(light)
    background = rng.uniform(0.05, 0.35, size=3)
    ambient = float(rng.uniform(0.25, 0.45))
    return SceneSpec(primitives=prims, background=background, light_dir=light,
                     ambient=ambient, seed=seed)


def _sphere_hits(origins, dirs, center, radius):
    """Nearest positive hit distance per ray (inf on miss)."""
    oc = origins - center
    b = np.einsum("ij,ij->i", dirs, oc)
    disc = b * b - (np.einsum("ij,ij->i", oc, oc) - radius * radius)
    ok = disc >= 0.0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - root
    t1 = -b + root
    t = np.where(t0 > HIT_EPS, t0, t1)
    return np.where(ok & (t > HIT_EPS), t, np.inf)


def _box_hits(origins, dirs, center, half):
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (lo - origins) * inv
        t_hi = (hi - origins) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> no overlap
    par = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    t_lo = np.where(par, np.where(inside, -np.inf, np.inf), t_lo)
    t_hi = np.where(par, np.where(inside, np.inf, -np.inf), t_hi)
    t_min = np.minimum(t_lo, t_hi)
    t_max = np.maximum(t_lo, t_hi)
    t_near = t_min.max(axis=1)
    t_far = t_max.min(axis=1)
    ok = (t_near <= t_far) & (t_far > HIT_EPS)
    t = np.where(t_near > HIT_EPS, t_near, t_far)
    return np.where(ok, t, np.inf)


def _box_normal(point, center, half):
    rel = (point - center) / half
    axis = np.argmax(np.abs(rel), axis=1)
    n = np.zeros_like(point)
    n[np.arange(point.shape[0]), axis] = np.sign(rel[np.arange(point.shape[0]), axis])
    return n


def primitive_hit_distances(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Hit distance per (primitive, ray); inf where a ray misses."""
    out = np.full((len(scene.primitives), origins.shape[0]), np.inf)
    for i, prim in enumerate(scene.primitives):
        if prim.kind == "sphere":
            out[i] = _sphere_hits(origins, dirs, prim.center, prim.size[0])
        else:
            out[i] = _box_hits(origins, dirs, prim.center, prim.size)
    return out


def oracle_render(scene: SceneSpec, pose: CameraPose, intr: Intrinsics,
                  return_hit_index: bool = False):
    """Exact ray-traced image [3,H,W]: nearest hit, Lambert shading, background on miss."""
    origins, dirs = rays_for_camera(pose, intr)
    n_rays = origins.shape[0]
    image = np.broadcast_to(scene.background[:, None], (3, n_rays)).copy()
    hit_index = np.full(n_rays, -1, dtype=np.intp)
    if scene.primitives:
        dists = primitive_hit_distances(scene, origins, dirs)
        nearest = dists.argmin(axis=0)
        t = dists[nearest, np.arange(n_rays)]
        hit = np.isfinite(t)
        if hit.any():
            hit_index[hit] = nearest[hit]
            points = origins[hit] + t[hit, None] * dirs[hit]
            normals = np.zeros_like(points)
            albedo = np.zeros((hit.sum(), 3))
            for i, prim in enumerate(scene.primitives):
                sel = nearest[hit] == i
                if not sel.any():
                    continue
                if prim.kind == "sphere":
                    normals[sel] = (points[sel] - prim.center) / prim.size[0]
                else:
                    normals[sel] = _box_normal(points[sel], prim.center, prim.size)
                albedo[sel] = prim.albedo
            lambert = np.maximum(0.0, normals @ scene.light_dir)
            shade = scene.ambient + (1.0 - scene.ambient) * lambert
            image[:, hit] = (albedo * shade[:, None]).T
    image = image.reshape(3, intr.height, intr.width)
    if return_hit_index:
        return image, hit_index.reshape(intr.height, intr.width)
    return image


def apply_edit(scene: SceneSpec, edit: SceneEdit,
               check_view: tuple[CameraPose, Intrinsics] | None = None) -> SceneSpec:
    """Return an edited copy of the scene.

    When check_view is given, an "add" edit must leave the new primitive
    visible from that view (at least one pixel whose nearest hit is the
    added primitive), otherwise VisibilityError is raised.
    """
    out = copy.deepcopy(scene)
    if edit.kind in ("modify", "delete"):
        if not 0 <= edit.target_index < len(out.primitives):
            raise RangeError(f"edit target index {edit.target_index} out of range "
                             f"for {len(out.primitives)} primitives")
    if edit.kind == "modify":
        if edit.new_primitive is None:
            raise ContractError("modify edit needs a replacement primitive")
        out.primitives[edit.target_index] = copy.deepcopy(edit.new_primitive)
    elif edit.kind == "delete":
        del out.primitives[edit.target_index]
    elif edit.kind == "add":
        if edit.new_primitive is None:
            raise ContractError("add edit needs a primitive")
        out.primitives.append(copy.deepcopy(edit.new_primitive))
        if check_view is not None:
            pose, intr = check_view
            _, hits = oracle_render(out, pose, intr, return_hit_index=True)
            if not np.any(hits == len(out.primitives) - 1):
                raise VisibilityError("added primitive is not visible from the checked view")
    else:
        raise ContractError(f"unknown edit kind {edit.kind!r}")
    return out


def default_intrinsics(width: int, height: int) -> Intrinsics:
    """Field of view sized so the working volume fills most of the frame."""
    f = 0.5 * width / np.tan(np.deg2rad(25.0))
    return Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def make_dataset(scene: SceneSpec, n_views: int, rig_radius: float = 4.0,
                 height: int = 48, width: int = 48, seed: int = 0,
                 name: str = "scene") -> MultiViewDataset:
    """Source cameras on a jittered ring looking at the origin, plus one
    held-out target camera between the first two source azimuths."""
    if n_views < 1:
        raise ContractError("need at least one source view")
    rng = np.random.default_rng(seed)
    intr = default_intrinsics(width, height)
    near = rig_radius - 1.2 * WORKING_VOLUME_RADIUS
    far = rig_radius + 1.2 * WORKING_VOLUME_RADIUS

    base = np.linspace(0.0, 2.0 * np.pi, n_views, endpoint=False)
    azim = base + rng.uniform(-0.5, 0.5, size=n_views) * (2.0 * np.pi / n_views) * 0.2
    elev = rng.uniform(0.1, 0.45, size=n_views)
    radii = rig_radius * (1.0 + rng.uniform(-0.03, 0.03, size=n_views))

    def camera(a, e, r):
        eye = np.array([r * np.cos(a) * np.cos(e), r * np.sin(a) * np.cos(e), r * np.sin(e)])
        return look_at_pose(eye, np.zeros(3))

    sources = []
    for a, e, r in zip(azim, elev, radii):
        pose = camera(a, e, r)
        sources.append(SourceView(image=oracle_render(scene, pose, intr), pose=pose, intrinsics=intr))

    gap = (azim[1] - azim[0]) if n_views > 1 else np.pi / 3.0
    t_pose = camera(azim[0] + 0.5 * gap, float(rng.uniform(0.15, 0.4)), rig_radius)
    target = TargetView(pose=t_pose, intrinsics=intr, image=oracle_render(scene, t_pose, intr))
    return MultiViewDataset(scene=scene, source_views=sources, target_views=[target],
                            near=near, far=far, name=name)
