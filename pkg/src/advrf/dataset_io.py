"""On-disk dataset format: manifest.json plus binary PPM images.

Poses round-trip at full float precision through JSON; images are
quantized to 8 bits (maxval 255), which is the declared loss bound for
everything downstream.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cameras import CameraPose, Intrinsics
from .errors import FormatError
from .scenes import (
    MultiViewDataset,
    ScenePrimitive,
    SceneSpec,
    SourceView,
    TargetView,
)

MANIFEST_NAME = "manifest.json"


def write_ppm(path, image: np.ndarray) -> None:
    """Write a [3,H,W] float image in [0,1] as binary PPM (P6, maxval 255)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"expected [3,H,W] image, got {image.shape}")
    h, w = image.shape[1], image.shape[2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.transpose(1, 2, 0).tobytes())  # RGB row-major, top-left origin


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a [3,H,W] float image in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        # header: magic, width, height, maxval, single whitespace, raster
        fields: list[bytes] = []
        pos = 0
        while len(fields) < 4:
            while pos < len(blob) and blob[pos : pos + 1].isspace():
                pos += 1
            if blob[pos : pos + 1] == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            fields.append(blob[start:pos])
        pos += 1  # exactly one whitespace byte before the raster
        magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed PPM header") from exc
    if magic != b"P6":
        raise FormatError(f"{path}: expected P6 magic, got {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    raster = blob[pos : pos + 3 * w * h]
    if len(raster) != 3 * w * h:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {3 * w * h} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def _pose_to_floats(pose: CameraPose) -> list[float]:
    return [*pose.rotation.reshape(-1).tolist(), *pose.translation.tolist()]


def _pose_from_floats(vals, where: str) -> CameraPose:
    if len(vals) != 12:
        raise FormatError(f"{where}: pose needs 12 floats, got {len(vals)}")
    arr = np.asarray(vals, dtype=np.float64)
    return CameraPose(rotation=arr[:9].reshape(3, 3), translation=arr[9:])


def _intr_to_floats(intr: Intrinsics) -> list[float]:
    return [intr.fx, intr.fy, intr.cx, intr.cy]


def _prim_to_json(p: ScenePrimitive) -> dict:
    return {"kind": p.kind, "center": p.center.tolist(), "size": p.size.tolist(),
            "albedo": p.albedo.tolist()}


def _prim_from_json(d: dict) -> ScenePrimitive:
    return ScenePrimitive(kind=d["kind"], center=d["center"], size=d["size"], albedo=d["albedo"])


def scene_to_json(scene: SceneSpec) -> dict:
    return {
        "primitives": [_prim_to_json(p) for p in scene.primitives],
        "background": scene.background.tolist(),
        "light_dir": scene.light_dir.tolist(),
        "ambient": scene.ambient,
        "seed": scene.seed,
    }


def scene_from_json(d: dict) -> SceneSpec:
    return SceneSpec(
        primitives=[_prim_from_json(p) for p in d["primitives"]],
        background=d["background"],
        light_dir=d["light_dir"],
        ambient=d["ambient"],
        seed=d.get("seed", 0),
    )


def save_dataset(dataset: MultiViewDataset, path) -> None:
    """Write manifest.json plus one PPM per source/target view."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    intr0 = dataset.source_views[0].intrinsics
    views = []
    for i, sv in enumerate(dataset.source_views):
        fname = f"source_{i:02d}.ppm"
        write_ppm(root / fname, sv.image)
        views.append({"file": fname, "pose": _pose_to_floats(sv.pose),
                      "intrinsics": _intr_to_floats(sv.intrinsics)})
    targets = []
    for i, tv in enumerate(dataset.target_views):
        fname = f"target_{i:02d}.ppm"
        write_ppm(root / fname, tv.image)
        targets.append({"file": fname, "pose": _pose_to_floats(tv.pose),
                        "intrinsics": _intr_to_floats(tv.intrinsics)})
    manifest = {
        "name": dataset.name,
        "scene": scene_to_json(dataset.scene),
        "n_source_views": len(dataset.source_views),
        "width": intr0.width,
        "height": intr0.height,
        "near": dataset.near,
        "far": dataset.far,
        "source_views": views,
        "target_views": targets,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_dataset(path) -> MultiViewDataset:
    """Load and validate a dataset directory written by save_dataset."""
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise FormatError(f"{mpath}: manifest missing")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: invalid JSON ({exc})") from exc

    def need(key):
        if key not in manifest:
            raise FormatError(f"{mpath}: missing field {key!r}")
        return manifest[key]

    width, height = need("width"), need("height")
    scene = scene_from_json(need("scene"))
    declared = need("n_source_views")
    views_json = need("source_views")
    if len(views_json) != declared:
        raise FormatError(f"{mpath}: n_source_views={declared} but {len(views_json)} listed")

    def load_view(entry, where):
        for key in ("file", "pose", "intrinsics"):
            if key not in entry:
                raise FormatError(f"{mpath}: view {where} missing field {key!r}")
        ipath = root / entry["file"]
        if not ipath.is_file():
            raise FormatError(f"{ipath}: image file missing (declared in manifest)")
        image = read_ppm(ipath)
        if image.shape != (3, height, width):
            raise FormatError(f"{ipath}: image is {image.shape[2]}x{image.shape[1]}, "
                              f"manifest says {width}x{height}")
        fx, fy, cx, cy = entry["intrinsics"]
        intr = Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
        return image, _pose_from_floats(entry["pose"], f"{mpath}:{where}"), intr

    sources = []
    for i, entry in enumerate(views_json):
        image, pose, intr = load_view(entry, f"source {i}")
        sources.append(SourceView(image=image, pose=pose, intrinsics=intr))
    targets = []
    for i, entry in enumerate(need("target_views")):
        image, pose, intr = load_view(entry, f"target {i}")
        targets.append(TargetView(pose=pose, intrinsics=intr, image=image))
    if not sources:
        raise FormatError(f"{mpath}: dataset has no source views")
    return MultiViewDataset(scene=scene, source_views=sources, target_views=targets,
                            near=need("near"), far=need("far"),
                            name=manifest.get("name", root.name))
