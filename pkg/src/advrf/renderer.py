"""Cross-scene neural renderer: encode source views, project ray samples
into them, pool features across views, predict color/density, composite.

The pipeline is differentiable end to end, down to the source-view
pixels, which is what the attack module relies on.  Geometry (rays,
depth samples, projections, bilinear footprints) depends only on camera
parameters and the sampling seed, so it is precomputed once into a
``RayPlan`` and reused while pixel values change.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cameras import bilinear_plan, project_points, rays_for_camera, sample_depth_matrix
from .errors import ContractError, DimensionError, FormatError
from .scenes import SourceView

CKPT_MAGIC = b"GENRF-CKPT"
CKPT_VERSION = 1


@dataclass
class RenderConfig:
    near: float
    far: float
    k_samples: int = 16
    mode: str = "stratified"
    seed: int = 0
    chunk_rays: int = 128  # small chunks keep per-chunk tensors cache-resident

    def __post_init__(self):
        if self.k_samples < 1:
            raise ContractError("k_samples must be >= 1")
        if not 0 < self.near < self.far:
            raise ContractError(f"need 0 < near < far, got {self.near}, {self.far}")


class RendererParams:
    """The three trainable networks.

    encoder: three 3x3 stride-1 convolutions 3 -> 16 -> 16 -> c_feat with
    relu between; color_net: relu MLP 2*c_feat -> hidden^3 -> 3+d_sigma
    (rgb through sigmoid); ray_transformer: single-head self-attention of
    width d_sigma over the samples of one ray plus a linear head whose
    softplus output is the density.
    """

    def __init__(self, c_feat: int = 16, d_sigma: int = 16, hidden: int = 64, seed: int = 0):
        self.c_feat = c_feat
        self.d_sigma = d_sigma
        self.hidden = hidden
        rng = np.random.default_rng(seed)

        def he(shape, fan_in):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))

        def zeros(shape):
            return Tensor(np.zeros(shape))

        t = {}
        t["enc.w1"] = he((16, 3, 3, 3), 3 * 9)
        t["enc.b1"] = zeros(16)
        t["enc.w2"] = he((16, 16, 3, 3), 16 * 9)
        t["enc.b2"] = zeros(16)
        t["enc.w3"] = he((c_feat, 16, 3, 3), 16 * 9)
        t["enc.b3"] = zeros(c_feat)
        dims = [2 * c_feat, hidden, hidden, hidden, 3 + d_sigma]
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:]), start=1):
            t[f"mlp.w{i}"] = he((din, dout), din)
            t[f"mlp.b{i}"] = zeros(dout)
        for name in ("q", "k", "v"):
            t[f"attn.w{name}"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_sigma), size=(d_sigma, d_sigma)))
            t[f"attn.b{name}"] = zeros(d_sigma)
        t["head.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_sigma), size=(d_sigma, 1)))
        t["head.b"] = zeros(1)
        self.tensors: dict[str, Tensor] = t

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None

    def copy(self) -> "RendererParams":
        out = RendererParams(self.c_feat, self.d_sigma, self.hidden)
        for k, v in self.tensors.items():
            out.tensors[k] = Tensor(v.data.copy())
        return out


def encode_view(params: RendererParams, image: Tensor) -> Tensor:
    """Feature map [c_feat,H,W] for one [3,H,W] source image."""
    t = params.tensors
    _, h, w = image.shape

    def bias(b, f):
        return ad.broadcast_to(ad.reshape(b, (f, 1, 1)), (f, h, w))

    x = ad.relu(ad.conv2d(image, t["enc.w1"]) + bias(t["enc.b1"], 16))
    x = ad.relu(ad.conv2d(x, t["enc.w2"]) + bias(t["enc.b2"], 16))
    return ad.conv2d(x, t["enc.w3"]) + bias(t["enc.b3"], params.c_feat)


def encode_views(params: RendererParams, views: list) -> list[Tensor]:
    """Feature maps for every source view (list of SourceView or Tensor images)."""
    images = []
    for v in views:
        img = v.image if isinstance(v, SourceView) else v
        images.append(img if isinstance(img, Tensor) else Tensor(img))
    shapes = {i.shape for i in images}
    if len(shapes) > 1:
        raise DimensionError(f"source images disagree in size: {sorted(shapes)}")
    return [encode_view(params, img) for img in images]


def encode_views_stacked(params: RendererParams, images: Tensor) -> Tensor:
    """Encoder over a stacked batch [V,3,H,W] -> [V,c_feat,H,W]; same math
    as encode_view per item, one GEMM per layer."""
    t = params.tensors
    x = ad.relu(ad.conv2d_many(images, t["enc.w1"], t["enc.b1"]))
    x = ad.relu(ad.conv2d_many(x, t["enc.w2"], t["enc.b2"]))
    return ad.conv2d_many(x, t["enc.w3"], t["enc.b3"])


@dataclass
class RayPlan:
    """Geometry shared by every forward pass of one (pose, config) pair."""

    n_rays: int
    k_samples: int
    t_vals: np.ndarray  # [N,K]
    deltas: np.ndarray  # [N,K]
    view_plans: list  # per source view: (corners, weights, ok) for all N*K points
    inv_count: np.ndarray  # [P]: 1/(number of views seeing the point), 0 if none
    height: int
    width: int

    def chunk(self, lo: int, hi: int) -> "RayPlan":
        sl = slice(lo * self.k_samples, hi * self.k_samples)
        vps = [
            (tuple(c[sl] for c in corners), tuple(w[sl] for w in weights), ok[sl])
            for corners, weights, ok in self.view_plans
        ]
        return RayPlan(
            n_rays=hi - lo,
            k_samples=self.k_samples,
            t_vals=self.t_vals[lo:hi],
            deltas=self.deltas[lo:hi],
            view_plans=vps,
            inv_count=self.inv_count[sl],
            height=self.height,
            width=self.width,
        )


def build_ray_plan(target_pose, target_intr, source_views: list, config: RenderConfig,
                   rays: tuple[np.ndarray, np.ndarray] | None = None) -> RayPlan:
    """Sample depths and project every ray point into every source view."""
    if rays is None:
        origins, dirs = rays_for_camera(target_pose, target_intr)
    else:
        origins, dirs = rays
    n = origins.shape[0]
    k = config.k_samples
    t_vals = sample_depth_matrix(n, k, config.near, config.far, config.mode, config.seed)
    deltas = np.empty_like(t_vals)
    deltas[:, :-1] = np.diff(t_vals, axis=1)
    deltas[:, -1] = config.far - t_vals[:, -1]
    points = (origins[:, None, :] + t_vals[:, :, None] * dirs[:, None, :]).reshape(-1, 3)

    view_plans = []
    counts = np.zeros(points.shape[0])
    for sv in source_views:
        u, v, _, valid = project_points(points, sv.pose, sv.intrinsics)
        plan = bilinear_plan(u - 0.5, v - 0.5, valid, sv.intrinsics.height, sv.intrinsics.width)
        view_plans.append(plan)
        counts += plan[2]
    inv_count = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    return RayPlan(n_rays=n, k_samples=k, t_vals=t_vals, deltas=deltas,
                   view_plans=view_plans, inv_count=inv_count,
                   height=target_intr.height, width=target_intr.width)


def gather_view_features(fmap: Tensor, plan_entry) -> Tensor:
    """Features [c,P] of one view at the plan's sample points (zeros where invalid)."""
    corners, weights, _ = plan_entry
    return ad.corner_gather(fmap, corners, weights)


def aggregate_features(view_features: list, validity) -> Tensor:
    """Pool one sample point's per-view features into [2c]: validity-
    weighted mean and variance, concatenated.

    Invalid views contribute nothing; when nothing sees the point the
    result is all zeros.  The batched render path uses the same fused
    kernel over [c,P] feature blocks.
    """
    if len(view_features) == 0:
        raise ContractError("need at least one source view")
    validity = np.asarray(validity, dtype=np.float64).reshape(len(view_features))
    cols = []
    for f, ok in zip(view_features, validity):
        t = f if isinstance(f, Tensor) else Tensor(f)
        col = ad.reshape(t, (t.size, 1))
        cols.append(col * float(ok))
    count = float(validity.sum())
    inv = np.array([1.0 / count if count > 0 else 0.0])
    return ad.reshape(ad.masked_mean_var(cols, inv), (2 * cols[0].shape[0],))


def _attention_density(params: RendererParams, f_sigma: Tensor, n: int, k: int) -> Tensor:
    """Ray transformer: self-attention over the K samples of each ray -> sigma [N,K]."""
    t = params.tensors
    d = params.d_sigma
    q = ad.reshape(ad.linear(f_sigma, t["attn.wq"], t["attn.bq"]), (n, k, d))
    key = ad.reshape(ad.linear(f_sigma, t["attn.wk"], t["attn.bk"]), (n, k, d))
    v = ad.reshape(ad.linear(f_sigma, t["attn.wv"], t["attn.bv"]), (n, k, d))
    scores = ad.matmul(q, ad.swap_last_two(key)) * (1.0 / np.sqrt(d))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.matmul(attn, v), (n * k, d))
    raw = ad.linear(ctx, t["head.w"], t["head.b"])
    return ad.softplus(ad.reshape(raw, (n, k)))


def composite(colors: Tensor, sigmas: Tensor, deltas: np.ndarray) -> tuple[Tensor, Tensor]:
    """Volume compositing: colors [N,K,3], sigmas [N,K] -> (rgb [N,3], weights [N,K]).

    alpha_k = 1 - exp(-sigma_k * delta_k); w_k = alpha_k * prod_{j<k}(1 - alpha_j).
    """
    n, k = sigmas.shape
    alpha = 1.0 - ad.exp(-(sigmas * Tensor(deltas)))
    w = ad.composite_weights(alpha)  # [N,K]
    w3 = ad.broadcast_to(ad.reshape(w, (n, k, 1)), (n, k, 3))
    rgb = ad.tsum(w3 * colors, axis=1)
    return rgb, w


def volume_render(colors, sigmas, t_vals, far: float) -> tuple[Tensor, Tensor]:
    """Composite one ray: colors [K,3], sigmas [K], depths [K] -> (rgb [3], weights [K])."""
    colors = colors if isinstance(colors, Tensor) else Tensor(colors)
    sigmas = sigmas if isinstance(sigmas, Tensor) else Tensor(sigmas)
    t_vals = np.asarray(t_vals, dtype=np.float64)
    if np.any(np.diff(t_vals) <= 0):
        raise ContractError("depths must be strictly increasing")
    if np.any(sigmas.data < 0):
        raise ContractError("densities must be non-negative")
    k = t_vals.shape[0]
    deltas = np.empty(k)
    deltas[:-1] = np.diff(t_vals)
    deltas[-1] = far - t_vals[-1]
    rgb, w = composite(ad.reshape(colors, (1, k, 3)), ad.reshape(sigmas, (1, k)), deltas[None, :])
    return ad.reshape(rgb, (3,)), ad.reshape(w, (k,))


def render_chunk(params: RendererParams, fmap_stack: Tensor | None, plan: RayPlan,
                 stack_view_indices: list[int] | None = None,
                 const_moments: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[Tensor, Tensor]:
    """Render the rays of one plan chunk -> (rgb [N,3], weights [N,K]).

    fmap_stack carries the feature maps [V,c,H,W] of the views whose
    pixels may change; stack_view_indices says which plan entries they
    correspond to (default: all).  const_moments supplies precomputed
    (sum, sum-of-squares) feature moments [c,P] of the remaining frozen
    views.
    """
    n, k = plan.n_rays, plan.k_samples
    p = plan.inv_count.shape[0]
    if fmap_stack is not None and fmap_stack.data.shape[0] > 0:
        idx = stack_view_indices if stack_view_indices is not None else range(fmap_stack.data.shape[0])
        entries = [plan.view_plans[i] for i in idx]
        gathered = ad.multi_view_gather(fmap_stack, entries)
    else:
        gathered = Tensor(np.zeros((0, params.c_feat, p)))
    cs, cq = const_moments if const_moments is not None else (None, None)
    agg = ad.fused_pool(gathered, plan.inv_count, cs, cq)  # [P,2c]

    t = params.tensors
    h = ad.relu(ad.linear(agg, t["mlp.w1"], t["mlp.b1"]))
    h = ad.relu(ad.linear(h, t["mlp.w2"], t["mlp.b2"]))
    h = ad.relu(ad.linear(h, t["mlp.w3"], t["mlp.b3"]))
    out = ad.linear(h, t["mlp.w4"], t["mlp.b4"])  # [P, 3+d_sigma]
    rgb_samples = ad.reshape(ad.sigmoid(out[:, :3]), (n, k, 3))
    f_sigma = out[:, 3:]
    sigma = _attention_density(params, f_sigma, n, k)
    return composite(rgb_samples, sigma, plan.deltas)


def render_pixel(params: RendererParams, fmap_stack: Tensor, source_views: list,
                 ray, config: RenderConfig) -> Tensor:
    """Render a single ray through the full pipeline -> rgb [3]."""
    origins = ray.origin[None, :]
    dirs = ray.direction[None, :]
    cfg = replace(config, near=ray.near, far=ray.far)
    plan = build_ray_plan(None, _PointIntr(), source_views, cfg, rays=(origins, dirs))
    rgb, _ = render_chunk(params, fmap_stack, plan)
    return ad.reshape(rgb, (3,))


class _PointIntr:
    height = 1
    width = 1


def render_image(params: RendererParams, views: list, target_pose, target_intr,
                 config: RenderConfig) -> Tensor:
    """Render all pixels of the target camera (row chunks) -> [3,H,W] Tensor.

    Under an active tape the chunks are concatenated differentiably so
    gradients reach the source pixels; otherwise pixels are assembled
    into a plain buffer.
    """
    images = []
    for v in views:
        img = v.image if isinstance(v, SourceView) else v
        images.append(img if isinstance(img, Tensor) else Tensor(img))
    stacked = ad.stack(images, axis=0)
    fmap_stack = encode_views_stacked(params, stacked)
    plan = build_ray_plan(target_pose, target_intr, views, config)
    h, w = target_intr.height, target_intr.width
    chunk = max(1, config.chunk_rays)
    if ad.active_tape() is not None:
        parts = []
        for lo in range(0, plan.n_rays, chunk):
            hi = min(lo + chunk, plan.n_rays)
            rgb, _ = render_chunk(params, fmap_stack, plan.chunk(lo, hi))
            parts.append(rgb)
        flat = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)  # [HW,3]
        return ad.reshape(ad.transpose(flat, (1, 0)), (3, h, w))
    out = np.empty((h * w, 3))
    for lo in range(0, plan.n_rays, chunk):
        hi = min(lo + chunk, plan.n_rays)
        rgb, _ = render_chunk(params, fmap_stack, plan.chunk(lo, hi))
        out[lo:hi] = rgb.data
    return Tensor(out.T.reshape(3, h, w))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: RendererParams, path) -> None:
    """Binary checkpoint: magic, version, hyperparameters, named tensors (LE f64)."""
    meta = json.dumps({"c_feat": params.c_feat, "d_sigma": params.d_sigma,
                       "hidden": params.hidden}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, tensor in params.tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path) -> RendererParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: bad checkpoint magic")
    off = len(CKPT_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise FormatError(f"{path}: checkpoint truncated")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    version, meta_len = take("<II")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    off += meta_len
    params = RendererParams(c_feat=meta["c_feat"], d_sigma=meta["d_sigma"], hidden=meta["hidden"])
    expected = {k: v.shape for k, v in params.tensors.items()}
    (count,) = take("<I")
    if count != len(expected):
        raise FormatError(f"{path}: expected {len(expected)} tensors, found {count}")
    for _ in range(count):
        (name_len,) = take("<H")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        if name not in expected:
            raise FormatError(f"{path}: unknown tensor {name!r}")
        if tuple(shape) != tuple(expected[name]):
            raise FormatError(f"{path}: tensor {name!r} has shape {shape}, "
                              f"architecture wants {expected[name]}")
        n_vals = int(np.prod(shape)) if ndim else 1
        size = 8 * n_vals
        if off + size > len(blob):
            raise FormatError(f"{path}: tensor {name!r} data truncated")
        data = np.frombuffer(blob, dtype="<f8", count=n_vals, offset=off).reshape(shape)
        off += size
        params.tensors[name] = Tensor(data.astype(np.float64))
    return params
