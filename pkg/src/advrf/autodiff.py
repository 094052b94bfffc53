"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is 64-bit and CPU-bound; values live in numpy arrays and the
tape records one backward closure per executed op, in execution order
(which is topological order by construction).  backward() walks the tape
once in reverse and accumulates gradients additively across fan-out.

Broadcasting in elementwise ops is deliberately restricted to
scalar-with-tensor and equal shapes; anything richer must go through an
explicit ``broadcast_to``.  Ops record onto the active tape only when at
least one input requires a gradient, so frozen parameters cost nothing
on the backward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense n-dimensional float64 value, optionally tracked on a tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def exp(self):
        return exp(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of executed ops for one reverse-mode sweep.

    Use as a context manager; ops executed inside record themselves when
    an input requires a gradient.  One tape per worker, one backward per
    tape.
    """

    def __init__(self):
        self._nodes: list = []  # (output, backward_fn), execution order
        self._tracked: list[Tensor] = []
        self._consumed = False
        self._outer: Tape | None = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: tuple, backward_fn):
        self._nodes.append((out, backward_fn))
        for t in inputs:
            if t.requires_grad:
                self._tracked.append(t)
        self._tracked.append(out)

    def clear(self):
        self._nodes.clear()
        self._tracked.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and sweep the tape once in reverse."""
        if loss.data.ndim != 0 and loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not loss.requires_grad:
            raise ContractError("loss is not attached to this tape")
        self.accumulate([(loss, np.ones_like(loss.data))])

    def accumulate(self, seeds: list[tuple[Tensor, np.ndarray]]) -> None:
        """Reverse sweep from externally supplied cotangents.

        Lets a caller split a large computation across several tapes:
        downstream tapes produce gradients w.r.t. this tape's outputs,
        which are fed back in here as seeds.
        """
        if self._consumed:
            raise ContractError("tape already swept; build a fresh tape")
        self._consumed = True
        for tensor, g in seeds:
            _accum(tensor, np.asarray(g, dtype=np.float64))
        for out, backward_fn in reversed(self._nodes):
            if out.grad is not None:
                backward_fn(out.grad)
        # fan-out branches that never reach the loss still get a defined gradient
        for t in self._tracked:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g.flags.writeable is False else g
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    """Wrap an op result; record it when a tape is active and grads flow."""
    tape = _ACTIVE_TAPE
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape._record(out, inputs, backward_fn)
    return out


def _elementwise_shapes(a: Tensor, b: Tensor):
    """Allow equal shapes or scalar-with-tensor; reject silent broadcasting."""
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(f"elementwise shapes {a.data.shape} and {b.data.shape} differ")


def _reduce_like(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.data.shape:
        return g
    return np.sum(g).reshape(t.data.shape)  # scalar operand


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _reduce_like(g, a))
        if b.requires_grad:
            _accum(b, _reduce_like(g, b))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _reduce_like(g, a))
        if b.requires_grad:
            _accum(b, _reduce_like(-g, b))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _reduce_like(g * b.data, a))
        if b.requires_grad:
            _accum(b, _reduce_like(g * a.data, b))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _reduce_like(g / b.data, a))
        if b.requires_grad:
            _accum(b, _reduce_like(-g * a.data / (b.data * b.data), b))

    return _make(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    # ln(1+e^x) in the overflow-safe form max(x,0) + ln(1+e^-|x|)
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        _accum(a, g * s)

    return _make(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / out_data))

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = a.data.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def swap_last_two(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast; backward sums over the expanded axes."""
    shape = tuple(int(s) for s in shape)
    out_data = np.broadcast_to(a.data, shape)
    orig = a.data.shape
    lead = len(shape) - len(orig)
    sum_axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(orig) if s == 1 and shape[lead + i] != 1
    )

    def backward(g):
        _accum(a, g.sum(axis=sum_axes).reshape(orig) if sum_axes else g.reshape(orig))

    return _make(out_data.copy(), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _make(out_data, tuple(tensors), backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; backward scatters into a zero array."""
    out_data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(out_data.copy(), (a,), backward)


def take_pixels(fmap: Tensor, iy: np.ndarray, ix: np.ndarray) -> Tensor:
    """Gather per-pixel feature vectors: [C,H,W] indexed at P points -> [P,C]."""
    iy = np.asarray(iy, dtype=np.intp)
    ix = np.asarray(ix, dtype=np.intp)
    out_data = fmap.data[:, iy, ix].T.copy()  # [P, C]

    def backward(g):
        full = np.zeros_like(fmap.data)
        np.add.at(full, (slice(None), iy, ix), g.T)
        _accum(fmap, full)

    return _make(out_data, (fmap,), backward)


def corner_gather(fmap: Tensor, corners, weights) -> Tensor:
    """Fused bilinear lookup: [C,H,W] map at P corner quadruples -> [C,P].

    One tape node instead of a dozen, which matters in the render loop.
    Weights are constants here (geometry is fixed during an attack); use
    ``cameras.bilinear_sample`` when differentiating w.r.t. coordinates.
    """
    c, h, w = fmap.data.shape
    y0, x0, y1, x1 = (np.asarray(a, dtype=np.intp) for a in corners)
    w00, w10, w01, w11 = (np.asarray(a, dtype=np.float64) for a in weights)
    flat = fmap.data.reshape(c, h * w)
    i00 = y0 * w + x0
    i10 = y0 * w + x1
    i01 = y1 * w + x0
    i11 = y1 * w + x1
    out_data = flat[:, i00] * w00
    np.add(out_data, flat[:, i10] * w10, out=out_data)
    np.add(out_data, flat[:, i01] * w01, out=out_data)
    np.add(out_data, flat[:, i11] * w11, out=out_data)

    def backward(g):
        # one combined bincount per channel over all four corners
        idx = np.concatenate([i00, i10, i01, i11])
        p = i00.shape[0]
        wg = np.empty((c, 4 * p))
        np.multiply(g, w00, out=wg[:, :p])
        np.multiply(g, w10, out=wg[:, p:2 * p])
        np.multiply(g, w01, out=wg[:, 2 * p:3 * p])
        np.multiply(g, w11, out=wg[:, 3 * p:])
        full = np.empty((c, h * w))
        for ch in range(c):
            full[ch] = np.bincount(idx, weights=wg[ch], minlength=h * w)
        _accum(fmap, full.reshape(c, h, w))

    return _make(out_data, (fmap,), backward)


def multi_view_gather(stack: Tensor, entries: list) -> Tensor:
    """Bilinear lookups for V stacked maps [V,C,H,W] -> [V,C,P], one node.

    ``entries`` holds one (corners, weights, ok) plan per view.  The
    backward accumulates straight into ``stack.grad`` (channel-wise
    bincount scatter), so repeated chunk sweeps share one buffer.
    """
    v, c, h, w = stack.data.shape
    if len(entries) != v:
        raise DimensionError(f"{v} stacked maps but {len(entries)} plans")
    p = entries[0][0][0].shape[0]
    out_data = np.empty((v, c, p))
    flat = stack.data.reshape(v, c, h * w)
    idx_cache = []
    w_cache = []
    for vi, (corners, weights, _) in enumerate(entries):
        y0, x0, y1, x1 = corners
        dx = x1 - x0
        i00 = y0 * w + x0
        i01 = y1 * w + x0
        idx4 = np.concatenate([i00, i00 + dx, i01, i01 + dx])  # [4P], corner-major
        src = flat[vi]
        out = out_data[vi]
        np.multiply(src[:, idx4[:p]], weights[0], out=out)
        out += src[:, idx4[p:2 * p]] * weights[1]
        out += src[:, idx4[2 * p:3 * p]] * weights[2]
        out += src[:, idx4[3 * p:]] * weights[3]
        idx_cache.append(idx4)
        w_cache.append(weights)

    def backward(g):
        if stack.grad is None:
            stack.grad = np.zeros_like(stack.data)
        gflat = stack.grad.reshape(v, c, h * w)
        wg = np.empty((c, 4 * p))
        for vi in range(v):
            idx4 = idx_cache[vi]
            weights = w_cache[vi]
            gv = g[vi]
            for j in range(4):
                np.multiply(gv, weights[j], out=wg[:, j * p:(j + 1) * p])
            dst = gflat[vi]
            for ch in range(c):
                dst[ch] += np.bincount(idx4, weights=wg[ch], minlength=h * w)

    return _make(out_data, (stack,), backward)


def fused_pool(gathered: Tensor, inv_count: np.ndarray,
               const_sum: np.ndarray | None = None,
               const_sq: np.ndarray | None = None) -> Tensor:
    """Mean/variance pooling of view features [V,C,P] -> [P,2C].

    const_sum/const_sq carry the precomputed feature sums of frozen
    views, so only changing views pay per-iteration cost.  inv_count is
    1/(total views seeing the point) counting frozen ones too.
    """
    v, c, p = gathered.data.shape
    inv = np.asarray(inv_count, dtype=np.float64).reshape(1, p)
    total = gathered.data.sum(axis=0)
    sq = np.einsum("vcp,vcp->cp", gathered.data, gathered.data)
    if const_sum is not None:
        total += const_sum
        sq += const_sq
    mean = total
    np.multiply(mean, inv, out=mean)
    e2 = sq
    np.multiply(e2, inv, out=e2)
    var = e2 - mean * mean
    out_data = np.empty((p, 2 * c))
    out_data[:, :c] = mean.T
    out_data[:, c:] = var.T

    def backward(g):
        gm = np.ascontiguousarray(g[:, :c].T)  # [C,P]
        gv = np.ascontiguousarray(g[:, c:].T)
        dtotal = (gm - 2.0 * mean * gv) * inv
        dsq2 = gv * inv
        dsq2 += dsq2
        buf = gathered.data * dsq2[None, :, :]
        buf += dtotal[None, :, :]
        _accum(gathered, buf)

    return _make(out_data, (gathered,), backward)


def masked_mean_var(features: list[Tensor], inv_count: np.ndarray) -> Tensor:
    """Pool per-view features [C,P] into concatenated mean and variance [P,2C].

    inv_count[P] is 1/(views seeing the point) with 0 where nothing sees
    it, so invalid lookups (already zero-valued) drop out of the moments.
    Fused into a single node: the backward touches each view's features
    exactly twice.
    """
    c, p = features[0].data.shape
    inv = np.asarray(inv_count, dtype=np.float64).reshape(1, p)
    total = features[0].data.copy()
    sq = features[0].data * features[0].data
    tmp = np.empty_like(total)
    for f in features[1:]:
        np.add(total, f.data, out=total)
        np.multiply(f.data, f.data, out=tmp)
        np.add(sq, tmp, out=sq)
    mean = total
    np.multiply(mean, inv, out=mean)
    var = sq
    np.multiply(var, inv, out=var)
    np.multiply(mean, mean, out=tmp)
    np.subtract(var, tmp, out=var)
    out_data = np.empty((p, 2 * c))
    out_data[:, :c] = mean.T
    out_data[:, c:] = var.T

    def backward(g):
        gm = np.ascontiguousarray(g[:, :c].T)  # [C,P]
        gv = np.ascontiguousarray(g[:, c:].T)
        # mean = total*inv, var = sq*inv - mean^2
        dtotal = (gm - 2.0 * mean * gv) * inv
        dsq = gv * inv
        for f in features:
            if f.requires_grad:
                _accum(f, dtotal + 2.0 * f.data * dsq)

    return _make(out_data, tuple(features), backward)


def composite_weights(alphas: Tensor) -> Tensor:
    """Volume-compositing weights w_k = alpha_k * prod_{j<k}(1 - alpha_j).

    alphas and the result are [N,K].  The backward uses the reverse
    recurrence R_j = g_{j+1} a_{j+1} + (1-a_{j+1}) R_{j+1}, which avoids
    dividing by (1 - alpha) and so stays exact for opaque samples.
    """
    a = alphas.data
    n, k = a.shape
    one_minus = 1.0 - a
    trans = np.empty_like(a)
    trans[:, 0] = 1.0
    if k > 1:
        np.cumprod(one_minus[:, :-1], axis=1, out=trans[:, 1:])
    out_data = trans * a

    def backward(g):
        r = np.zeros_like(a)
        for j in range(k - 2, -1, -1):
            r[:, j] = g[:, j + 1] * a[:, j + 1] + one_minus[:, j + 1] * r[:, j + 1]
        _accum(alphas, trans * (g - r))

    return _make(out_data, (alphas,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / n, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / n, a.data.shape).copy())

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D or identically batched stacks (no broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if a.ndim != b.ndim and not (a.ndim == 2 or b.ndim == 2):
        raise DimensionError(f"matmul batch ranks disagree: {a.shape} x {b.shape}")
    if a.ndim == b.ndim and a.data.shape[:-2] != b.data.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ga.ndim > a.ndim:  # a was 2-D against a batched b
                ga = ga.sum(axis=tuple(range(ga.ndim - a.ndim)))
            _accum(a, ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if gb.ndim > b.ndim:
                gb = gb.sum(axis=tuple(range(gb.ndim - b.ndim)))
            _accum(b, gb)

    return _make(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine map x @ w + b for [N,D_in] inputs; one tape node."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError(f"linear expects [N,Din], [Din,Dout], [Dout]; got {x.shape}, {w.shape}, {b.shape}")
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"linear dimensions disagree: {x.shape} @ {w.shape} + {b.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _make(out_data, (x, w, b), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation of [C,H,W] with [F,C,k,k], zero 'same' padding.

    Output is [F,ceil(H/s),ceil(W/s)].  Gradients w.r.t. input and
    kernels are each computed only when required.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects [C,H,W] and [F,C,k,k], got {x.shape} and {w.shape}")
    C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if C != Cw:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernels {w.shape}")
    if kh != kw or kh % 2 == 0:
        raise ContractError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    k, s = kh, int(stride)
    Ho = -(-H // s)
    Wo = -(-W // s)
    pad_h = max((Ho - 1) * s + k - H, 0)
    pad_w = max((Wo - 1) * s + k - W, 0)
    ph0, pw0 = pad_h // 2, pad_w // 2
    xp = np.zeros((C, H + pad_h, W + pad_w))
    xp[:, ph0:ph0 + H, pw0:pw0 + W] = x.data

    cols = np.empty((C, k, k, Ho, Wo))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + (Ho - 1) * s + 1:s, j:j + (Wo - 1) * s + 1:s]
    cols_mat = cols.reshape(C * k * k, Ho * Wo)
    w_mat = w.data.reshape(F, C * k * k)
    out_data = (w_mat @ cols_mat).reshape(F, Ho, Wo)

    def backward(g):
        g_mat = g.reshape(F, Ho * Wo)
        if w.requires_grad:
            _accum(w, (g_mat @ cols_mat.T).reshape(F, C, k, k))
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(C, k, k, Ho, Wo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + (Ho - 1) * s + 1:s, j:j + (Wo - 1) * s + 1:s] += dcols[:, i, j]
            _accum(x, dxp[:, ph0:ph0 + H, pw0:pw0 + W])

    return _make(out_data, (x, w), backward)


# ---------------------------------------------------------------------------
# verification


def conv2d_many(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 same-padded cross-correlation for a batch: [B,C,H,W] with
    [F,C,k,k] (+ optional bias [F]) -> [B,F,H,W].

    Same math as conv2d per batch item, but one GEMM for the whole batch.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d_many expects [B,C,H,W] and [F,C,k,k], got {x.shape} and {w.shape}")
    bsz, c, h_in, w_in = x.data.shape
    f, cw, kh, kw = w.data.shape
    if c != cw:
        raise DimensionError(f"conv2d_many channel mismatch: {x.shape} vs {w.shape}")
    if kh != kw or kh % 2 == 0:
        raise ContractError(f"kernel must be square with odd size, got {kh}x{kw}")
    k = kh
    pad = (k - 1) // 2
    xp = np.zeros((bsz, c, h_in + 2 * pad, w_in + 2 * pad))
    xp[:, :, pad:pad + h_in, pad:pad + w_in] = x.data

    cols = np.empty((c, k, k, bsz, h_in, w_in))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + h_in, j:j + w_in].transpose(1, 0, 2, 3)
    cols_mat = cols.reshape(c * k * k, bsz * h_in * w_in)
    w_mat = w.data.reshape(f, c * k * k)
    out = w_mat @ cols_mat
    if b is not None:
        out += b.data[:, None]
    out_data = out.reshape(f, bsz, h_in, w_in).transpose(1, 0, 2, 3).copy()

    def backward(g):
        g_mat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, bsz * h_in * w_in)
        if b is not None and b.requires_grad:
            _accum(b, g_mat.sum(axis=1))
        if w.requires_grad:
            _accum(w, (g_mat @ cols_mat.T).reshape(f, c, k, k))
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(c, k, k, bsz, h_in, w_in)
            dxp = np.zeros_like(xp)
            dxp_t = dxp.transpose(1, 0, 2, 3)  # [C,B,Hp,Wp] view
            for i in range(k):
                for j in range(k):
                    dxp_t[:, :, i:i + h_in, j:j + w_in] += dcols[:, i, j]
            _accum(x, dxp[:, :, pad:pad + h_in, pad:pad + w_in])

    inputs = (x, w) if b is None else (x, w, b)
    return _make(out_data, inputs, backward)


def check_gradients(fn, x: Tensor, h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central differences.

    ``fn`` must be a deterministic scalar-valued function of one tensor.
    Error per coordinate is |AD - FD| / (|AD| + 1e-8).
    """
    with Tape() as tape:
        xt = Tensor(x.data.copy(), requires_grad=True)
        y = fn(xt)
        tape.backward(y)
    ad = xt.grad.copy()

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = h
        fp = float(fn(Tensor((flat + bump).reshape(x.data.shape))).data)
        fm = float(fn(Tensor((flat - bump).reshape(x.data.shape))).data)
        fd = (fp - fm) / (2.0 * h)
        adi = ad.reshape(-1)[i]
        worst = max(worst, abs(adi - fd) / (abs(adi) + 1e-8))
    return worst
