"""Array-level neural-network building blocks on top of the autodiff engine.

Convolution runs as an im2col matrix product: patches are gathered by
q*q strided slices (never per-pixel loops) and the backward pass scatters
through the same slices.  All spatial ops accept [C,H,W] or [N,C,H,W]
and return the arity they were given.

Patch matrices are memoized on the input tensor, so several convolutions
reading the same activation (a trunk feeding many heads) share one
gather, and the backward pass reuses it for the weight gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgfi.autodiff import ShapeError, Tensor, _make


def _as_batched(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 3:
        return t, False
    if t.ndim == 4:
        return t, True
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got {t.shape}")


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


@dataclass
class Conv2dLayer:
    """2-d convolution parameters plus geometry.

    ``weights`` has shape [out_channels, in_channels, kernel, kernel];
    ``bias`` has shape [out_channels].  ``param_count`` counts weights
    only, which is the bookkeeping the density profiler relies on.
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    weights: Tensor = None
    bias: Tensor = None

    def __post_init__(self):
        if self.kernel < 1:
            raise ShapeError(f"kernel must be >= 1, got {self.kernel}")
        want_w = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.weights is None:
            self.weights = Tensor(np.zeros(want_w), requires_grad=True)
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True)
        if self.weights.shape != want_w:
            raise ShapeError(f"conv weights {self.weights.shape} != declared {want_w}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError(f"conv bias {self.bias.shape} != ({self.out_channels},)")

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel: int,
             rng: np.random.Generator, stride: int = 1,
             padding: int | None = None) -> "Conv2dLayer":
        if padding is None:
            padding = (kernel - 1) // 2
        w = he_normal(rng, (out_channels, in_channels, kernel, kernel),
                      in_channels * kernel * kernel)
        return cls(in_channels, out_channels, kernel, stride, padding,
                   Tensor(w, requires_grad=True),
                   Tensor(np.zeros(out_channels), requires_grad=True))

    def param_count(self) -> int:
        return self.in_channels * self.out_channels * self.kernel * self.kernel


@dataclass
class LinearLayer:
    """Dense layer; ``weights`` is [out_features, in_features]."""

    in_features: int
    out_features: int
    weights: Tensor = None
    bias: Tensor = None

    def __post_init__(self):
        want = (self.out_features, self.in_features)
        if self.weights is None:
            self.weights = Tensor(np.zeros(want), requires_grad=True)
        if self.bias is None:
            self.bias = Tensor(np.zeros(self.out_features), requires_grad=True)
        if self.weights.shape != want:
            raise ShapeError(f"linear weights {self.weights.shape} != declared {want}")

    @classmethod
    def init(cls, in_features: int, out_features: int,
             rng: np.random.Generator) -> "LinearLayer":
        w = he_normal(rng, (out_features, in_features), in_features)
        return cls(in_features, out_features, Tensor(w, requires_grad=True),
                   Tensor(np.zeros(out_features), requires_grad=True))

    def param_count(self) -> int:
        return self.in_features * self.out_features


def _im2col(xp: np.ndarray, q: int, stride: int) -> np.ndarray:
    """[N,C,Hp,Wp] -> [N, C*q*q, Ho*Wo] patch matrix via q*q strided slices."""
    n, c, hp, wp = xp.shape
    ho = (hp - q) // stride + 1
    wo = (wp - q) // stride + 1
    cols = np.empty((n, c, q, q, ho, wo), dtype=np.float64)
    for ki in range(q):
        for kj in range(q):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride,
                                    kj:kj + stride * wo:stride]
    return cols.reshape(n, c * q * q, ho * wo)


def _col2im(dcols: np.ndarray, shape: tuple, q: int, stride: int) -> np.ndarray:
    """Scatter-add the patch-matrix gradient back to [N,C,Hp,Wp]."""
    n, c, hp, wp = shape
    ho = (hp - q) // stride + 1
    wo = (wp - q) // stride + 1
    d6 = dcols.reshape(n, c, q, q, ho, wo)
    dx = np.zeros(shape, dtype=np.float64)
    for ki in range(q):
        for kj in range(q):
            dx[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += d6[:, :, ki, kj]
    return dx


def conv2d(x: Tensor, layer: Conv2dLayer) -> Tensor:
    """Cross-correlate ``x`` with the layer's kernels, add bias.

    Output spatial size is (H + 2*padding - q) // stride + 1 per axis.
    """
    x, batched = _as_batched(x)
    q, s, p = layer.kernel, layer.stride, layer.padding
    xb = x.data if batched else x.data[None]
    n, c, h, w = xb.shape
    if c != layer.in_channels:
        raise ShapeError(f"conv2d: input has {c} channels, layer expects "
                         f"{layer.in_channels}")
    if h + 2 * p < q or w + 2 * p < q:
        raise ShapeError(f"conv2d: padded input {h + 2 * p}x{w + 2 * p} smaller "
                         f"than kernel {q}")

    cache = getattr(x, "_patch_cache", None)
    if cache is None:
        cache = x._patch_cache = {}
    key = (q, s, p)
    cols = cache.get(key)
    if cols is None:
        xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb
        cols = cache[key] = _im2col(xp, q, s)
    ho = (h + 2 * p - q) // s + 1
    wo = (w + 2 * p - q) // s + 1

    wmat = layer.weights.data.reshape(layer.out_channels, -1)
    out = wmat @ cols                       # (o,f) @ (n,f,p) -> (n,o,p), BLAS
    out += layer.bias.data[:, None]
    out = out.reshape(n, layer.out_channels, ho, wo)
    if not batched:
        out = out[0]

    padded_shape = (n, c, h + 2 * p, w + 2 * p)

    def grad_fn(dout):
        db = dout.reshape(n, layer.out_channels, ho * wo)
        dw = np.matmul(db, cols.transpose(0, 2, 1)).sum(axis=0)
        dbias = db.sum(axis=(0, 2))
        dcols = wmat.T @ db
        dxp = _col2im(dcols, padded_shape, q, s)
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return (dx if batched else dx[0],
                dw.reshape(layer.weights.shape), dbias)

    return _make("conv2d", out, (x, layer.weights, layer.bias), grad_fn)


def linear(x: Tensor, layer: LinearLayer) -> Tensor:
    """Apply a dense layer to [F] or [N,F]."""
    single = x.ndim == 1
    xd = x.data[None] if single else x.data
    if xd.ndim != 2 or xd.shape[1] != layer.in_features:
        raise ShapeError(f"linear: input {x.shape} incompatible with "
                         f"in_features {layer.in_features}")
    out = xd @ layer.weights.data.T + layer.bias.data
    if single:
        out = out[0]

    def grad_fn(dout):
        db = dout[None] if single else dout
        dx = db @ layer.weights.data
        return (dx[0] if single else dx, db.T @ xd, db.sum(axis=0))

    return _make("linear", out, (x, layer.weights, layer.bias), grad_fn)


def bilinear_sample(image: Tensor, y, x, channel: int) -> Tensor:
    """Differentiable bilinear lookup of one channel at real-valued (y, x).

    Coordinates are clamped to [0, H-1] x [0, W-1] (border replication);
    the coordinate gradient is zero on the clamped side.  ``y`` and ``x``
    may be scalars or scalar tensors.
    """
    from sgfi.autodiff import _as_tensor
    image, _ = _as_batched(image)
    if image.ndim != 3:
        raise ShapeError("bilinear_sample expects an unbatched [C,H,W] image")
    yt, xt = _as_tensor(y), _as_tensor(x)
    if yt.size != 1 or xt.size != 1:
        raise ShapeError("bilinear_sample coordinates must be scalar")
    c = int(channel)
    _, h, w = image.shape
    yv = float(yt.data.reshape(()))
    xv = float(xt.data.reshape(()))
    yc = min(max(yv, 0.0), float(h - 1))
    xc = min(max(xv, 0.0), float(w - 1))
    y0 = min(int(np.floor(yc)), h - 2) if h > 1 else 0
    x0 = min(int(np.floor(xc)), w - 2) if w > 1 else 0
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    ry = yc - y0
    rx = xc - x0
    img = image.data
    v00, v01 = img[c, y0, x0], img[c, y0, x1]
    v10, v11 = img[c, y1, x0], img[c, y1, x1]
    out = ((1 - ry) * ((1 - rx) * v00 + rx * v01)
           + ry * ((1 - rx) * v10 + rx * v11))

    inside_y = 0.0 < yv < h - 1
    inside_x = 0.0 < xv < w - 1

    def grad_fn(dout):
        d = float(dout.reshape(()))
        dimg = np.zeros_like(img)
        dimg[c, y0, x0] += d * (1 - ry) * (1 - rx)
        dimg[c, y0, x1] += d * (1 - ry) * rx
        dimg[c, y1, x0] += d * ry * (1 - rx)
        dimg[c, y1, x1] += d * ry * rx
        dy = d * ((1 - rx) * (v10 - v00) + rx * (v11 - v01)) if inside_y else 0.0
        dx = d * ((1 - ry) * (v01 - v00) + ry * (v11 - v10)) if inside_x else 0.0
        return (dimg,
                np.full(yt.shape, dy) if yt.requires_grad else None,
                np.full(xt.shape, dx) if xt.requires_grad else None)

    return _make("bilinear_sample", np.array(out), (image, yt, xt), grad_fn)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling of both spatial axes."""
    x, batched = _as_batched(x)
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
    lead = x.shape[:-2]
    h, w = x.shape[-2:]

    def grad_fn(dout):
        g = dout.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1))
        return (g,)

    return _make("upsample2x", out, (x,), grad_fn)


def avgpool2x(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks; spatial dims must be even."""
    x, batched = _as_batched(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    lead = x.shape[:-2]
    out = x.data.reshape(lead + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))

    def grad_fn(dout):
        g = np.repeat(np.repeat(dout, 2, axis=-2), 2, axis=-1) * 0.25
        return (g,)

    return _make("avgpool2x", out, (x,), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; spatial (and batch) dims must match."""
    a, ab = _as_batched(a)
    b, bb = _as_batched(b)
    if ab != bb or a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"concat_channels: {a.shape} and {b.shape} differ "
                         "outside the channel axis")
    out = np.concatenate([a.data, b.data], axis=-3)
    ca = a.shape[-3]

    def grad_fn(dout):
        return (np.ascontiguousarray(dout[..., :ca, :, :]),
                np.ascontiguousarray(dout[..., ca:, :, :]))

    return _make("concat_channels", out, (a, b), grad_fn)


def channel_softmax(x: Tensor) -> Tensor:
    """Softmax across the channel axis, independently at every pixel."""
    x, _ = _as_batched(x)
    z = x.data - x.data.max(axis=-3, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-3, keepdims=True)

    def grad_fn(dout):
        inner = (dout * out).sum(axis=-3, keepdims=True)
        return (out * (dout - inner),)

    return _make("channel_softmax", out, (x,), grad_fn)


def expand_mask(mask: Tensor, channels: int) -> Tensor:
    """Repeat a 1-channel map across ``channels``; gradient sums back."""
    mask, _ = _as_batched(mask)
    if mask.shape[-3] != 1:
        raise ShapeError(f"expand_mask wants 1 channel, got {mask.shape}")
    out = np.repeat(mask.data, channels, axis=-3)

    def grad_fn(dout):
        return (dout.sum(axis=-3, keepdims=True),)

    return _make("expand_mask", out, (mask,), grad_fn)


def bilinear_resize(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Resize spatial dims by bilinear interpolation (corners aligned)."""
    x, batched = _as_batched(x)
    h, w = x.shape[-2:]
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ShapeError(f"bilinear_resize target {out_hw} invalid")
    ys = np.linspace(0.0, h - 1, oh)
    xs = np.linspace(0.0, w - 1, ow)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ry = (ys - y0)[:, None]
    rx = (xs - x0)[None, :]
    d = x.data
    g00 = d[..., y0[:, None], x0[None, :]]
    g01 = d[..., y0[:, None], x1[None, :]]
    g10 = d[..., y1[:, None], x0[None, :]]
    g11 = d[..., y1[:, None], x1[None, :]]
    out = ((1 - ry) * ((1 - rx) * g00 + rx * g01)
           + ry * ((1 - rx) * g10 + rx * g11))

    def grad_fn(dout):
        db = dout.reshape(-1, oh, ow)
        dxf = np.zeros((db.shape[0], h * w), dtype=np.float64)
        wts = (((1 - ry) * (1 - rx), y0, x0), ((1 - ry) * rx, y0, x1),
               (ry * (1 - rx), y1, x0), (ry * rx, y1, x1))
        for wt, yy, xx in wts:
            fi = (yy[:, None] * w + xx[None, :]).ravel()
            contrib = (db * wt).reshape(db.shape[0], -1)
            for n in range(db.shape[0]):
                dxf[n] += np.bincount(fi, weights=contrib[n], minlength=h * w)
        return (dxf.reshape(x.shape),)

    return _make("bilinear_resize", out, (x,), grad_fn)
