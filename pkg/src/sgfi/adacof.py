"""Adaptive kernel warping: each output pixel is a convex combination of
F*F bilinearly sampled source taps at individually offset positions.

For tap (k, l) with k, l in [0, F) and dilation d, the sample location
for output pixel (i, j) is

    y = i - d*(F-1)/2 + d*k + alpha[k*F+l, i, j]
    x = j - d*(F-1)/2 + d*l + beta [k*F+l, i, j]

so zero offsets read a centred dilated patch and F=1, d=1 with zero
offsets is the identity.  Sampling clamps coordinates to the image
(border replication); the coordinate gradient is zero on clamped taps.

``adacof_warp`` is the vectorized production route (one pass per tap,
all pixels at once).  ``adacof_oracle`` is the deliberately literal
per-pixel loop used to cross-check it and is kept free of any shared
vectorized machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgfi.autodiff import ShapeError, Tensor, _make


@dataclass(frozen=True)
class AdaCofConfig:
    """Kernel geometry: ``kernel_size`` must be odd, ``dilation`` >= 1."""

    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel_size must be odd and >= 1, "
                             f"got {self.kernel_size}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def taps(self) -> int:
        return self.kernel_size * self.kernel_size

    @property
    def center(self) -> float:
        return self.dilation * (self.kernel_size - 1) / 2.0


@dataclass
class AdaCofParams:
    """Per-pixel kernel weights and offsets, [F*F,H,W] or [N,F*F,H,W].

    ``weights`` must sum to 1 over the tap axis at every pixel (softmax
    output); ``alpha``/``beta`` are vertical/horizontal offsets in pixels.
    """

    weights: Tensor
    alpha: Tensor
    beta: Tensor

    def __post_init__(self):
        if not (self.weights.shape == self.alpha.shape == self.beta.shape):
            raise ShapeError(f"weights {self.weights.shape}, alpha "
                             f"{self.alpha.shape}, beta {self.beta.shape} "
                             "must share one shape")
        if self.weights.ndim not in (3, 4):
            raise ShapeError(f"params must be 3-d or 4-d, got "
                             f"{self.weights.ndim}-d")


def _check_geometry(source: Tensor, params: AdaCofParams,
                    cfg: AdaCofConfig) -> None:
    if source.ndim not in (3, 4):
        raise ShapeError(f"source must be [C,H,W] or [N,C,H,W], got {source.shape}")
    if source.ndim != params.weights.ndim:
        raise ShapeError(f"source is {source.ndim}-d but params are "
                         f"{params.weights.ndim}-d")
    if params.weights.shape[-3] != cfg.taps:
        raise ShapeError(f"params have {params.weights.shape[-3]} taps, "
                         f"config wants {cfg.taps}")
    if source.shape[-2:] != params.weights.shape[-2:]:
        raise ShapeError(f"source spatial {source.shape[-2:]} != params "
                         f"spatial {params.weights.shape[-2:]}")
    if source.ndim == 4 and source.shape[0] != params.weights.shape[0]:
        raise ShapeError(f"batch mismatch: source {source.shape[0]} vs "
                         f"params {params.weights.shape[0]}")


def _tap_coords(ad_, bd, cfg, h, w):
    """Per-tap clamped coords and gather indices; shared by fwd and bwd."""
    f, d = cfg.kernel_size, cfg.dilation
    off = cfg.center
    grid_i = np.arange(h, dtype=np.float64)[:, None]
    grid_j = np.arange(w, dtype=np.float64)[None, :]
    for t in range(f * f):
        k, l = divmod(t, f)
        ys = grid_i - off + d * k + ad_[:, t]          # (N,H,W)
        xs = grid_j - off + d * l + bd[:, t]
        yc = np.clip(ys, 0.0, h - 1.0)
        xc = np.clip(xs, 0.0, w - 1.0)
        y0 = np.minimum(np.floor(yc).astype(np.int64), max(h - 2, 0))
        x0 = np.minimum(np.floor(xc).astype(np.int64), max(w - 2, 0))
        ry = yc - y0
        rx = xc - x0
        inside_y = (ys > 0.0) & (ys < h - 1.0)
        inside_x = (xs > 0.0) & (xs < w - 1.0)
        yield t, y0, x0, ry, rx, inside_y, inside_x


def _gather(srcf, idx):
    # srcf (N,C,HW), idx (N,HW) -> (N,C,HW)
    return np.take_along_axis(srcf, idx[:, None, :], axis=2)


def adacof_warp(source: Tensor, params: AdaCofParams, cfg: AdaCofConfig,
                check_weights: bool = True) -> Tensor:
    """Warp ``source`` by per-pixel adaptive kernels; fully differentiable
    in the source image, the weights, and both offset fields."""
    _check_geometry(source, params, cfg)
    batched = source.ndim == 4
    sd = source.data if batched else source.data[None]
    wd = params.weights.data if batched else params.weights.data[None]
    ad_ = params.alpha.data if batched else params.alpha.data[None]
    bd = params.beta.data if batched else params.beta.data[None]
    n, c, h, w = sd.shape

    if check_weights:
        sums = wd.sum(axis=1)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > 1e-9:
            raise ValueError(f"kernel weights must sum to 1 at every pixel "
                             f"(worst deviation {worst:.3e})")

    srcf = sd.reshape(n, c, h * w)
    wflat = wd.reshape(n, cfg.taps, h * w)
    out = np.zeros((n, c, h * w), dtype=np.float64)
    for t, y0, x0, ry, rx, _, _ in _tap_coords(ad_, bd, cfg, h, w):
        y0f = y0.reshape(n, h * w)
        x0f = x0.reshape(n, h * w)
        ryf = ry.reshape(n, 1, h * w)
        rxf = rx.reshape(n, 1, h * w)
        v00 = _gather(srcf, y0f * w + x0f)
        v01 = _gather(srcf, y0f * w + np.minimum(x0f + 1, w - 1))
        v10 = _gather(srcf, np.minimum(y0f + 1, h - 1) * w + x0f)
        v11 = _gather(srcf, np.minimum(y0f + 1, h - 1) * w
                      + np.minimum(x0f + 1, w - 1))
        sample = ((1 - ryf) * ((1 - rxf) * v00 + rxf * v01)
                  + ryf * ((1 - rxf) * v10 + rxf * v11))
        out += wflat[:, t:t + 1] * sample
    out = out.reshape(n, c, h, w)
    if not batched:
        out = out[0]

    def grad_fn(dout):
        db = (dout if batched else dout[None]).reshape(n, c, h * w)
        dsrc_flat = np.zeros(n * c * h * w, dtype=np.float64)
        dw = np.zeros_like(wflat)
        da = np.zeros((n, cfg.taps, h * w), dtype=np.float64)
        dbta = np.zeros((n, cfg.taps, h * w), dtype=np.float64)
        chan_base = (np.arange(n * c, dtype=np.int64) * (h * w))[None, :].reshape(n, c, 1)
        for t, y0, x0, ry, rx, iy, ix in _tap_coords(ad_, bd, cfg, h, w):
            y0f = y0.reshape(n, h * w)
            x0f = x0.reshape(n, h * w)
            y1f = np.minimum(y0f + 1, h - 1)
            x1f = np.minimum(x0f + 1, w - 1)
            ryf = ry.reshape(n, 1, h * w)
            rxf = rx.reshape(n, 1, h * w)
            v00 = _gather(srcf, y0f * w + x0f)
            v01 = _gather(srcf, y0f * w + x1f)
            v10 = _gather(srcf, y1f * w + x0f)
            v11 = _gather(srcf, y1f * w + x1f)
            sample = ((1 - ryf) * ((1 - rxf) * v00 + rxf * v01)
                      + ryf * ((1 - rxf) * v10 + rxf * v11))
            dw[:, t] = (db * sample).sum(axis=1)
            dsample = db * wflat[:, t:t + 1]          # (N,C,HW)
            dsdy = (1 - rxf) * (v10 - v00) + rxf * (v11 - v01)
            dsdx = (1 - ryf) * (v01 - v00) + ryf * (v11 - v10)
            da[:, t] = (dsample * dsdy).sum(axis=1) * iy.reshape(n, h * w)
            dbta[:, t] = (dsample * dsdx).sum(axis=1) * ix.reshape(n, h * w)
            for wt, yy, xx in (((1 - ryf) * (1 - rxf), y0f, x0f),
                               ((1 - ryf) * rxf, y0f, x1f),
                               (ryf * (1 - rxf), y1f, x0f),
                               (ryf * rxf, y1f, x1f)):
                idx = (chan_base + (yy * w + xx)[:, None, :]).ravel()
                dsrc_flat += np.bincount(idx, weights=(dsample * wt).ravel(),
                                         minlength=n * c * h * w)
        dsrc = dsrc_flat.reshape(n, c, h, w)
        shape_p = params.weights.shape
        if not batched:
            dsrc = dsrc[0]
        return (dsrc, dw.reshape(shape_p), da.reshape(shape_p),
                dbta.reshape(shape_p))

    return _make("adacof_warp", out,
                 (source, params.weights, params.alpha, params.beta), grad_fn)


def adacof_oracle(source: np.ndarray, params: AdaCofParams,
                  cfg: AdaCofConfig) -> np.ndarray:
    """Reference implementation: the definition transcribed literally.

    Loops over every output pixel and every tap, sampling with inline
    scalar bilinear interpolation.  [C,H,W] only, numpy in, numpy out.
    """
    src = np.asarray(source, dtype=np.float64)
    if src.ndim != 3:
        raise ShapeError("oracle expects an unbatched [C,H,W] source")
    wd = params.weights.data
    ad_ = params.alpha.data
    bd = params.beta.data
    c, h, w = src.shape
    f, d = cfg.kernel_size, cfg.dilation
    off = cfg.center
    out = np.zeros_like(src)
    for i in range(h):
        for j in range(w):
            for k in range(f):
                for l in range(f):
                    t = k * f + l
                    y = i - off + d * k + ad_[t, i, j]
                    x = j - off + d * l + bd[t, i, j]
                    y = 0.0 if y < 0.0 else (h - 1.0 if y > h - 1.0 else y)
                    x = 0.0 if x < 0.0 else (w - 1.0 if x > w - 1.0 else x)
                    y0 = int(np.floor(y))
                    x0 = int(np.floor(x))
                    if y0 > h - 2:
                        y0 = max(h - 2, 0)
                    if x0 > w - 2:
                        x0 = max(w - 2, 0)
                    y1 = min(y0 + 1, h - 1)
                    x1 = min(x0 + 1, w - 1)
                    ry = y - y0
                    rx = x - x0
                    for ch in range(c):
                        val = ((1 - ry) * ((1 - rx) * src[ch, y0, x0]
                                           + rx * src[ch, y0, x1])
                               + ry * ((1 - rx) * src[ch, y1, x0]
                                       + rx * src[ch, y1, x1]))
                        out[ch, i, j] += wd[t, i, j] * val
    return out


def occlusion_blend(frame_a: Tensor, frame_b: Tensor, mask: Tensor) -> Tensor:
    """Per-pixel convex blend: mask * frame_a + (1 - mask) * frame_b.

    ``mask`` has one channel with values in [0, 1] and broadcasts over
    the frames' channels.
    """
    if frame_a.shape != frame_b.shape:
        raise ShapeError(f"frames {frame_a.shape} and {frame_b.shape} differ")
    if frame_a.ndim not in (3, 4):
        raise ShapeError(f"frames must be 3-d or 4-d, got {frame_a.shape}")
    if mask.ndim != frame_a.ndim or mask.shape[-3] != 1 \
            or mask.shape[-2:] != frame_a.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} incompatible with frames "
                         f"{frame_a.shape}")
    md = mask.data
    if md.min() < 0.0 or md.max() > 1.0:
        raise ValueError(f"mask values must lie in [0, 1], got range "
                         f"[{md.min():.4g}, {md.max():.4g}]")
    out = md * frame_a.data + (1.0 - md) * frame_b.data
    ad_, bd = frame_a.data, frame_b.data

    def grad_fn(dout):
        return (dout * md, dout * (1.0 - md),
                (dout * (ad_ - bd)).sum(axis=-3, keepdims=True))

    return _make("occlusion_blend", out, (frame_a, frame_b, mask), grad_fn)
