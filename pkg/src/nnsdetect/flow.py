"""Coarse-to-fine variational dense optical flow and its HSV rendering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    iterations_per_level: int = 100
    smoothness_alpha: float = 15.0
    downscale: float = 0.5

    def __post_init__(self):
        if self.pyramid_levels < 1 or self.iterations_per_level < 1:
            raise ValueError("pyramid_levels and iterations_per_level must be >= 1")
        if not self.smoothness_alpha > 0:
            raise ValueError("smoothness_alpha must be positive")
        if not 0 < self.downscale < 1:
            raise ValueError("downscale must lie in (0, 1)")


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray = field(repr=False)  # rightward displacement, px
    v: np.ndarray = field(repr=False)  # downward displacement, px

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must share a shape")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


def central_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated edges; returns (d/dx, d/dy)."""
    p = np.pad(img, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    return gx, gy


@numba.njit(cache=True)
def _relax(u, v, u0, v0, ix, iy, it, alpha2, n_iter):
    # Jacobi sweeps of the linearized brightness-constancy + smoothness system,
    # with the data term linearized around (u0, v0).
    h, w = u.shape
    un = np.empty_like(u)
    vn = np.empty_like(v)
    for _ in range(n_iter):
        for y in range(h):
            ym = y - 1 if y > 0 else 0
            yp = y + 1 if y < h - 1 else h - 1
            for x in range(w):
                xm = x - 1 if x > 0 else 0
                xp = x + 1 if x < w - 1 else w - 1
                ub = ((u[ym, x] + u[yp, x] + u[y, xm] + u[y, xp]) / 6.0
                      + (u[ym, xm] + u[ym, xp] + u[yp, xm] + u[yp, xp]) / 12.0)
                vb = ((v[ym, x] + v[yp, x] + v[y, xm] + v[y, xp]) / 6.0
                      + (v[ym, xm] + v[ym, xp] + v[yp, xm] + v[yp, xp]) / 12.0)
                gx = ix[y, x]
                gy = iy[y, x]
                r = (gx * (ub - u0[y, x]) + gy * (vb - v0[y, x]) + it[y, x]) / (alpha2 + gx * gx + gy * gy)
                un[y, x] = ub - gx * r
                vn[y, x] = vb - gy * r
        u, un = un, u
        v, vn = vn, v
    return u, v


def warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``img`` at ``(x + u, y + v)`` bilinearly with edge replication."""
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")


def _downsample(img: np.ndarray, factor: float) -> np.ndarray:
    sigma = 1.0 / (2.0 * factor) if factor < 1 else 0.0
    blurred = ndimage.gaussian_filter(img, sigma, mode="nearest")
    h, w = img.shape
    out_shape = (max(1, int(round(h * factor))), max(1, int(round(w * factor))))
    return _resize(blurred, out_shape)


def _resize(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-center alignment."""
    h, w = img.shape
    oh, ow = shape
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, [yy, xx], order=1, mode="nearest")


def _pyramid(img: np.ndarray, levels: int, factor: float) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        nxt = _downsample(pyr[-1], factor)
        if min(nxt.shape) < 4:
            break
        pyr.append(nxt)
    return pyr


def dense_flow(prev: np.ndarray, next: np.ndarray, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Flow such that ``next(x + u, y + v) ~= prev(x, y)``."""
    prev = np.asarray(prev, dtype=np.float64)
    next = np.asarray(next, dtype=np.float64)
    if prev.shape != next.shape or prev.ndim != 2:
        raise ValueError(f"frame shapes differ or are not 2-D: {prev.shape} vs {next.shape}")
    if min(prev.shape) < 8:
        raise ValueError("frames must be at least 8x8")
    if np.ptp(prev) == 0 and np.ptp(next) == 0:
        z = np.zeros(prev.shape)
        return FlowField(z, z.copy())

    p0 = _pyramid(prev, cfg.pyramid_levels, cfg.downscale)
    p1 = _pyramid(next, len(p0), cfg.downscale)
    alpha2 = cfg.smoothness_alpha ** 2
    u = v = None
    for lvl in range(len(p0) - 1, -1, -1):
        a, b = p0[lvl], p1[lvl]
        if u is None:
            u = np.zeros(a.shape)
            v = np.zeros(a.shape)
        else:
            scale = 1.0 / cfg.downscale
            u = _resize(u, a.shape) * scale
            v = _resize(v, a.shape) * scale
        bw = warp(b, u, v)
        gxa, gya = central_gradients(a)
        gxb, gyb = central_gradients(bw)
        ix = 0.5 * (gxa + gxb)
        iy = 0.5 * (gya + gyb)
        it = bw - a
        u, v = _relax(u.copy(), v.copy(), u, v, ix, iy, it, alpha2, cfg.iterations_per_level)
    return FlowField(u, v)


def flow_to_hsv(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Encode direction as hue and magnitude as value; returns ``[h, w, 3]`` uint8 RGB."""
    u, v = flow.u, flow.v
    mag = np.hypot(u, v)
    if max_magnitude is None:
        m = float(mag.max()) if mag.size else 0.0
        if m == 0:
            m = 1.0
    else:
        m = float(max_magnitude)
    ang = np.mod(np.arctan2(v, u), 2 * np.pi)
    hue = np.rint(ang / (2 * np.pi) * 255.0).astype(np.int64) % 256
    val = np.rint(255.0 * np.minimum(mag / m, 1.0)).astype(np.uint8)
    sat = np.full(u.shape, 255, dtype=np.uint8)
    return hsv_to_rgb(hue.astype(np.uint8), sat, val)


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Hexcone HSV -> RGB for 8-bit channels (hue spans the full 0..255 circle)."""
    hf = h.astype(np.float64) / 255.0 * 6.0
    sf = s.astype(np.float64) / 255.0
    vf = v.astype(np.float64)
    sector = np.floor(hf).astype(np.int64) % 6
    f = hf - np.floor(hf)
    p = vf * (1 - sf)
    q = vf * (1 - sf * f)
    t = vf * (1 - sf * (1 - f))
    r = np.choose(sector, [vf, q, p, p, t, vf])
    g = np.choose(sector, [t, vf, vf, q, p, p])
    b = np.choose(sector, [p, p, t, vf, vf, q])
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def flow_video(frames: np.ndarray, cfg: FlowConfig = FlowConfig(),
               max_magnitude: float | None = None) -> np.ndarray:
    """HSV-flow encode a grayscale sequence: ``[n, h, w]`` -> ``[n, 3, h, w]`` uint8.

    Frame ``i >= 1`` encodes the flow from frame ``i - 1`` to ``i``; frame 0
    repeats frame 1 so the output keeps the input length.
    """
    n = len(frames)
    h, w = frames.shape[1:]
    out = np.zeros((n, 3, h, w), dtype=np.uint8)
    for i in range(1, n):
        fl = dense_flow(frames[i - 1], frames[i], cfg)
        out[i] = flow_to_hsv(fl, max_magnitude).transpose(2, 0, 1)
    if n > 1:
        out[0] = out[1]
    return out
