"""Face-region stabilization: corners, pyramidal LK, MOSSE, trajectory smoothing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flow import central_gradients
from .synthgen import FrameSequence


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive: {self}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def shifted(self, dx: float, dy: float) -> BoundingBox:
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def intersects(self, shape: tuple[int, int]) -> bool:
        h, w = shape
        return self.x < w and self.y < h and self.x + self.w > 0 and self.y + self.h > 0

    def inside(self, shape: tuple[int, int]) -> bool:
        h, w = shape
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= w and self.y + self.h <= h

    def clamped(self, shape: tuple[int, int]) -> BoundingBox:
        h, w = shape
        bw, bh = min(self.w, w), min(self.h, h)
        return BoundingBox(float(np.clip(self.x, 0, w - bw)), float(np.clip(self.y, 0, h - bh)), bw, bh)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


# --- corners ---------------------------------------------------------------

def min_eigen_score(frame: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-summed structure tensor at every pixel."""
    img = np.asarray(frame, dtype=np.float64)
    gx, gy = central_gradients(img)
    a = ndimage.uniform_filter(gx * gx, 3, mode="nearest") * 9
    b = ndimage.uniform_filter(gx * gy, 3, mode="nearest") * 9
    c = ndimage.uniform_filter(gy * gy, 3, mode="nearest") * 9
    half_tr = 0.5 * (a + c)
    return half_tr - np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))


def shi_tomasi_corners(frame: np.ndarray, max_corners: int = 100, quality: float = 0.01,
                       min_distance_px: float = 5.0) -> np.ndarray:
    """Good-features-to-track corners as an ``[n, 2]`` array of ``(x, y)``."""
    if frame.shape[0] < 3 or frame.shape[1] < 3:
        raise ValueError("frame smaller than the 3x3 structure-tensor window")
    if not 0 < quality <= 1:
        raise ValueError("quality must be in (0, 1]")
    score = min_eigen_score(frame)
    top = score.max()
    if not top > 1e-12:
        return np.zeros((0, 2))
    is_max = (score == ndimage.maximum_filter(score, 3, mode="nearest")) & (score >= quality * top)
    ys, xs = np.nonzero(is_max)
    order = np.argsort(-score[ys, xs], kind="stable")
    picked: list[tuple[float, float]] = []
    d2 = min_distance_px ** 2
    for i in order:
        x, y = float(xs[i]), float(ys[i])
        if all((x - px) ** 2 + (y - py) ** 2 >= d2 for px, py in picked):
            picked.append((x, y))
            if len(picked) >= max_corners:
                break
    return np.array(picked, dtype=np.float64).reshape(-1, 2)


# --- pyramidal Lucas-Kanade ------------------------------------------------

@dataclass(frozen=True)
class LKConfig:
    window_px: int = 15
    pyramid_levels: int = 3
    iterations: int = 10
    min_eigen: float = 1e-4


def _gauss_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        if min(pyr[-1].shape) < 16:
            break
        pyr.append(ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")[::2, ::2])
    return pyr


def lk_track(prev: np.ndarray, next: np.ndarray, points: np.ndarray,
             cfg: LKConfig = LKConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Track ``(x, y)`` points from ``prev`` to ``next``.

    Returns new positions ``[n, 2]`` and a boolean ok-status per point. A point
    fails when its normal matrix is near-singular (smallest eigenvalue of the
    window-averaged tensor, intensities scaled to [0, 1], below
    ``cfg.min_eigen``) or when it leaves the frame.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    ok = np.ones(n, dtype=bool)
    if n == 0:
        return pts.copy(), ok
    a = np.asarray(prev, dtype=np.float64) / 255.0
    b = np.asarray(next, dtype=np.float64) / 255.0
    pa = _gauss_pyramid(a, cfg.pyramid_levels)
    pb = _gauss_pyramid(b, len(pa))
    half = cfg.window_px // 2
    oy, ox = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    oy, ox = oy.ravel(), ox.ravel()
    npix = len(ox)

    guess = np.zeros((n, 2))
    for lvl in range(len(pa) - 1, -1, -1):
        scale = 2.0 ** lvl
        ia, ib = pa[lvl], pb[lvl]
        gx, gy = central_gradients(ia)
        p = pts / scale
        wx = p[:, :1] + ox[None]
        wy = p[:, 1:] + oy[None]
        coords = [wy.ravel(), wx.ravel()]
        t0 = ndimage.map_coordinates(ia, coords, order=1, mode="nearest").reshape(n, npix)
        ix = ndimage.map_coordinates(gx, coords, order=1, mode="nearest").reshape(n, npix)
        iy = ndimage.map_coordinates(gy, coords, order=1, mode="nearest").reshape(n, npix)
        gxx = (ix * ix).sum(1)
        gxy = (ix * iy).sum(1)
        gyy = (iy * iy).sum(1)
        det = gxx * gyy - gxy * gxy
        mine = (0.5 * (gxx + gyy) - np.sqrt((0.5 * (gxx - gyy)) ** 2 + gxy ** 2)) / npix
        ok &= mine >= cfg.min_eigen
        safe_det = np.where(np.abs(det) > 1e-18, det, 1.0)
        d = guess.copy()
        for _ in range(cfg.iterations):
            c1 = [(wy + d[:, 1:]).ravel(), (wx + d[:, :1]).ravel()]
            t1 = ndimage.map_coordinates(ib, c1, order=1, mode="nearest").reshape(n, npix)
            diff = t0 - t1
            bx = (diff * ix).sum(1)
            by = (diff * iy).sum(1)
            step_x = (gyy * bx - gxy * by) / safe_det
            step_y = (gxx * by - gxy * bx) / safe_det
            step = np.where(ok[:, None], np.stack([step_x, step_y], 1), 0.0)
            d += step
            if np.all(np.abs(step) < 0.01):
                break
        guess = d * 2.0 if lvl > 0 else d
    new = pts + guess
    h, w = a.shape
    ok &= (new[:, 0] >= 0) & (new[:, 0] <= w - 1) & (new[:, 1] >= 0) & (new[:, 1] <= h - 1)
    return new, ok


# --- MOSSE -----------------------------------------------------------------

@dataclass
class MosseFilter:
    h_num: np.ndarray = field(repr=False)
    h_den: np.ndarray = field(repr=False)
    size: tuple[int, int]  # (h, w) of the patch
    learning_rate: float = 0.125
    epsilon: float = 1e-5
    gaussian_sigma: float = 2.0
    target: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.h_num.shape != self.h_den.shape:
            raise ValueError("filter numerator and denominator shapes differ")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.learning_rate <= 1:
            raise ValueError("learning_rate must be in [0, 1]")

    @property
    def kernel(self) -> np.ndarray:
        return self.h_num / (self.h_den + self.epsilon)


def crop_patch(frame: np.ndarray, box: BoundingBox, size: tuple[int, int] | None = None) -> np.ndarray:
    """Bilinearly sample ``box`` from ``frame`` onto a ``size`` grid (edge replication)."""
    if size is None:
        size = (int(round(box.h)), int(round(box.w)))
    oh, ow = size
    ys = box.y + (np.arange(oh) + 0.5) * (box.h / oh) - 0.5
    xs = box.x + (np.arange(ow) + 0.5) * (box.w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(np.asarray(frame, dtype=np.float64), [yy, xx], order=1, mode="nearest")


def _preprocess(patch: np.ndarray) -> np.ndarray:
    x = np.log(patch + 1.0)
    x = x - x.mean()
    x = x / (np.linalg.norm(x) + 1e-5)
    h, w = x.shape
    return x * np.outer(np.hanning(h), np.hanning(w))


def _gaussian_target(size: tuple[int, int], sigma: float) -> np.ndarray:
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((yy - h // 2) ** 2 + (xx - w // 2) ** 2) / (2 * sigma * sigma))


def _random_affine(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = patch.shape
    ang = rng.uniform(-np.pi / 16, np.pi / 16)
    sc = rng.uniform(0.9, 1.1)
    c, s = np.cos(ang) / sc, np.sin(ang) / sc
    mat = np.array([[c, -s], [s, c]])
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = center - mat @ center
    return ndimage.affine_transform(patch, mat, offset=offset, order=1, mode="nearest")


def mosse_init(frame: np.ndarray, box: BoundingBox, learning_rate: float = 0.125,
               epsilon: float = 1e-5, gaussian_sigma: float = 2.0, n_perturb: int = 8,
               seed: int = 0) -> MosseFilter:
    if not box.inside(frame.shape):
        raise ValueError(f"box {box} is not inside the {frame.shape} frame")
    patch = crop_patch(frame, box)
    size = patch.shape
    g = np.fft.fft2(_gaussian_target(size, gaussian_sigma))
    rng = np.random.default_rng(seed)
    samples = [patch] + [_random_affine(patch, rng) for _ in range(n_perturb)]
    num = np.zeros(size, dtype=np.complex128)
    den = np.zeros(size, dtype=np.complex128)
    for s in samples:
        f = np.fft.fft2(_preprocess(s))
        num += g * np.conj(f)
        den += f * np.conj(f)
    return MosseFilter(num, den, size, learning_rate, epsilon, gaussian_sigma, g)


def mosse_response(filt: MosseFilter, patch: np.ndarray) -> np.ndarray:
    f = np.fft.fft2(_preprocess(patch))
    return np.real(np.fft.ifft2(filt.kernel * f))


def psr(response: np.ndarray, exclude: int = 11) -> float:
    """Peak-to-sidelobe ratio with an ``exclude x exclude`` window masked around the peak."""
    py, px = np.unravel_index(np.argmax(response), response.shape)
    mask = np.ones(response.shape, dtype=bool)
    r = exclude // 2
    mask[max(0, py - r):py + r + 1, max(0, px - r):px + r + 1] = False
    side = response[mask]
    if side.size < 2:
        return 0.0
    sd = side.std()
    return float((response[py, px] - side.mean()) / sd) if sd > 0 else 0.0


def mosse_step(filt: MosseFilter, frame: np.ndarray, box: BoundingBox) -> tuple[BoundingBox, float]:
    """Locate the target near ``box``; updates ``filt`` in place and returns ``(new_box, psr)``."""
    if not box.intersects(frame.shape):
        raise ValueError(f"box {box} lies outside the {frame.shape} frame")
    resp = mosse_response(filt, crop_patch(frame, box, filt.size))
    h, w = filt.size
    py, px = np.unravel_index(np.argmax(resp), resp.shape)
    dy = py - h // 2
    dx = px - w // 2
    sx, sy = box.w / w, box.h / h
    new_box = box.shifted(dx * sx, dy * sy)
    score = psr(resp)
    eta = filt.learning_rate
    if eta > 0:
        f = np.fft.fft2(_preprocess(crop_patch(frame, new_box, filt.size)))
        filt.h_num = eta * (filt.target * np.conj(f)) + (1 - eta) * filt.h_num
        filt.h_den = eta * (f * np.conj(f)) + (1 - eta) * filt.h_den
    return new_box, score


# --- trajectory ------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if len(self.dx) != len(self.dy):
            raise ValueError("dx and dy lengths differ")
        if len(self.dx) and (self.dx[0] != 0 or self.dy[0] != 0):
            raise ValueError("a trajectory starts at (0, 0)")

    def __len__(self) -> int:
        return len(self.dx)


def centered_moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered mean whose window shrinks symmetrically near the ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    half = window // 2
    cs = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), half)
    return (cs[idx + k + 1] - cs[idx - k]) / (2 * k + 1)


def smooth_trajectory(traj: Trajectory, window_frames: int) -> Trajectory:
    return Trajectory(centered_moving_average(traj.dx, window_frames),
                      centered_moving_average(traj.dy, window_frames))


# --- stabilization ---------------------------------------------------------

@dataclass
class StabilizedBoxes:
    boxes: np.ndarray      # [n, 4] smoothed, clamped (x, y, w, h)
    raw_boxes: np.ndarray  # [n, 4] MOSSE-propagated boxes
    camera: Trajectory     # cumulative global translation
    psr: np.ndarray


def global_motion(video: FrameSequence, redetect_every: int = 10, lk: LKConfig = LKConfig(),
                  max_corners: int = 100) -> Trajectory:
    """Cumulative scene translation from the median LK displacement of corners."""
    frames = video.frames
    n = len(frames)
    step = np.zeros((n, 2))
    pts = np.zeros((0, 2))
    for i in range(1, n):
        if (i - 1) % redetect_every == 0 or len(pts) < 4:
            pts = shi_tomasi_corners(frames[i - 1], max_corners, 0.01, 5.0)
        new, ok = lk_track(frames[i - 1], frames[i], pts, lk)
        if ok.any():
            step[i] = np.median(new[ok] - pts[ok], axis=0)
        pts = new[ok]
    cum = np.cumsum(step, axis=0)
    return Trajectory(cum[:, 0], cum[:, 1])


def stabilize_boxes(video: FrameSequence, initial_box: BoundingBox, smooth_window: int = 5,
                    redetect_every: int = 10, mosse_seed: int = 0) -> StabilizedBoxes:
    """Propagate ``initial_box`` with MOSSE, then smooth its motion against the camera path.

    The residual path (box displacement minus cumulative camera translation)
    carries the tracker's quantization and drift noise; it is smoothed with a
    centered moving average and the ``smoothed - raw`` correction is added to
    each propagated box. Boxes are finally clamped inside the frame.
    """
    frames = video.frames
    if len(frames) == 0:
        raise ValueError("empty video")
    shape = frames.shape[1:]
    if not initial_box.inside(shape):
        raise ValueError(f"initial box {initial_box} is not inside the frame")
    n = len(frames)
    filt = mosse_init(frames[0], initial_box, seed=mosse_seed)
    raw = np.empty((n, 4))
    scores = np.zeros(n)
    box = initial_box
    raw[0] = box.as_tuple()
    for i in range(1, n):
        box, scores[i] = mosse_step(filt, frames[i], box)
        box = box.clamped(shape)
        raw[i] = box.as_tuple()
    camera = global_motion(video, redetect_every)
    residual = Trajectory(raw[:, 0] - raw[0, 0] - camera.dx, raw[:, 1] - raw[0, 1] - camera.dy)
    smooth = smooth_trajectory(residual, smooth_window)
    out = raw.copy()
    out[:, 0] += smooth.dx - residual.dx
    out[:, 1] += smooth.dy - residual.dy
    for i in range(n):
        out[i] = BoundingBox(*out[i]).clamped(shape).as_tuple()
    return StabilizedBoxes(out, raw, camera, scores)


def crop_video(video: FrameSequence, boxes: np.ndarray, out_size_px: int = 64) -> FrameSequence:
    frames = np.empty((len(video), out_size_px, out_size_px), dtype=np.uint8)
    for i, (fr, b) in enumerate(zip(video.frames, boxes)):
        patch = crop_patch(fr, BoundingBox(*b), (out_size_px, out_size_px))
        frames[i] = np.clip(np.rint(patch), 0, 255).astype(np.uint8)
    return FrameSequence(frames, video.fps)


def stabilized_crop(video: FrameSequence, initial_box: BoundingBox, out_size_px: int = 64,
                    smooth_window: int = 5, redetect_every: int = 10) -> FrameSequence:
    stab = stabilize_boxes(video, initial_box, smooth_window, redetect_every)
    return crop_video(video, stab.boxes, out_size_px)
