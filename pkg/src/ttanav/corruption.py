"""Seeded, frame-independent image corruptions.

Every corruption of a frame draws all of its randomness from a counter-based
splitmix64 stream seeded by hash(stream_seed, frame_index), so the result is
a pure function of (spec, frame_index, image): frames are independent, order
of application across a sequence is irrelevant, and reruns are bit-identical
on any platform. The per-kind draw order is documented in each function and
must not change (it is part of the reproducibility contract).

Images are float arrays of shape (H, W, 3) with values in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_PHI = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """splitmix64 finalizer on a python int (kept in 64-bit range)."""
    z &= 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def hash_combine(a: int, b: int) -> int:
    """Order-sensitive 64-bit combine of two seeds."""
    return _mix64((a & 0xFFFFFFFFFFFFFFFF) ^ (_mix64(b) + _PHI & 0xFFFFFFFFFFFFFFFF))


class FrameRng:
    """Counter-based splitmix64 generator with vectorized draws.

    Output i is finalize(seed + (counter + i) * PHI); the counter advances by
    the number of values drawn, so a fixed call sequence yields a fixed value
    sequence regardless of batch sizes.
    """

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = self.seed + idx * np.uint64(_PHI)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            return z ^ (z >> np.uint64(31))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = lo + (hi - lo) * u
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, size=None) -> np.ndarray | float:
        """Standard normals via Box-Muller: one block of u1 draws, then one of u2."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = (self._raw(m) + np.uint64(1)).astype(np.float64) * (2.0 ** -64)  # (0, 1]
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(ang)
        z[1::2] = r * np.sin(ang)
        out = z[:n]
        return float(out[0]) if size is None else out.reshape(size)

    def integer(self, lo: int, hi: int) -> int:
        """Uniform int in [lo, hi) by scaled uniform (hi - lo << 2^53)."""
        if hi <= lo:
            raise ValueError("empty range")
        return lo + int(self.uniform() * (hi - lo))


KINDS = (
    "clean", "speckle_noise", "lighting", "spatter", "rain", "defocus_blur",
    "snow", "motion_blur", "color_jitter", "glare", "light_out", "fog",
    "shadow", "occlusion",
)


@dataclass(frozen=True)
class CorruptionSpec:
    """One corrupted observation channel: what kind, how strong, which stream."""

    kind: str
    severity: int = 3
    stream_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= int(self.severity) <= 5:
            raise ValueError(f"severity must be 1..5, got {self.severity}")


def _check_image(img: np.ndarray):
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise ValueError("image must be at least 16x16")


def _sev_value(severity: int, lo: float, hi: float) -> float:
    """Linear interpolation across severities 1..5."""
    return lo + (severity - 1) / 4.0 * (hi - lo)


def _blur_rgb(img, kernel):
    out = np.empty_like(img)
    for c in range(3):
        out[:, :, c] = ndimage.convolve(img[:, :, c], kernel, mode="nearest")
    return out


def _luminance(img):
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    d = mx - mn
    h = np.zeros_like(mx)
    nz = d > 0
    dn = np.where(nz, d, 1.0)
    is_r = nz & (mx == r)
    is_g = nz & ~is_r & (mx == g)
    is_b = nz & ~is_r & ~is_g
    h[is_r] = (((g - b) / dn) % 6.0)[is_r]
    h[is_g] = ((b - r) / dn + 2.0)[is_g]
    h[is_b] = ((r - g) / dn + 4.0)[is_b]
    h /= 6.0
    s = np.where(mx > 0, d / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    rgb = np.empty(h.shape + (3,), dtype=v.dtype)
    for k, (rr, gg, bb) in enumerate([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]):
        m = i == k
        rgb[..., 0][m] = rr[m]
        rgb[..., 1][m] = gg[m]
        rgb[..., 2][m] = bb[m]
    return rgb


def _value_noise(rng: FrameRng, h, w, cells: int):
    """Smooth value noise in [0,1]: random lattice, smoothstep-interpolated.

    Draw order: (cells+1)^2 lattice uniforms, row-major.
    """
    lat = rng.uniform(size=(cells + 1, cells + 1))
    ys = np.linspace(0, cells, h, endpoint=False)
    xs = np.linspace(0, cells, w, endpoint=False)
    yi = np.floor(ys).astype(int)
    xi = np.floor(xs).astype(int)
    ty = ys - yi
    tx = xs - xi
    ty = ty * ty * (3 - 2 * ty)
    tx = tx * tx * (3 - 2 * tx)
    v00 = lat[np.ix_(yi, xi)]
    v01 = lat[np.ix_(yi, xi + 1)]
    v10 = lat[np.ix_(yi + 1, xi)]
    v11 = lat[np.ix_(yi + 1, xi + 1)]
    ty2 = ty[:, None]
    tx2 = tx[None, :]
    return (v00 * (1 - tx2) + v01 * tx2) * (1 - ty2) + (v10 * (1 - tx2) + v11 * tx2) * ty2


# -- per-kind implementations (each notes its draw order) ---------------------

def _speckle(img, sev, rng):
    # draws: H*W*3 normals
    sigma = {1: 0.06, 2: 0.1, 3: 0.19, 4: 0.27, 5: 0.38}[sev]
    n = rng.normal(size=img.shape)
    return img * (1.0 + sigma * n)


def _lighting(img, sev, rng):
    # draws: none
    gain = _sev_value(sev, 0.8, 0.3)
    gamma = _sev_value(sev, 1.1, 1.8)
    return gain * np.power(img, gamma)


def _spatter(img, sev, rng):
    # draws: H*W field uniforms
    h, w = img.shape[:2]
    coverage = {1: 0.04, 2: 0.08, 3: 0.13, 4: 0.19, 5: 0.26}[sev]
    field = ndimage.gaussian_filter(rng.uniform(size=(h, w)), sigma=max(h, w) / 32.0, mode="nearest")
    thr = np.quantile(field, 1.0 - coverage)
    mask = ndimage.gaussian_filter((field > thr).astype(np.float64), sigma=0.7, mode="nearest")
    mask = np.clip(mask, 0.0, 1.0)[:, :, None]
    droplet = np.array([0.09, 0.07, 0.06])
    alpha = 0.75
    return img * (1.0 - alpha * mask) + droplet * (alpha * mask)


def _rain(img, sev, rng):
    # draws: base angle; per streak x0, y0, angle jitter
    h, w = img.shape[:2]
    count = {1: 5, 2: 9, 3: 14, 4: 20, 5: 28}[sev]
    length = _sev_value(sev, 0.18, 0.42) * h
    base = rng.uniform(-20.0, 20.0)
    canvas = np.zeros((h, w))
    for _ in range(count):
        x0 = rng.uniform(0, w)
        y0 = rng.uniform(0, h)
        ang = np.deg2rad(90.0 + base + rng.uniform(-3.0, 3.0))  # near-vertical streaks
        dx, dy = np.cos(ang), np.sin(ang)
        ts = np.arange(0.0, length, 0.5)
        xs = np.clip((x0 + ts * dx).astype(int), 0, w - 1)
        ys = np.clip((y0 + ts * dy).astype(int), 0, h - 1)
        canvas[ys, xs] = 1.0
    canvas = ndimage.gaussian_filter(canvas, sigma=0.5, mode="nearest")
    streak = np.clip(canvas, 0.0, 1.0)[:, :, None] * 0.45
    gray = _luminance(img)[:, :, None]
    desat = img * 0.9 + gray * 0.1
    return desat * (1.0 - streak) + streak * 0.95


def _disk_kernel(radius: int):
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (yy * yy + xx * xx <= r * r + 0.25).astype(np.float64)
    return k / k.sum()


def _defocus(img, sev, rng):
    # draws: none
    base = {1: 1, 2: 2, 3: 3, 4: 5, 5: 7}[sev]
    radius = max(1, round(base * img.shape[0] / 64.0))
    return _blur_rgb(img, _disk_kernel(radius))


def _snow(img, sev, rng):
    # draws: H*W fleck uniforms
    h, w = img.shape[:2]
    frac = {1: 0.010, 2: 0.018, 3: 0.032, 4: 0.05, 5: 0.07}[sev]
    whiten = _sev_value(sev, 0.10, 0.35)
    field = rng.uniform(size=(h, w))
    flecks = (field > 1.0 - frac).astype(np.float64)
    flecks = np.clip(ndimage.gaussian_filter(flecks, sigma=0.6, mode="nearest") * 2.5, 0.0, 1.0)
    out = img * (1.0 - whiten) + whiten
    return out * (1.0 - flecks[:, :, None]) + flecks[:, :, None]


def _line_kernel(length: int, angle: float):
    """Normalized straight-line PSF: unit samples bilinearly splatted along the line."""
    half = (length - 1) / 2.0
    size = length if length % 2 == 1 else length + 1
    c = size // 2
    k = np.zeros((size, size))
    dx, dy = np.cos(angle), np.sin(angle)
    for t in np.linspace(-half, half, 2 * length + 1):
        x = c + t * dx
        y = c + t * dy
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        for (yy, xx, wgt) in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
                              (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += wgt
    return k / k.sum()


def _motion_blur(img, sev, rng):
    # draws: one angle uniform
    base = {1: 3, 2: 5, 3: 7, 4: 11, 5: 15}[sev]
    length = max(3, round(base * img.shape[0] / 64.0))
    angle = rng.uniform(0.0, np.pi)
    return _blur_rgb(img, _line_kernel(length, angle))


def _color_jitter(img, sev, rng):
    # draws: brightness, contrast, saturation, hue (in that order)
    sp = sev / 5.0
    b = rng.uniform(1 - 0.25 * sp, 1 + 0.25 * sp)
    c = rng.uniform(1 - 0.25 * sp, 1 + 0.25 * sp)
    s = rng.uniform(1 - 0.25 * sp, 1 + 0.25 * sp)
    hshift = rng.uniform(-0.1 * sp, 0.1 * sp)
    out = img * b
    mean_lum = _luminance(np.clip(out, 0, 1)).mean()
    out = (out - mean_lum) * c + mean_lum
    gray = _luminance(np.clip(out, 0, 1))[:, :, None]
    out = gray + (out - gray) * s
    out = np.clip(out, 0.0, 1.0)
    hch, sch, vch = _rgb_to_hsv(out)
    return _hsv_to_rgb(hch + hshift, sch, vch)


def _glare(img, sev, rng):
    # draws: cx, cy, rx, ry, rotation
    h, w = img.shape[:2]
    peak = _sev_value(sev, 0.3, 0.95)
    cx = rng.uniform(0.15 * w, 0.85 * w)
    cy = rng.uniform(0.15 * h, 0.85 * h)
    rx = rng.uniform(0.15 * w, 0.45 * w)
    ry = rng.uniform(0.15 * h, 0.45 * h)
    rot = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xr = (xx - cx) * np.cos(rot) + (yy - cy) * np.sin(rot)
    yr = -(xx - cx) * np.sin(rot) + (yy - cy) * np.cos(rot)
    d2 = (xr / rx) ** 2 + (yr / ry) ** 2
    halo = peak * np.exp(-2.0 * d2)
    return img + halo[:, :, None]


def _light_out(img, sev, rng):
    # draws: one uniform (blackout gate); probability fixed across severities
    if rng.uniform() < 0.85:
        return np.zeros_like(img)
    return img.copy()


def _fog(img, sev, rng):
    # draws: value-noise lattices for two octaves
    h, w = img.shape[:2]
    f = _sev_value(sev, 0.2, 0.75)
    p1 = _value_noise(rng, h, w, 4)
    p2 = _value_noise(rng, h, w, 8)
    p = 0.65 * p1 + 0.35 * p2
    t = 1.0 - f * p
    return t[:, :, None] * img + (1.0 - t[:, :, None]) * 0.7


def _shadow(img, sev, rng):
    # draws: cx, cy, rx, ry, then 4 vertex angles
    h, w = img.shape[:2]
    dark = _sev_value(sev, 0.7, 0.3)
    cx = rng.uniform(0.2 * w, 0.8 * w)
    cy = rng.uniform(0.2 * h, 0.8 * h)
    rx = rng.uniform(0.25 * w, 0.6 * w)
    ry = rng.uniform(0.25 * h, 0.6 * h)
    angs = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=4))
    # vertices on an ellipse in angular order are always in convex position
    vx = cx + rx * np.cos(angs)
    vy = cy + ry * np.sin(angs)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    inside = np.ones((h, w), dtype=bool)
    for i in range(4):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % 4], vy[(i + 1) % 4]
        cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
        inside &= cross >= 0
    factor = np.where(inside, dark, 1.0)[:, :, None]
    return img * factor


def _occlusion(img, sev, rng):
    # draws: top row, left col, then 3 color uniforms
    h, w = img.shape[:2]
    side = h // 4
    top = rng.integer(0, h - side + 1)
    left = rng.integer(0, w - side + 1)
    color = rng.uniform(size=3)
    out = img.copy()
    out[top : top + side, left : left + side, :] = color
    return out


_IMPL = {
    "speckle_noise": _speckle,
    "lighting": _lighting,
    "spatter": _spatter,
    "rain": _rain,
    "defocus_blur": _defocus,
    "snow": _snow,
    "motion_blur": _motion_blur,
    "color_jitter": _color_jitter,
    "glare": _glare,
    "light_out": _light_out,
    "fog": _fog,
    "shadow": _shadow,
    "occlusion": _occlusion,
}


def apply(spec: CorruptionSpec, frame_index: int, img: np.ndarray) -> np.ndarray:
    """Corrupt one frame. Pure: same (spec, frame_index, img) -> same output bits."""
    _check_image(img)
    img = np.asarray(img, dtype=np.float64)
    if spec.kind == "clean":
        return img.copy()
    rng = FrameRng(hash_combine(spec.stream_seed, frame_index))
    out = _IMPL[spec.kind](img, int(spec.severity), rng)
    return np.clip(out, 0.0, 1.0)


def corrupt_stream(spec: CorruptionSpec, images) -> list:
    """Apply ``spec`` to images[i] with frame index i; frames never interact."""
    return [apply(spec, i, img) for i, img in enumerate(images)]


class CorruptionStream:
    """Stateful counter over a spec: each observed frame gets the next index."""

    def __init__(self, spec: CorruptionSpec, start_index: int = 0):
        self.spec = spec
        self.index = start_index

    def __call__(self, img: np.ndarray) -> np.ndarray:
        out = apply(self.spec, self.index, img)
        self.index += 1
        return out


# -- 8-bit PNG round trip ------------------------------------------------------

def save_png(path, img: np.ndarray):
    """Quantize by round(v*255) and write RGB PNG."""
    from PIL import Image as PILImage

    q = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q, mode="RGB").save(path)


def load_png(path) -> np.ndarray:
    from PIL import Image as PILImage

    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0
