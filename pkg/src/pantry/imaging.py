"""Image decoding, bilinear resize, and keyed-random affine augmentation.

Images are ``H x W x 3`` numpy arrays in RGB order, either ``uint8`` or float
in ``[0, 1]``. Binary PPM (P6) and PGM (P5) are decoded in-tree; anything
else goes through Pillow.
"""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from pantry.errors import ArgumentError, DecodeError
from pantry.tensor.core import Tensor

ROTATION_RANGE = 45.0
SHIFT_RANGE = 0.2
ZOOM_RANGE = (0.8, 1.2)
SHEAR_RANGE = 20.0

_HEADER = re.compile(rb"(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def as_image(pixels) -> np.ndarray:
    img = np.asarray(pixels)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ArgumentError(f"image must be H x W x 3, got {img.shape}")
    return img


def decode_pnm(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    m = _HEADER.match(raw)
    if not m:
        raise DecodeError(f"{source}: not a binary PPM/PGM header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise DecodeError(f"{source}: bad dimensions or maxval ({w}x{h}, {maxval})")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    expected = w * h * channels * dtype.itemsize
    payload = raw[m.end():m.end() + expected]
    if len(payload) < expected:
        raise DecodeError(f"{source}: truncated pixel data ({len(payload)} of {expected} bytes)")
    px = np.frombuffer(payload, dtype=dtype).reshape(h, w, channels)
    if maxval != 255:
        px = np.rint(px.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return as_image(px[..., 0] if channels == 1 else px.copy())


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc.strerror or exc}") from exc
    if raw[:2] in (b"P5", b"P6"):
        return decode_pnm(raw, str(path))
    try:
        from PIL import Image as PILImage

        with PILImage.open(path) as im:
            return as_image(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from exc


def save_ppm(path, image) -> None:
    img = as_image(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img.astype(np.float64) * 255), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes())


def _finish(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.dtype == np.uint8:
        return np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return values.astype(like.dtype, copy=False)


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at float coordinates, clamped to the image (nearest-edge fill)."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ay = (ys - y0)[..., None]
    ax = (xs - x0)[..., None]
    src = img.astype(np.float64)
    # lerp form a + t*(b - a) keeps constant regions exactly constant
    top = src[y0, x0] + ax * (src[y0, x1] - src[y0, x0])
    bottom = src[y1, x0] + ax * (src[y1, x1] - src[y1, x0])
    return top + ay * (bottom - top)


def resize_bilinear(image, out_h: int = 224, out_w: int = 224) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment (not corner-aligned)."""
    img = as_image(image)
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _finish(_bilinear(img, yy, xx), img)


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    shift_frac_x: float = 0.0
    shift_frac_y: float = 0.0
    zoom: float = 1.0
    shear_deg: float = 0.0
    hflip: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def sample_params(seed: int, index: int) -> AugmentParams:
    """Draw augmentation parameters keyed by ``(seed, index)``.

    Stream: numpy ``PCG64`` seeded through ``SeedSequence([seed, index])``
    (both reduced mod 2**64), drawing rotation, shift x, shift y, zoom,
    shear, then the flip coin, in that order.
    """
    mask = (1 << 64) - 1
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & mask, int(index) & mask])))
    return AugmentParams(
        rotation_deg=float(rng.uniform(-ROTATION_RANGE, ROTATION_RANGE)),
        shift_frac_x=float(rng.uniform(-SHIFT_RANGE, SHIFT_RANGE)),
        shift_frac_y=float(rng.uniform(-SHIFT_RANGE, SHIFT_RANGE)),
        zoom=float(rng.uniform(*ZOOM_RANGE)),
        shear_deg=float(rng.uniform(-SHEAR_RANGE, SHEAR_RANGE)),
        hflip=bool(rng.random() < 0.5),
    )


def hflip(image) -> np.ndarray:
    return np.ascontiguousarray(as_image(image)[:, ::-1])


def augment(image, params: AugmentParams) -> np.ndarray:
    """Optional horizontal flip, then one affine warp about the image centre.

    The forward warp is ``shift . rotate . shear . zoom``: positive rotation is
    counter-clockwise on screen, zoom > 1 magnifies, positive shifts move
    content right/down by that fraction of width/height, and shear slants
    columns horizontally by ``tan(shear)``. Output pixels are pulled back
    through the inverse map and bilinearly sampled with nearest-edge fill.
    """
    img = as_image(image)
    if params.hflip:
        img = hflip(img)
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    shear = math.tan(math.radians(params.shear_deg))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = xx - cx - params.shift_frac_x * w
    v = yy - cy - params.shift_frac_y * h
    # inverse rotation: R(theta) maps (u, v) -> (u cos + v sin, -u sin + v cos)
    ur = u * cos_t - v * sin_t
    vr = u * sin_t + v * cos_t
    # inverse shear, then inverse zoom
    us = (ur - shear * vr) / params.zoom
    vs = vr / params.zoom
    return _finish(_bilinear(img, vs + cy, us + cx), img)


def to_input_tensor(image, dtype=np.float32) -> Tensor:
    return Tensor(to_chw(image, dtype)[None])


def to_chw(image, dtype=np.float32) -> np.ndarray:
    """``H x W x 3`` image to a ``3 x H x W`` float array scaled to ``[0, 1]``."""
    img = as_image(image)
    data = img.astype(dtype) / 255.0 if img.dtype == np.uint8 else img.astype(dtype)
    return np.ascontiguousarray(data.transpose(2, 0, 1))
