"""Colour conversion, cropping geometry and PPM/PGM file I/O.

YCbCr here is full-range BT.601 with chroma centred on 0.5, so every
in-gamut RGB pixel in [0, 1] maps into [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Literal

import numpy as np

Colorspace = Literal["rgb", "ycbcr", "gray"]

KR, KG, KB = 0.299, 0.587, 0.114
CB_SCALE = 0.564
CR_SCALE = 0.713


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class Image:
    """H x W x C float image with an explicit colourspace tag."""

    values: np.ndarray
    colorspace: Colorspace = "rgb"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise ImageError(f"image must be HxWx1 or HxWx3, got {v.shape}")
        expected = 1 if self.colorspace == "gray" else 3
        if v.shape[2] != expected:
            raise ImageError(f"{self.colorspace} image needs {expected} channels, got {v.shape[2]}")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def rgb_to_ycbcr_array(rgb: np.ndarray) -> np.ndarray:
    """Channel-last conversion; no clamping."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = KR * r + KG * g + KB * b
    cb = CB_SCALE * (b - y) + 0.5
    cr = CR_SCALE * (r - y) + 0.5
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb_array(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + (cr - 0.5) / CR_SCALE
    b = y + (cb - 0.5) / CB_SCALE
    g = (y - KR * r - KB * b) / KG
    return np.stack([r, g, b], axis=-1)


def rgb_to_ycbcr(img: Image) -> Image:
    if img.colorspace != "rgb":
        raise ImageError(f"rgb_to_ycbcr expects an rgb image, got {img.colorspace}")
    return Image(rgb_to_ycbcr_array(img.values), "ycbcr")


def ycbcr_to_rgb(img: Image) -> Image:
    if img.colorspace != "ycbcr":
        raise ImageError(f"ycbcr_to_rgb expects a ycbcr image, got {img.colorspace}")
    return Image(ycbcr_to_rgb_array(img.values), "rgb")


def luminance(img: Image) -> Image:
    if img.colorspace == "gray":
        return img
    if img.colorspace == "ycbcr":
        return Image(img.values[:, :, :1], "gray")
    v = img.values
    return Image(KR * v[:, :, 0] + KG * v[:, :, 1] + KB * v[:, :, 2], "gray")


def crop_offset(height: int, width: int, out_size: int, mode: str,
                rng: np.random.Generator | int | None = None) -> tuple[int, int]:
    if height < out_size or width < out_size:
        raise ImageError(f"cannot crop {out_size}x{out_size} from {height}x{width}")
    if mode == "center":
        return (height - out_size) // 2, (width - out_size) // 2
    if mode != "random":
        raise ImageError(f"unknown crop mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    top = int(rng.integers(0, height - out_size + 1))
    left = int(rng.integers(0, width - out_size + 1))
    return top, left


def crop(img: Image, mode: str = "center", out_size: int = 128,
         rng_seed: np.random.Generator | int | None = None) -> Image:
    top, left = crop_offset(img.height, img.width, out_size, mode, rng_seed)
    return Image(img.values[top:top + out_size, left:left + out_size], img.colorspace)


def eye_patches(img: Image, eye_centers, size: int = 32) -> tuple[Image, Image]:
    """Cut ``size`` x ``size`` patches around both eyes.

    ``eye_centers`` is ((row, col) left eye, (row, col) right eye); a patch
    spans ``[r - size/2, r + size/2)``. The right patch is mirrored so both
    share the left-eye orientation.
    """
    half = size // 2
    patches = []
    for r, c in eye_centers:
        r, c = int(r), int(c)
        if r - half < 0 or c - half < 0 or r + half > img.height or c + half > img.width:
            raise ImageError(f"eye at ({r}, {c}) is closer than {half}px to the border of {img.height}x{img.width}")
        patches.append(img.values[r - half:r + half, c - half:c + half])
    left, right = patches
    return Image(left, img.colorspace), Image(right[:, ::-1], img.colorspace)


def flip_horizontal(img: Image) -> Image:
    return Image(img.values[:, ::-1], img.colorspace)


# -- binary PPM (P6) / PGM (P5) ----------------------------------------------

def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pnm(path: str | os.PathLike, img: Image) -> None:
    """Write gray images as P5 and colour images as P6 (RGB samples)."""
    if img.colorspace == "ycbcr":
        img = ycbcr_to_rgb(img)
    q = _quantize(img.values)
    h, w, c = q.shape
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(q.tobytes())


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path: str | os.PathLike) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageError(f"{path}: not a binary PGM/PPM file")
    w_tok, pos = _read_token(data, pos)
    h_tok, pos = _read_token(data, pos)
    max_tok, pos = _read_token(data, pos)
    w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    if maxval != 255:
        raise ImageError(f"{path}: only 8-bit files are supported")
    c = 1 if magic == b"P5" else 3
    raw = data[pos + 1:pos + 1 + w * h * c]
    if len(raw) != w * h * c:
        raise ImageError(f"{path}: truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, c) / 255.0
    return Image(arr, "gray" if c == 1 else "rgb")


def tile_grid(rows: list[list[Image]], pad: int = 2) -> Image:
    """Lay equally sized RGB/gray images out on a white grid."""
    cells = [[np.repeat(im.values, 3, axis=2) if im.channels == 1 else
              (ycbcr_to_rgb(im).values if im.colorspace == "ycbcr" else im.values) for im in row] for row in rows]
    h, w = cells[0][0].shape[:2]
    ncols = max(len(r) for r in cells)
    out = np.ones((len(cells) * (h + pad) + pad, ncols * (w + pad) + pad, 3))
    for i, row in enumerate(cells):
        for j, cell in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            out[y:y + h, x:x + w] = cell
    return Image(out, "rgb")
