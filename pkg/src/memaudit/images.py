"""Grayscale image type, file I/O, augmentations, and rigid transforms.

Pixel convention: float32 in [0, 1], row-major (row 0 = top). Coordinates in
transform math are (x, y) = (column, row); positive rotation angles turn the
+x axis toward +y (visually clockwise with row 0 at the top).
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import FormatError, ShapeError, ValidationError

MIN_SIDE = 16
DST_MAGIC = b"DSTN"
DST_VERSION = 1

# Hard envelopes for augmentation parameters; samplers may narrow but never
# widen them.
ROTATE_LIMIT_DEG = 15.0
CONTRAST_RANGE = (0.8, 1.25)

AUG_KINDS = ("hflip", "vflip", "rotate", "contrast")


@dataclass(frozen=True)
class Image:
    """A validated grayscale image; `pixels` is float32 (h, w) in [0, 1]."""

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        a = np.asarray(arr)
        if a.ndim != 2:
            raise ShapeError(f"image: expected 2-D array, got shape {a.shape}")
        if a.shape[0] < MIN_SIDE or a.shape[1] < MIN_SIDE:
            raise ValidationError(
                f"image: sides must be >= {MIN_SIDE}, got {a.shape[0]}x{a.shape[1]}"
            )
        if not np.all(np.isfinite(a)):
            raise ValidationError("image: non-finite pixel values")
        a = a.astype(np.float32, copy=True)
        lo, hi = float(a.min()), float(a.max())
        if lo < -1e-6 or hi > 1.0 + 1e-6:
            raise ValidationError(f"image: pixel range [{lo:g}, {hi:g}] outside [0, 1]")
        np.clip(a, 0.0, 1.0, out=a)
        return cls(a)


# ---------------------------------------------------------------------------
# Raw tensor format (.dst): magic "DSTN", u32 version, u32 ndim, ndim x u64
# dims, float32 little-endian payload in row-major order.

def save_tensor(arr: np.ndarray, path) -> None:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
    with open(path, "wb") as fh:
        fh.write(DST_MAGIC)
        fh.write(struct.pack("<II", DST_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.astype("<f4", copy=False).tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DST_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {DST_MAGIC!r}", offset=0)
    if len(blob) < 12:
        raise FormatError("truncated header", offset=len(blob))
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != DST_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if ndim == 0 or ndim > 8:
        raise FormatError(f"implausible ndim {ndim}", offset=8)
    dims_end = 12 + 8 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dims", offset=len(blob))
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(blob) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, file has {len(blob)}",
            offset=len(blob),
        )
    if len(blob) > expected:
        raise FormatError("trailing bytes after payload", offset=expected)
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError("non-finite value", offset=dims_end + 4 * int(bad[0]))
    return flat.astype(np.float32).reshape(dims)


def save_image(img: Image, path) -> None:
    """Write the raw tensor format (always; extension is not consulted)."""
    save_tensor(img.pixels, path)


def _load_pgm(blob: bytes, path) -> np.ndarray:
    # Binary PGM (P5). Header tokens may be separated by whitespace and
    # '#' comments; maxval <= 255 means 1 byte/pixel, else 2 bytes MSB-first.
    pos = 2  # past "P5"
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            if nl == -1:
                raise FormatError("unterminated comment in header", offset=pos)
            pos = nl + 1
            continue
        m = re.match(rb"\d+", blob[pos:])
        if not m:
            raise FormatError("expected integer header field", offset=pos)
        fields.append(int(m.group(0)))
        pos += m.end()
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise FormatError("expected single whitespace before raster", offset=pos)
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}", offset=2)
    if not 1 <= maxval <= 65535:
        raise FormatError(f"maxval {maxval} outside [1, 65535]", offset=2)
    bytes_per = 1 if maxval <= 255 else 2
    need = width * height * bytes_per
    if len(blob) - pos < need:
        raise FormatError(
            f"truncated raster: expected {need} bytes, found {len(blob) - pos}",
            offset=len(blob),
        )
    raw = blob[pos : pos + need]
    if bytes_per == 1:
        data = np.frombuffer(raw, dtype=np.uint8)
    else:
        data = np.frombuffer(raw, dtype=">u2")
    arr = data.reshape(height, width).astype(np.float64) / float(maxval)
    return arr.astype(np.float32)


def load_image(path) -> Image:
    """Load a .dst tensor or a binary PGM; dispatches on magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:2] == b"P5":
        with open(path, "rb") as fh:
            arr = _load_pgm(fh.read(), path)
    elif head == DST_MAGIC:
        arr = load_tensor(path)
        if arr.ndim != 2:
            raise FormatError(f"expected 2-D image tensor, got ndim {arr.ndim}", offset=8)
        lo, hi = float(arr.min()), float(arr.max())
        if lo < -1e-6 or hi > 1.0 + 1e-6:
            raise FormatError(f"pixel range [{lo:g}, {hi:g}] outside [0, 1]", offset=12)
    else:
        raise FormatError(f"unrecognized file magic {head!r}", offset=0)
    return Image.from_array(np.clip(arr, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Augmentations

@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    angle_deg: float = 0.0
    scale: float = 1.0

    def validate(self) -> None:
        if self.kind not in AUG_KINDS:
            raise ValidationError(f"unknown augmentation kind {self.kind!r}")
        if self.kind == "rotate" and abs(self.angle_deg) > ROTATE_LIMIT_DEG:
            raise ValidationError(
                f"rotation {self.angle_deg:g} deg outside +/-{ROTATE_LIMIT_DEG:g}"
            )
        if self.kind == "contrast" and not (
            CONTRAST_RANGE[0] <= self.scale <= CONTRAST_RANGE[1]
        ):
            raise ValidationError(
                f"contrast scale {self.scale:g} outside [{CONTRAST_RANGE[0]}, {CONTRAST_RANGE[1]}]"
            )


def sample_augmentation(
    rng: np.random.Generator,
    rotate_limit_deg: float = ROTATE_LIMIT_DEG,
    contrast_range: tuple[float, float] = CONTRAST_RANGE,
) -> AugmentationSpec:
    """Draw one of the four kinds uniformly, with uniform parameters."""
    if not 0.0 <= rotate_limit_deg <= ROTATE_LIMIT_DEG:
        raise ValidationError(f"rotate limit {rotate_limit_deg:g} outside [0, {ROTATE_LIMIT_DEG}]")
    lo, hi = contrast_range
    if lo < CONTRAST_RANGE[0] or hi > CONTRAST_RANGE[1] or lo > hi:
        raise ValidationError(f"contrast range ({lo:g}, {hi:g}) outside {CONTRAST_RANGE}")
    kind = AUG_KINDS[int(rng.integers(0, len(AUG_KINDS)))]
    if kind == "rotate":
        return AugmentationSpec("rotate", angle_deg=float(rng.uniform(-rotate_limit_deg, rotate_limit_deg)))
    if kind == "contrast":
        return AugmentationSpec("contrast", scale=float(rng.uniform(lo, hi)))
    return AugmentationSpec(kind)


def apply_augmentation(img: Image, spec: AugmentationSpec) -> Image:
    spec.validate()
    if spec.kind == "hflip":
        return Image(np.ascontiguousarray(img.pixels[:, ::-1]))
    if spec.kind == "vflip":
        return Image(np.ascontiguousarray(img.pixels[::-1, :]))
    if spec.kind == "rotate":
        return apply_rigid(img, RigidTransform(spec.angle_deg, 0.0, 0.0))
    # contrast: map p -> 0.5 + scale * (p - 0.5), clamped.
    out = 0.5 + np.float32(spec.scale) * (img.pixels - np.float32(0.5))
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out.astype(np.float32))


# ---------------------------------------------------------------------------
# Rigid transforms: rotate about the image center, then translate.

@dataclass(frozen=True)
class RigidTransform:
    rotation_deg: float
    tx: float
    ty: float

    def inverse(self) -> "RigidTransform":
        # T(x) = R(x - c) + c + d  =>  T^-1 has rotation -theta and
        # translation -R(-theta) d.
        th = math.radians(-self.rotation_deg)
        c, s = math.cos(th), math.sin(th)
        itx = -(c * self.tx - s * self.ty)
        ity = -(s * self.tx + c * self.ty)
        return RigidTransform(-self.rotation_deg, itx, ity)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `other` first, then `self`."""
        th = math.radians(self.rotation_deg)
        c, s = math.cos(th), math.sin(th)
        tx = c * other.tx - s * other.ty + self.tx
        ty = s * other.tx + c * other.ty + self.ty
        return RigidTransform(self.rotation_deg + other.rotation_deg, tx, ty)


def apply_rigid(img: Image, t: RigidTransform) -> Image:
    """Warp with bilinear interpolation; out-of-support samples become 0."""
    h, w = img.pixels.shape
    if abs(t.rotation_deg) > 45.0:
        raise ValidationError(f"rotation {t.rotation_deg:g} deg outside +/-45")
    limit = w / 4.0
    if abs(t.tx) > limit or abs(t.ty) > limit:
        raise ValidationError(
            f"translation ({t.tx:g}, {t.ty:g}) outside +/-{limit:g} px"
        )
    if t.rotation_deg == 0.0 and t.tx == 0.0 and t.ty == 0.0:
        return img
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(t.rotation_deg)
    c, s = math.cos(th), math.sin(th)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - t.tx - cx
    dy = ys - t.ty - cy
    # inverse rotation R(-theta)
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    out = ndimage.map_coordinates(
        img.pixels.astype(np.float64), [src_y, src_x], order=1, mode="constant", cval=0.0
    )
    return Image(np.clip(out, 0.0, 1.0).astype(np.float32))


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resample on pixel centers; identity when sizes already match."""
    h, w = img.pixels.shape
    if (h, w) == (out_h, out_w):
        return img
    if out_h < MIN_SIDE or out_w < MIN_SIDE:
        raise ValidationError(f"resize target {out_h}x{out_w} below minimum side {MIN_SIDE}")
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    gy, gx = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    out = ndimage.map_coordinates(
        img.pixels.astype(np.float64), [gy, gx], order=1, mode="nearest"
    )
    return Image(np.clip(out, 0.0, 1.0).astype(np.float32))


def center_crop(img: Image, out_h: int, out_w: int) -> Image:
    h, w = img.pixels.shape
    if out_h > h or out_w > w:
        raise ValidationError(f"crop {out_h}x{out_w} larger than image {h}x{w}")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    return Image(np.ascontiguousarray(img.pixels[r0 : r0 + out_h, c0 : c0 + out_w]))
