"""RGBA frame buffers, sRGB encoding and PNG round-trips."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear [0,1] -> sRGB [0,1] (IEC 61966-2-1)."""
    l = np.clip(linear, 0.0, 1.0)
    return np.where(l <= 0.0031308, 12.92 * l, 1.055 * np.power(l, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    """sRGB [0,1] -> linear [0,1]."""
    s = np.clip(encoded, 0.0, 1.0)
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


@dataclass(frozen=True)
class FrameImage:
    """Row-major RGBA8 image, sRGB-encoded color channels."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 4):
            raise InvalidArgumentError(
                f"pixels must have shape ({self.height}, {self.width}, 4), got {px.shape}"
            )
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_linear_rgb(cls, linear_rgb: np.ndarray) -> "FrameImage":
        """Encode an (H, W, 3) linear float image into an opaque RGBA8 frame."""
        h, w, _ = linear_rgb.shape
        srgb = np.rint(srgb_encode(linear_rgb) * 255.0).astype(np.uint8)
        px = np.concatenate([srgb, np.full((h, w, 1), 255, dtype=np.uint8)], axis=2)
        return cls(w, h, px)

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "FrameImage":
        img = Image.open(io.BytesIO(data)).convert("RGBA")
        px = np.asarray(img, dtype=np.uint8)
        return cls(img.width, img.height, px)

    @classmethod
    def load_png(cls, path) -> "FrameImage":
        with open(path, "rb") as f:
            return cls.from_png_bytes(f.read())

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_png_bytes())

    @property
    def rgb(self) -> np.ndarray:
        """The color channels, alpha dropped."""
        return self.pixels[:, :, :3]
