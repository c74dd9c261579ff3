"""Image array helpers: float [0,1] arrays <-> 8-bit files/bytes/tensors.

Everything in the pipeline carries images as float32 HxWx3 arrays in [0,1]
and masks as float32 HxWx1 arrays. Files on disk are 8-bit PNG (lossless) by
default; PNG encoding via Pillow is byte-deterministic, which the dataset
determinism guarantees rely on.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InputError


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0,1] float array to uint8 with round-half-away rounding."""
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0


def load_image(path: str | Path, channels: int = 3) -> np.ndarray:
    """Load an image file as HxWxC float32 in [0,1]; C is 1, 3, or 4."""
    try:
        with Image.open(path) as im:
            if channels == 1:
                im = im.convert("L")
            elif channels == 3:
                im = im.convert("RGB")
            elif channels == 4:
                im = im.convert("RGBA")
            else:
                raise InputError(f"unsupported channel count {channels}")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_uint8(arr)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Save a [0,1] float array (HxW, HxWx1 or HxWx3) as 8-bit PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_squeeze_u8(img)).save(path, format="PNG")


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_squeeze_u8(img)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes, channels: int = 3) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise InputError(f"undecodable image payload: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_uint8(arr)


def encode_b64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def decode_b64(payload: str, channels: int = 3) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid base64 payload: {exc}") from exc
    return decode_png(raw, channels=channels)


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """HxWxC [0,1] array -> 1xCxHxW float tensor."""
    if img.ndim == 2:
        img = img[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].float()


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """1xCxHxW or CxHxW tensor -> HxWxC float32 array."""
    if t.dim() == 4:
        t = t[0]
    return t.detach().cpu().float().numpy().transpose(1, 2, 0)


def _squeeze_u8(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    return to_uint8(img)
