"""Seed derivation, content hashing, atomic file writes, and image value-range helpers.

Value-range convention: in-memory working images are float arrays in [-1, 1];
files store 8-bit RGB with the affine map u8 = round((x + 1) / 2 * 255).
"""

import hashlib
import json
import os
import tempfile

import numpy as np
import torch
from PIL import Image


def derive_seed(seed: int, *names: str) -> int:
    """Derive a named substream seed from a master seed.

    Stable across processes/platforms (unlike ``hash``), so components seeded
    through this function are reproducible from the single top-level seed.
    """
    payload = str(int(seed)) + "".join("/" + n for n in names)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprint_json(obj) -> str:
    """Hash of a JSON-serializable object, independent of dict ordering."""
    return sha256_bytes(json.dumps(obj, sort_keys=True, default=str).encode("utf-8"))


def fingerprint_array(arr) -> str:
    """Hash of an array's dtype, shape and raw contents."""
    a = arr.detach().cpu().numpy() if isinstance(arr, torch.Tensor) else np.asarray(arr)
    a = np.ascontiguousarray(a)
    h = hashlib.sha256()
    h.update(str(a.dtype).encode())
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def fingerprint_state_dict(state_dict) -> str:
    """Hash of model weights; order-independent via sorted parameter names."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        h.update(fingerprint_array(state_dict[name]).encode())
    return h.hexdigest()


def atomic_torch_save(obj, path) -> None:
    """Write via a temporary file and rename, so concurrent writers never leave partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(obj, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1, 1] float -> uint8 with round-half-away handled by np.rint."""
    x = np.clip(img, -1.0, 1.0)
    return np.rint((x + 1.0) * 0.5 * 255.0).astype(np.uint8)


def from_uint8(u8: np.ndarray) -> np.ndarray:
    """uint8 -> [-1, 1] float64."""
    return u8.astype(np.float64) / 255.0 * 2.0 - 1.0


def save_image(img: np.ndarray, path) -> None:
    """Save an H x W x 3 float image in [-1, 1] as 8-bit PNG."""
    Image.fromarray(to_uint8(img)).save(os.fspath(path))


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB image as H x W x 3 float64 in [-1, 1]."""
    with Image.open(os.fspath(path)) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def hwc_to_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """H x W x C (or N x H x W x C) numpy image -> N x C x H x W tensor."""
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def tensor_to_hwc(x: torch.Tensor) -> np.ndarray:
    """N x C x H x W tensor -> N x H x W x C float64 array (squeezes N == 1)."""
    arr = x.detach().cpu().numpy().astype(np.float64).transpose(0, 2, 3, 1)
    return arr[0] if arr.shape[0] == 1 else arr
