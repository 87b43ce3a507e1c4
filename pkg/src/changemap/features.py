"""Binary descriptors, keypoints and the features file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numba
import numpy as np

from .errors import MalformedInputError, ParseError

DESCRIPTOR_BITS = 256
DEFAULT_MAX_FEATURES = 2000

# Rows per block when building distance matrices; bounds peak memory.
_BLOCK_ELEMS = 1 << 22


def as_descriptors(x) -> np.ndarray:
    """Coerce to a contiguous (N, nbytes) uint8 array."""
    arr = np.ascontiguousarray(x, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise MalformedInputError(f"descriptor array must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def _words(arr: np.ndarray) -> np.ndarray:
    # View packed bytes as u64 lanes when the width allows it; popcount is per lane.
    if arr.shape[1] % 8 == 0:
        return arr.view(np.uint64)
    return arr


@numba.njit(inline="always")
def _pop64(x):
    # SWAR popcount of one u64 lane.
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@numba.njit(cache=True)
def _hamming_lanes(wa, wb, out):
    for i in range(wa.shape[0]):
        for j in range(wb.shape[0]):
            d = np.uint64(0)
            for k in range(wa.shape[1]):
                d += _pop64(wa[i, k] ^ wb[j, k])
            out[i, j] = d


@numba.njit(cache=True)
def _nearest_lanes(wa, wb, dist, idx):
    for i in range(wa.shape[0]):
        best = np.int64(1) << 62
        arg = 0
        for j in range(wb.shape[0]):
            d = np.int64(0)
            for k in range(wa.shape[1]):
                d += np.int64(_pop64(wa[i, k] ^ wb[j, k]))
            if d < best:
                best = d
                arg = j
        dist[i] = best
        idx[i] = arg


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Number of differing bits between two packed descriptors."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise MalformedInputError(f"descriptor width mismatch: {a.size * 8} vs {b.size * 8} bits")
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def popcount(a: np.ndarray) -> np.ndarray:
    a = as_descriptors(a)
    return np.bitwise_count(_words(a)).sum(axis=1, dtype=np.int64)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs Hamming distances, shape (len(a), len(b)), int64."""
    a = as_descriptors(a)
    b = as_descriptors(b)
    if a.shape[1] != b.shape[1]:
        raise MalformedInputError(f"descriptor width mismatch: {a.shape[1] * 8} vs {b.shape[1] * 8} bits")
    wa, wb = _words(a), _words(b)
    out = np.empty((len(a), len(b)), dtype=np.int64)
    if wa.dtype == np.uint64:
        _hamming_lanes(wa, wb, out)
        return out
    step = max(1, _BLOCK_ELEMS // max(1, len(b) * wa.shape[1]))
    for i in range(0, len(a), step):
        x = wa[i:i + step, None, :] ^ wb[None, :, :]
        out[i:i + step] = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
    return out


def dot_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs popcount(x AND y): the inner product of 0/1 bit vectors."""
    a = as_descriptors(a)
    b = as_descriptors(b)
    wa, wb = _words(a), _words(b)
    out = np.empty((len(a), len(b)), dtype=np.int64)
    step = max(1, _BLOCK_ELEMS // max(1, len(b) * wa.shape[1]))
    for i in range(0, len(a), step):
        x = wa[i:i + step, None, :] & wb[None, :, :]
        out[i:i + step] = np.bitwise_count(x).sum(axis=2, dtype=np.int64)
    return out


def min_distances(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each row of ``a``: (min distance to ``b``, argmin index, lowest on ties)."""
    a = as_descriptors(a)
    b = as_descriptors(b)
    if len(b) == 0:
        raise MalformedInputError("reference descriptor set is empty")
    dist = np.empty(len(a), dtype=np.int64)
    idx = np.empty(len(a), dtype=np.int64)
    wa, wb = _words(a), _words(b)
    if a.shape[1] != b.shape[1]:
        raise MalformedInputError(f"descriptor width mismatch: {a.shape[1] * 8} vs {b.shape[1] * 8} bits")
    if wa.dtype == np.uint64:
        _nearest_lanes(wa, wb, dist, idx)
        return dist, idx
    step = max(1, _BLOCK_ELEMS // max(1, len(b) * wa.shape[1]))
    for i in range(0, len(a), step):
        d = np.bitwise_count(wa[i:i + step, None, :] ^ wb[None, :, :]).sum(axis=2, dtype=np.int64)
        j = d.argmin(axis=1)
        idx[i:i + step] = j
        dist[i:i + step] = d[np.arange(len(j)), j]
    return dist, idx


def descriptor_from_hex(text: str, nbits: int = DESCRIPTOR_BITS) -> np.ndarray:
    if len(text) != nbits // 4:
        raise MalformedInputError(f"expected {nbits // 4} hex chars, got {len(text)}")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise MalformedInputError(f"invalid hex: {text!r}") from exc
    return np.frombuffer(raw, dtype=np.uint8).copy()


def descriptor_to_hex(d: np.ndarray) -> str:
    return np.asarray(d, dtype=np.uint8).tobytes().hex()


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    """Keypoints and packed descriptors of one image.

    ``keypoints`` is (N, 2) float64 of (x, y); ``descriptors`` is (N, D/8) uint8.
    """

    image_id: str
    width: int
    height: int
    keypoints: np.ndarray = field(repr=False)
    descriptors: np.ndarray = field(repr=False)

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        desc = np.asarray(self.descriptors, dtype=np.uint8)
        if desc.size == 0:
            desc = desc.reshape(0, DESCRIPTOR_BITS // 8)
        if desc.ndim != 2 or len(desc) != len(kp):
            raise MalformedInputError(
                f"{self.image_id}: {len(kp)} keypoints but descriptor array of shape {desc.shape}")
        if self.width <= 0 or self.height <= 0:
            raise MalformedInputError(f"{self.image_id}: non-positive image size")
        if len(kp) and ((kp < 0).any() or (kp[:, 0] >= self.width).any() or (kp[:, 1] >= self.height).any()):
            raise MalformedInputError(f"{self.image_id}: keypoint outside {self.width}x{self.height} image")
        kp.setflags(write=False)
        desc = np.ascontiguousarray(desc)
        desc.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def nbits(self) -> int:
        return self.descriptors.shape[1] * 8

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageFeatures):
            return NotImplemented
        return (self.image_id == other.image_id and self.width == other.width
                and self.height == other.height
                and np.array_equal(self.keypoints, other.keypoints)
                and np.array_equal(self.descriptors, other.descriptors))

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "keypoints": [[_num(x), _num(y)] for x, y in self.keypoints],
            "descriptors": [descriptor_to_hex(d) for d in self.descriptors],
        }


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def parse_record(rec: dict, nbits: int = DESCRIPTOR_BITS,
                 max_features: int | None = None) -> ImageFeatures:
    try:
        image_id = str(rec["image_id"])
        width, height = int(rec["width"]), int(rec["height"])
        kps = rec["keypoints"]
        hexes = rec["descriptors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"missing or invalid field: {exc}") from exc
    if len(kps) != len(hexes):
        raise MalformedInputError(f"{len(kps)} keypoints vs {len(hexes)} descriptors")
    if max_features is not None and len(kps) > max_features:
        raise MalformedInputError(f"{len(kps)} features exceeds cap {max_features}")
    desc = np.empty((len(hexes), nbits // 8), dtype=np.uint8)
    for i, h in enumerate(hexes):
        desc[i] = descriptor_from_hex(h, nbits)
    kp = np.asarray(kps, dtype=np.float64).reshape(-1, 2)
    return ImageFeatures(image_id, width, height, kp, desc)


def load_features(path: str | Path, nbits: int = DESCRIPTOR_BITS,
                  max_features: int | None = None) -> list[ImageFeatures]:
    """Read a JSON Lines features file, preserving file order."""
    out: list[ImageFeatures] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                img = parse_record(rec, nbits, max_features)
            except (json.JSONDecodeError, MalformedInputError) as exc:
                raise ParseError(str(exc), record=f"line {lineno}") from exc
            if img.image_id in seen:
                raise ParseError(f"duplicate image_id {img.image_id!r}", record=f"line {lineno}")
            seen.add(img.image_id)
            out.append(img)
    return out


def save_features(path: str | Path, images: Iterable[ImageFeatures]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for img in images:
            fh.write(json.dumps(img.to_record(), separators=(",", ":")))
            fh.write("\n")


def inside(keypoints: np.ndarray, box) -> np.ndarray:
    """Mask of keypoints in the half-open box [x0, x1) x [y0, y1)."""
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    x0, y0, x1, y1 = box
    return (kp[:, 0] >= x0) & (kp[:, 0] < x1) & (kp[:, 1] >= y0) & (kp[:, 1] < y1)
