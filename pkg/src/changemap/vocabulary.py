"""Exemplar codebook used to quantize descriptors into appearance words."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CapacityError, MalformedInputError, ParseError
from .features import ImageFeatures, as_descriptors, min_distances

MAGIC = b"CCMVOCAB"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQ")


def word_bits(size: int) -> int:
    """Bits needed to address ``size`` words: ceil(log2 size)."""
    return max(1, math.ceil(math.log2(size)))


@dataclass(frozen=True, eq=False)
class Vocabulary:
    exemplars: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        ex = np.ascontiguousarray(self.exemplars, dtype=np.uint8)
        if ex.ndim != 2 or len(ex) < 2:
            raise MalformedInputError("vocabulary needs at least 2 exemplars")
        ex.setflags(write=False)
        object.__setattr__(self, "exemplars", ex)

    def __len__(self) -> int:
        return len(self.exemplars)

    @property
    def nbits(self) -> int:
        """Descriptor width D."""
        return self.exemplars.shape[1] * 8

    @property
    def bits(self) -> int:
        """Appearance-word width B."""
        return word_bits(len(self))

    def lookup(self, word_id) -> np.ndarray:
        ids = np.asarray(word_id)
        if (ids < 0).any() or (ids >= len(self)).any():
            raise IndexError(f"word id out of range [0, {len(self)})")
        return self.exemplars[ids]

    def quantize(self, d: np.ndarray) -> int:
        d = np.asarray(d, dtype=np.uint8)
        if d.size * 8 != self.nbits:
            raise MalformedInputError(f"descriptor width {d.size * 8} != vocabulary width {self.nbits}")
        return int(self.quantize_many(d[None, :])[0])

    def quantize_many(self, descriptors: np.ndarray) -> np.ndarray:
        """Nearest exemplar id per descriptor; ties go to the lowest id."""
        descriptors = as_descriptors(descriptors)
        if len(descriptors) == 0:
            return np.zeros(0, dtype=np.int64)
        return min_distances(descriptors, self.exemplars)[1]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, self.nbits, len(self), self.seed)
        return head + self.exemplars.tobytes()

    @cached_property
    def digest(self) -> bytes:
        """SHA-256 of the serialized vocabulary."""
        return hashlib.sha256(self.to_bytes()).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vocabulary":
        if len(data) < _HEADER.size:
            raise ParseError("truncated vocabulary header")
        magic, version, nbits, size, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ParseError(f"bad vocabulary magic {magic!r}")
        if version != VERSION:
            raise ParseError(f"unsupported vocabulary version {version}")
        nbytes = nbits // 8
        body = data[_HEADER.size:]
        if len(body) != size * nbytes:
            raise ParseError(f"vocabulary body is {len(body)} bytes, expected {size * nbytes}")
        ex = np.frombuffer(body, dtype=np.uint8).reshape(size, nbytes)
        return cls(ex.copy(), seed)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_bytes(Path(path).read_bytes())


def distinct_pool(feature_sets: Iterable[ImageFeatures | np.ndarray]) -> np.ndarray:
    """Sorted distinct descriptors drawn from all given images."""
    parts = [f.descriptors if isinstance(f, ImageFeatures) else as_descriptors(f) for f in feature_sets]
    parts = [p for p in parts if len(p)]
    if not parts:
        return np.zeros((0, 32), dtype=np.uint8)
    return np.unique(np.concatenate(parts), axis=0)


def build_vocabulary(feature_sets: Iterable[ImageFeatures | np.ndarray], size: int,
                     seed: int = 0) -> Vocabulary:
    """Uniformly sample ``size`` distinct descriptors as exemplars.

    The pool is deduplicated and sorted before sampling, so the result only
    depends on the set of descriptors and the seed, not on image order.
    """
    pool = distinct_pool(feature_sets)
    if size < 2:
        raise CapacityError("vocabulary size must be at least 2")
    if len(pool) < size:
        raise CapacityError(f"requested {size} exemplars but the pool has only {len(pool)} distinct descriptors")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(pool), size=size, replace=False)
    return Vocabulary(pool[pick], seed)

