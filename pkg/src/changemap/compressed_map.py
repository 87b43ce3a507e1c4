"""Place-specific classifiers stored as visual-word training examples.

A reference image contributes one record per object cluster. The record keeps
the cluster's boxes, its negatives as (appearance word, pose word) pairs, and
its mined positives as appearance words. Decompression looks the words up in
the vocabulary and retrains the classifier with the stored seed, which
reproduces the original classifier exactly.
"""

from __future__ import annotations

import functools
import io
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bitpack import BitReader, BitWriter
from .classifiers import ClassifierConfig, KernelParams, NNClassifier, SVMClassifier, train_classifier
from .classifiers.kernels import KERNELS
from .errors import ConfigError, IntegrityError, ParseError
from .features import ImageFeatures
from .mining import MiningConfig, mine_positives, subsample
from .parallel import pmap
from .proposals import BoundingBox, ObjectCluster, background_only, cluster_regions, pose_bits, select_proposals
from .vocabulary import Vocabulary

MAGIC = b"CCMMAP01"
DEFAULT_PLACE_LEN = 10
MAX_EXAMPLES = 400
KEYPOINT_BITS = 64  # two u32 coordinates per raw negative example

_KINDS = ("nn", "svm")
_HEAD = struct.Struct("<8s32sIIII")
_CLF_GLOBALS = struct.Struct("<dddI")
_CLUSTER_CFG = struct.Struct("<BBdddQ")

Classifier = NNClassifier | SVMClassifier


@dataclass(frozen=True, eq=False)
class CompressedCluster:
    """Training examples of one cluster classifier in visual-word form.

    Negatives are sorted by (region, word, pose); ``neg_regions[k]`` indexes
    ``regions`` and ``neg_poses[k]`` is the row-major pixel offset inside it.
    """

    regions: tuple[BoundingBox, ...]
    neg_words: np.ndarray = field(repr=False)
    neg_regions: np.ndarray = field(repr=False)
    neg_poses: np.ndarray = field(repr=False)
    pos_words: np.ndarray = field(repr=False)
    kind: str = "svm"
    kernel: str = "rbf"
    params: KernelParams = KernelParams()
    seed: int = 0
    is_background: bool = False

    def __post_init__(self):
        for name in ("neg_words", "neg_regions", "neg_poses", "pos_words"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.neg_words) == 0:
            raise ConfigError("a cluster needs at least one negative example")

    @property
    def nn_fallback(self) -> bool:
        return self.kind == "nn"

    def region_bits(self) -> list[int]:
        return [pose_bits(b) for b in self.regions]

    def neg_keypoints(self) -> np.ndarray:
        """Decode pose words back to pixel positions."""
        boxes = np.array([tuple(b) for b in self.regions], dtype=np.int64)[self.neg_regions]
        width = boxes[:, 2] - boxes[:, 0]
        x = boxes[:, 0] + self.neg_poses % width
        y = boxes[:, 1] + self.neg_poses // width
        return np.stack([x, y], axis=1).astype(np.float64)

    def eq2_bits(self, word_bits: int) -> int:
        """Sum over stored negatives of (B + B'_r)."""
        rb = np.array(self.region_bits(), dtype=np.int64)
        return int((word_bits + rb[self.neg_regions]).sum())

    def positive_bits(self, word_bits: int) -> int:
        return word_bits * len(self.pos_words)

    def same_examples(self, other: "CompressedCluster") -> bool:
        return (tuple(self.regions) == tuple(other.regions)
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("neg_words", "neg_regions", "neg_poses", "pos_words"))
                and (self.kind, self.kernel, self.params, self.seed, self.is_background)
                == (other.kind, other.kernel, other.params, other.seed, other.is_background))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    clusters: tuple[CompressedCluster, ...]

    def words_and_keypoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct (word, position) pairs over all clusters, sorted by word."""
        if not self.clusters:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
        words = np.concatenate([c.neg_words for c in self.clusters])
        kps = np.concatenate([c.neg_keypoints() for c in self.clusters])
        table = np.unique(np.column_stack([words, kps]), axis=0)
        return table[:, 0].astype(np.int64), table[:, 1:3]


@dataclass(frozen=True)
class CompressedPlace:
    place_id: int
    images: tuple[ImageRecord, ...]

    @property
    def compressed(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class PlaceModel:
    """A decompressed place: records plus live classifiers, one per cluster."""

    place_id: int
    images: tuple[ImageRecord, ...]
    classifiers: tuple[tuple[Classifier, ...], ...] = field(repr=False)

    @property
    def compressed(self) -> bool:
        return False

    def image(self, image_id: str) -> tuple[ImageRecord, tuple[Classifier, ...]]:
        for rec, clfs in zip(self.images, self.classifiers):
            if rec.image_id == image_id:
                return rec, clfs
        raise KeyError(image_id)


@dataclass(frozen=True)
class MapHeader:
    vocab_digest: bytes
    nbits: int
    word_bits: int
    place_len: int
    C: float = 1.0
    tol: float = 1e-3
    sigma_d: float = 32.0
    folds: int = 5

    def classifier_config(self, kind: str, kernel: str, params: KernelParams) -> ClassifierConfig:
        return ClassifierConfig(kind=kind, kernel=kernel, gamma=params.gamma, coef0=params.coef0,
                                degree=params.degree, C=self.C, tol=self.tol,
                                sigma_d=self.sigma_d, folds=self.folds)


def partition(n_images: int, place_len: int) -> list[range]:
    """Split image indices into consecutive places of ``place_len`` (last may be shorter)."""
    if place_len < 1:
        raise ConfigError("place length must be >= 1")
    return [range(s, min(s + place_len, n_images)) for s in range(0, n_images, place_len)]


def cluster_seed(seed: int, image_id: str, cluster_id: int) -> int:
    ss = np.random.SeedSequence([seed, zlib.crc32(image_id.encode()), cluster_id])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def integer_box(box: BoundingBox, width: int, height: int) -> BoundingBox | None:
    x0 = max(0, math.floor(box.x0))
    y0 = max(0, math.floor(box.y0))
    x1 = min(width, math.ceil(box.x1))
    y1 = min(height, math.ceil(box.y1))
    if x1 <= x0 or y1 <= y0:
        return None
    return BoundingBox(x0, y0, x1, y1)


def image_clusters(img: ImageFeatures, raw_boxes: Sequence[BoundingBox] | None,
                   object_level: bool = True) -> list[ObjectCluster]:
    if not object_level or not raw_boxes:
        return background_only(img.width, img.height)
    boxes = [b for b in (integer_box(b, img.width, img.height) for b in raw_boxes) if b is not None]
    regions = select_proposals(boxes, img.keypoints)
    return cluster_regions(regions, img.width, img.height)


def _negatives(cluster: ObjectCluster, img: ImageFeatures, words: np.ndarray):
    """(word, region, pose) for keypoints inside the cluster, canonically sorted."""
    kp = img.keypoints
    region_of = np.full(len(kp), -1, dtype=np.int64)
    for r, region in enumerate(cluster.regions):
        hit = region.box.contains(kp) & (region_of < 0)
        region_of[hit] = r
    member = np.flatnonzero(region_of >= 0)
    reg = region_of[member]
    boxes = np.array([tuple(r.box) for r in cluster.regions], dtype=np.int64)[reg]
    px = np.floor(kp[member, 0]).astype(np.int64)
    py = np.floor(kp[member, 1]).astype(np.int64)
    pose = (py - boxes[:, 1]) * (boxes[:, 2] - boxes[:, 0]) + (px - boxes[:, 0])
    w = words[member]
    order = np.lexsort((pose, w, reg))
    return w[order], reg[order], pose[order]


def build_image_record(img: ImageFeatures, raw_boxes, vocab: Vocabulary, mining: MiningConfig,
                       clf: ClassifierConfig, seed: int = 0, object_level: bool = True,
                       words: np.ndarray | None = None) -> tuple[ImageRecord, tuple[Classifier, ...]]:
    """Train every cluster classifier of one reference image and keep its examples."""
    if words is None:
        words = vocab.quantize_many(img.descriptors)
    clusters = image_clusters(img, raw_boxes, object_level)
    params = clf.kernel_params(vocab.nbits)
    records, live = [], []
    for cl in clusters:
        nw, nr, npose = _negatives(cl, img, words)
        if len(nw) == 0:
            continue
        s = cluster_seed(seed, img.image_id, cl.id)
        keep = subsample(len(nw), MAX_EXAMPLES, s)
        nw, nr, npose = nw[keep], nr[keep], npose[keep]
        if clf.kind == "svm":
            cfg = MiningConfig(mining.strategy, mining.min_neg_distance, mining.max_examples, s)
            pos = mine_positives(vocab, nw, cfg)
        else:
            pos = np.zeros(0, dtype=np.int64)
        kind = "svm" if clf.kind == "svm" and len(pos) else "nn"
        rec = CompressedCluster(tuple(r.box for r in cl.regions), nw, nr, npose, pos,
                                kind, clf.kernel, params, s, cl.is_background)
        records.append(rec)
        live.append(train_record(rec, vocab, clf.C, clf.tol, clf.sigma_d, clf.folds))
    return ImageRecord(img.image_id, img.width, img.height, tuple(records)), tuple(live)


def train_record(rec: CompressedCluster, vocab: Vocabulary, C: float, tol: float,
                 sigma_d: float, folds: int = 5) -> Classifier:
    cfg = ClassifierConfig(kind=rec.kind, kernel=rec.kernel, gamma=rec.params.gamma,
                           coef0=rec.params.coef0, degree=rec.params.degree, C=C, tol=tol,
                           sigma_d=sigma_d, folds=folds)
    neg = vocab.lookup(rec.neg_words)
    pos = vocab.lookup(rec.pos_words) if len(rec.pos_words) else neg[:0]
    return train_classifier(pos, neg, cfg, rec.seed)


def build_place_models(images: Sequence[ImageFeatures], proposals: Mapping[str, Sequence[BoundingBox]],
                       vocab: Vocabulary, mining: MiningConfig | None = None,
                       clf: ClassifierConfig | None = None, place_len: int = DEFAULT_PLACE_LEN,
                       seed: int = 0, object_level: bool = True,
                       words: Mapping[str, np.ndarray] | None = None,
                       jobs: int | None = 1) -> list[PlaceModel]:
    """Train every reference image and group the results into places of ``place_len``."""
    job = functools.partial(_build_one, vocab=vocab, mining=mining or MiningConfig(),
                            clf=clf or ClassifierConfig(), seed=seed, object_level=object_level)
    tasks = [(img, proposals.get(img.image_id), None if words is None else words.get(img.image_id))
             for img in images]
    built = pmap(job, tasks, jobs)
    places = []
    for pid, idx in enumerate(partition(len(images), place_len)):
        recs = tuple(built[i][0] for i in idx)
        clfs = tuple(built[i][1] for i in idx)
        places.append(PlaceModel(pid, recs, clfs))
    return places


def _build_one(task, vocab, mining, clf, seed, object_level):
    img, boxes, words = task
    return build_image_record(img, boxes, vocab, mining, clf, seed, object_level, words)


def compress_place(m: PlaceModel | CompressedPlace) -> CompressedPlace:
    """Drop the live classifiers; only the example records remain."""
    return CompressedPlace(m.place_id, m.images)


def decompress_place(c: CompressedPlace | PlaceModel, vocab: Vocabulary, header: MapHeader) -> PlaceModel:
    if vocab.digest != header.vocab_digest:
        raise IntegrityError("vocabulary hash does not match the map")
    if isinstance(c, PlaceModel):
        return c
    clfs = tuple(tuple(train_record(rec, vocab, header.C, header.tol, header.sigma_d, header.folds)
                       for rec in img.clusters) for img in c.images)
    return PlaceModel(c.place_id, c.images, clfs)


# ---------------------------------------------------------------- serialization

def encode_cluster(rec: CompressedCluster, word_bits: int) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<BI", int(rec.is_background), len(rec.regions)))
    for b in rec.regions:
        out.write(struct.pack("<IIII", int(b.x0), int(b.y0), int(b.x1), int(b.y1)))
    out.write(_CLUSTER_CFG.pack(_KINDS.index(rec.kind), KERNELS.index(rec.kernel),
                                rec.params.gamma, rec.params.coef0, float(rec.params.degree), rec.seed))
    counts = np.bincount(rec.neg_regions, minlength=len(rec.regions))
    out.write(struct.pack(f"<{len(counts)}I", *counts.tolist()))
    out.write(negative_payload(rec, word_bits))
    out.write(struct.pack("<I", len(rec.pos_words)))
    out.write(positive_payload(rec, word_bits))
    return out.getvalue()


def negative_payload(rec: CompressedCluster, word_bits: int) -> bytes:
    w = BitWriter()
    rb = rec.region_bits()
    for word, reg, pose in zip(rec.neg_words.tolist(), rec.neg_regions.tolist(), rec.neg_poses.tolist()):
        w.write(word, word_bits)
        w.write(pose, rb[reg])
    return w.getvalue()


def positive_payload(rec: CompressedCluster, word_bits: int) -> bytes:
    w = BitWriter()
    for word in rec.pos_words.tolist():
        w.write(word, word_bits)
    return w.getvalue()


def _read(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise ParseError("truncated map file")
    return struct.unpack(fmt, data)


def _read_bytes(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ParseError("truncated map file")
    return data


def decode_cluster(buf: io.BytesIO, word_bits: int) -> CompressedCluster:
    flags, nreg = _read(buf, "<BI")
    regions = tuple(BoundingBox(*_read(buf, "<IIII")) for _ in range(nreg))
    kind, kernel, gamma, coef0, degree, seed = _read(buf, "<" + _CLUSTER_CFG.format.lstrip("<"))
    counts = _read(buf, f"<{nreg}I")
    rb = [pose_bits(b) for b in regions]
    nbits = sum(c * (word_bits + r) for c, r in zip(counts, rb))
    reader = BitReader(_read_bytes(buf, (nbits + 7) // 8))
    words, regs, poses = [], [], []
    for r, c in enumerate(counts):
        for _ in range(c):
            words.append(reader.read(word_bits))
            poses.append(reader.read(rb[r]))
            regs.append(r)
    (npos,) = _read(buf, "<I")
    reader = BitReader(_read_bytes(buf, (npos * word_bits + 7) // 8))
    pos = [reader.read(word_bits) for _ in range(npos)]
    return CompressedCluster(regions, np.array(words), np.array(regs), np.array(poses), np.array(pos),
                             _KINDS[kind], KERNELS[kernel], KernelParams(gamma, coef0, int(degree)),
                             seed, bool(flags & 1))


def encode_place(place: CompressedPlace | PlaceModel, word_bits: int) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(place.images)))
    for img in place.images:
        name = img.image_id.encode("utf-8")
        out.write(struct.pack("<H", len(name)) + name)
        out.write(struct.pack("<III", img.width, img.height, len(img.clusters)))
        for rec in img.clusters:
            out.write(encode_cluster(rec, word_bits))
    return out.getvalue()


def decode_place(buf: io.BytesIO, place_id: int, word_bits: int) -> CompressedPlace:
    (nimg,) = _read(buf, "<I")
    images = []
    for _ in range(nimg):
        (n,) = _read(buf, "<H")
        name = _read_bytes(buf, n).decode("utf-8")
        width, height, ncl = _read(buf, "<III")
        clusters = tuple(decode_cluster(buf, word_bits) for _ in range(ncl))
        images.append(ImageRecord(name, width, height, clusters))
    return CompressedPlace(place_id, tuple(images))


def raw_place_bytes(place: CompressedPlace | PlaceModel, vocab: Vocabulary) -> bytes:
    """The uncompressed training set of a place: full descriptors plus u32 keypoints."""
    out = io.BytesIO()
    for img in place.images:
        for rec in img.clusters:
            out.write(vocab.lookup(rec.neg_words).tobytes())
            out.write(rec.neg_keypoints().astype("<u4").tobytes())
            if len(rec.pos_words):
                out.write(vocab.lookup(rec.pos_words).tobytes())
    return out.getvalue()


def raw_place_bits(place: CompressedPlace | PlaceModel, nbits: int) -> int:
    """Size in bits of :func:`raw_place_bytes` without needing the vocabulary."""
    total = 0
    for img in place.images:
        for rec in img.clusters:
            total += len(rec.neg_words) * (nbits + KEYPOINT_BITS) + len(rec.pos_words) * nbits
    return total


class CompressedMap:
    """Map store: header plus one slot per place, compressed or decompressed.

    Mutations go through :meth:`compress` / :meth:`decompress`; a place is
    never partially decompressed.
    """

    def __init__(self, header: MapHeader, places: Sequence[CompressedPlace | PlaceModel]):
        self.header = header
        self.places: list[CompressedPlace | PlaceModel] = list(places)

    @classmethod
    def from_models(cls, models: Sequence[PlaceModel], vocab: Vocabulary, place_len: int,
                    clf: ClassifierConfig | None = None) -> "CompressedMap":
        clf = clf or ClassifierConfig()
        header = MapHeader(vocab.digest, vocab.nbits, vocab.bits, place_len,
                           clf.C, clf.tol, clf.sigma_d, clf.folds)
        return cls(header, models)

    def __len__(self) -> int:
        return len(self.places)

    def _check(self, place_id: int) -> None:
        if not 0 <= place_id < len(self.places):
            raise KeyError(f"unknown place id {place_id}")

    def is_decompressed(self, place_id: int) -> bool:
        self._check(place_id)
        return not self.places[place_id].compressed

    def decompressed_ids(self) -> list[int]:
        return [i for i, p in enumerate(self.places) if not p.compressed]

    def compress(self, place_id: int) -> None:
        self._check(place_id)
        self.places[place_id] = compress_place(self.places[place_id])

    def decompress(self, place_id: int, vocab: Vocabulary) -> PlaceModel:
        self._check(place_id)
        model = decompress_place(self.places[place_id], vocab, self.header)
        self.places[place_id] = model
        return model

    def compress_all(self) -> None:
        for i in range(len(self.places)):
            self.compress(i)

    def find_image(self, image_id: str) -> int:
        for i, p in enumerate(self.places):
            if any(img.image_id == image_id for img in p.images):
                return i
        raise KeyError(f"image {image_id!r} not in map")

    def to_bytes(self) -> bytes:
        h = self.header
        out = io.BytesIO()
        out.write(_HEAD.pack(MAGIC, h.vocab_digest, h.nbits, h.word_bits, h.place_len, len(self.places)))
        out.write(_CLF_GLOBALS.pack(h.C, h.tol, h.sigma_d, h.folds))
        for p in self.places:
            out.write(encode_place(p, h.word_bits))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedMap":
        buf = io.BytesIO(data)
        head = buf.read(_HEAD.size)
        if len(head) != _HEAD.size:
            raise ParseError("truncated map header")
        magic, digest, nbits, word_bits, place_len, nplaces = _HEAD.unpack(head)
        if magic != MAGIC:
            raise ParseError(f"bad map magic {magic!r}")
        C, tol, sigma_d, folds = _read(buf, "<" + _CLF_GLOBALS.format.lstrip("<"))
        header = MapHeader(digest, nbits, word_bits, place_len, C, tol, sigma_d, folds)
        places = [decode_place(buf, i, word_bits) for i in range(nplaces)]
        if buf.read(1):
            raise ParseError("trailing bytes after last place")
        return cls(header, places)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "CompressedMap":
        return cls.from_bytes(Path(path).read_bytes())

    def place_bits(self, place_id: int) -> int:
        """Serialized size of one place record, in bits."""
        return 8 * len(encode_place(self.places[place_id], self.header.word_bits))

    def raw_bits(self, place_id: int) -> int:
        return raw_place_bits(self.places[place_id], self.header.nbits)


# ---------------------------------------------------------------- space cost

@dataclass(frozen=True)
class ClusterCost:
    place_id: int
    image_id: str
    cluster_index: int
    n_negatives: int
    n_positives: int
    eq2_bits: int
    positive_bits: int
    payload_bits: int


@dataclass(frozen=True)
class SpaceCostReport:
    total_bits: int
    positive_bits: int
    clusters: tuple[ClusterCost, ...]
    serialized_bytes: int

    def per_place(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.clusters:
            out[c.place_id] = out.get(c.place_id, 0) + c.eq2_bits
        return out


def space_cost(places: Sequence[CompressedPlace | PlaceModel] | CompressedMap,
               word_bits: int | None = None) -> SpaceCostReport:
    """Total storage in bits: sum over places, regions and stored words of (B + B').

    Mined positives carry no pose word; their B-bit ids are reported separately.
    """
    serialized = 0
    if isinstance(places, CompressedMap):
        word_bits = places.header.word_bits
        serialized = len(places.to_bytes())
        places = places.places
    if word_bits is None:
        raise ConfigError("word_bits is required when passing bare places")
    rows = []
    for p in places:
        for img in p.images:
            for k, rec in enumerate(img.clusters):
                payload = 8 * (len(negative_payload(rec, word_bits)) + len(positive_payload(rec, word_bits)))
                rows.append(ClusterCost(p.place_id, img.image_id, k, len(rec.neg_words), len(rec.pos_words),
                                        rec.eq2_bits(word_bits), rec.positive_bits(word_bits), payload))
    total = sum(r.eq2_bits for r in rows)
    pos = sum(r.positive_bits for r in rows)
    return SpaceCostReport(total, pos, tuple(rows), serialized)
