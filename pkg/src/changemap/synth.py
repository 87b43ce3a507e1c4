"""Synthetic reference/query scenes with planted changes and ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .evaluation import Pair, save_annotations
from .features import DESCRIPTOR_BITS, ImageFeatures, hamming_matrix, save_features
from .proposals import BoundingBox, save_proposals
from .registration import LinearTransform


@dataclass(frozen=True)
class SynthConfig:
    width: int = 640
    height: int = 480
    n_change: int = 20
    n_nochange: int = 40
    objects_per_scene: int = 4
    features_per_object: int = 20
    features_per_image: int = 200
    prototypes_per_object: int = 4
    background_prototypes: int = 16
    spread: int = 24  # fixed bit flips separating a feature from its prototype
    noise: int = 0  # bit flips per descriptor, applied independently to each view
    separation: int = 64  # min Hamming distance of change descriptors from the reference image
    transform: tuple[float, float, float, float] = (1.0, 0.0, 1.0, 0.0)
    distractor_proposals: int = 4
    vocab_bits: int | None = None  # pad the reference pool to exactly 2**vocab_bits descriptors
    mining_threshold: int = 10
    nbits: int = DESCRIPTOR_BITS
    seed: int = 0

    def __post_init__(self):
        if self.separation > self.nbits:
            raise ConfigError(f"separation {self.separation} exceeds descriptor width {self.nbits}")
        if self.separation <= self.noise + self.mining_threshold:
            raise ConfigError("separation must exceed noise + mining threshold")
        if self.objects_per_scene * self.features_per_object > self.features_per_image:
            raise ConfigError("object features exceed the per-image feature budget")
        if self.noise < 0 or self.noise > self.nbits:
            raise ConfigError("noise out of range")
        if not 0 <= self.spread <= self.nbits:
            raise ConfigError("spread out of range")
        if self.prototypes_per_object < 1 or self.background_prototypes < 1:
            raise ConfigError("need at least one prototype per object and for the background")

    @property
    def linear_transform(self) -> LinearTransform:
        return LinearTransform(*self.transform)


@dataclass
class SynthDataset:
    config: SynthConfig
    reference: list[ImageFeatures] = field(default_factory=list)
    queries: list[ImageFeatures] = field(default_factory=list)
    reference_proposals: dict[str, list[BoundingBox]] = field(default_factory=dict)
    query_proposals: dict[str, list[BoundingBox]] = field(default_factory=dict)
    pairs: list[Pair] = field(default_factory=list)
    survey: list[ImageFeatures] = field(default_factory=list)

    def query(self, image_id: str) -> ImageFeatures:
        return self._qindex[image_id]

    def reference_image(self, image_id: str) -> ImageFeatures:
        return self._rindex[image_id]

    def __post_init__(self):
        self._reindex()

    def _reindex(self):
        self._qindex = {q.image_id: q for q in self.queries}
        self._rindex = {r.image_id: r for r in self.reference}

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "reference_features": out / "reference_features.jsonl",
            "query_features": out / "query_features.jsonl",
            "reference_proposals": out / "reference_proposals.jsonl",
            "query_proposals": out / "query_proposals.jsonl",
            "annotations": out / "annotations.jsonl",
            "survey_features": out / "survey_features.jsonl",
            "config": out / "synth_config.json",
        }
        save_features(paths["reference_features"], self.reference)
        save_features(paths["query_features"], self.queries)
        save_proposals(paths["reference_proposals"], self.reference_proposals)
        save_proposals(paths["query_proposals"], self.query_proposals)
        save_annotations(paths["annotations"], self.pairs)
        save_features(paths["survey_features"], self.survey)
        paths["config"].write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")
        return paths


def _random_descriptors(rng: np.random.Generator, n: int, nbytes: int) -> np.ndarray:
    return rng.integers(0, 256, size=(n, nbytes), dtype=np.uint8)


def flip_bits(rng: np.random.Generator, desc: np.ndarray, k: int) -> np.ndarray:
    """Flip exactly ``k`` distinct bits of every row."""
    out = desc.copy()
    if k == 0 or len(desc) == 0:
        return out
    nbits = desc.shape[1] * 8
    bits = np.unpackbits(out, axis=1)
    for row in range(len(bits)):
        idx = rng.choice(nbits, size=k, replace=False)
        bits[row, idx] ^= 1
    return np.packbits(bits, axis=1)


def _place_boxes(rng, n, width, height, lo, hi, avoid=(), region=None, tries=2000):
    boxes: list[BoundingBox] = []
    rx0, ry0, rx1, ry1 = region or (0, 0, width, height)
    for _ in range(tries):
        if len(boxes) == n:
            break
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        if rx1 - w <= rx0 or ry1 - h <= ry0:
            continue
        x0 = int(rng.integers(rx0, rx1 - w))
        y0 = int(rng.integers(ry0, ry1 - h))
        b = BoundingBox(x0, y0, x0 + w, y0 + h)
        if any(b.overlaps(o) for o in boxes) or any(b.overlaps(o) for o in avoid):
            continue
        boxes.append(b)
    return boxes


def _points_in(rng, box: BoundingBox, n: int) -> np.ndarray:
    """Integer points strictly inside ``box``."""
    xs = rng.integers(int(box.x0) + 1, int(box.x1), size=n)
    ys = rng.integers(int(box.y0) + 1, int(box.y1), size=n)
    return np.column_stack([xs, ys]).astype(np.float64)


def _points_outside(rng, width, height, boxes, n) -> np.ndarray:
    pts = np.zeros((0, 2))
    while len(pts) < n:
        cand = np.column_stack([rng.integers(0, width, size=2 * n), rng.integers(0, height, size=2 * n)])
        cand = cand.astype(np.float64)
        keep = np.ones(len(cand), dtype=bool)
        for b in boxes:
            keep &= ~b.contains(cand)
        pts = np.concatenate([pts, cand[keep]])
    return pts[:n]


def _jitter(rng, box: BoundingBox, width, height, frac=0.1) -> BoundingBox:
    w, h = box.x1 - box.x0, box.y1 - box.y0
    dx0, dx1 = (rng.uniform(-frac, frac, 2) * w).round()
    dy0, dy1 = (rng.uniform(-frac, frac, 2) * h).round()
    x0, x1 = max(0, box.x0 + dx0), min(width, box.x1 + dx1)
    y0, y1 = max(0, box.y0 + dy0), min(height, box.y1 + dy1)
    if x1 - x0 < 2 or y1 - y0 < 2:
        return box
    return BoundingBox(int(x0), int(y0), int(x1), int(y1))


def _proposals(rng, boxes, width, height, distractors) -> list[BoundingBox]:
    out = []
    for b in boxes:
        out.append(BoundingBox(*map(int, b)))
        out.append(_jitter(rng, b, width, height))
        out.append(_jitter(rng, b, width, height))
    for _ in range(distractors):
        w = int(rng.integers(30, 120))
        h = int(rng.integers(30, 120))
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, height - h))
        out.append(BoundingBox(x0, y0, x0 + w, y0 + h))
    return out


def _map_box(t: LinearTransform, b: BoundingBox, width, height) -> BoundingBox | None:
    (x0, y0), (x1, y1) = t.apply([[b.x0, b.y0], [b.x1, b.y1]])
    x0, x1 = max(0, int(np.floor(min(x0, x1)))), min(width, int(np.ceil(max(x0, x1))))
    y0, y1 = max(0, int(np.floor(min(y0, y1)))), min(height, int(np.ceil(max(y0, y1))))
    if x1 - x0 < 2 or y1 - y0 < 2:
        return None
    return BoundingBox(x0, y0, x1, y1)


def _scene_descriptors(rng, groups, sizes, spread, nbytes):
    """Prototypes per group and the per-feature descriptors derived from them."""
    prototypes, feats = [], []
    for k, n in zip(groups, sizes):
        base = _random_descriptors(rng, k, nbytes)
        prototypes.append(base)
        feats.append(flip_bits(rng, base[rng.integers(0, k, size=n)], spread))
    return np.concatenate(prototypes), np.concatenate(feats)


def _far_descriptors(rng, n, nbytes, avoid: np.ndarray, separation: int,
                     n_prototypes: int = 1, spread: int = 0) -> np.ndarray:
    """Object descriptors all at least ``separation`` bits from every row of ``avoid``."""
    out = []
    while len(out) < n:
        _, cand = _scene_descriptors(rng, [n_prototypes], [4 * n], spread, nbytes)
        d = hamming_matrix(cand, avoid).min(axis=1) if len(avoid) else np.full(len(cand), 1 << 30)
        out.extend(cand[d >= separation])
    return np.array(out[:n], dtype=np.uint8)


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """Generate a dataset of reference/query pairs, a third of them with a planted change.

    Every object (and the background) owns a few random prototypes. A feature
    is one of its object's prototypes with ``spread`` fixed bit flips, so
    features of one object resemble each other while staying distinct. Each
    view then adds its own ``noise``-bit flips. A planted change object
    occludes the query features under its box and contributes descriptors at
    least ``separation`` bits from every prototype and feature of the paired
    reference image.
    """
    rng = np.random.default_rng(cfg.seed)
    nbytes = cfg.nbits // 8
    t = cfg.linear_transform
    W, H = cfg.width, cfg.height
    lo, hi = max(20, min(W, H) // 10), max(40, min(W, H) // 5)
    ds = SynthDataset(cfg)
    n_pairs = cfg.n_change + cfg.n_nochange
    is_change = np.zeros(n_pairs, dtype=bool)
    is_change[rng.choice(n_pairs, cfg.n_change, replace=False)] = True

    for k in range(n_pairs):
        ref_id, qry_id = f"ref{k:05d}", f"qry{k:05d}"
        objects = _place_boxes(rng, cfg.objects_per_scene, W, H, lo, hi)
        kp = [_points_in(rng, b, cfg.features_per_object) for b in objects]
        n_bg = cfg.features_per_image - cfg.features_per_object * len(objects)
        kp.append(_points_outside(rng, W, H, objects, n_bg))
        ref_kp = np.concatenate(kp)
        groups = [cfg.prototypes_per_object] * len(objects) + [cfg.background_prototypes]
        sizes = [cfg.features_per_object] * len(objects) + [n_bg]
        prototypes, protos = _scene_descriptors(rng, groups, sizes, cfg.spread, nbytes)
        ref_desc = flip_bits(rng, protos, cfg.noise)
        ds.reference.append(ImageFeatures(ref_id, W, H, ref_kp, ref_desc))
        ds.reference_proposals[ref_id] = _proposals(rng, objects, W, H, cfg.distractor_proposals)

        q_kp = t.apply(ref_kp)
        inside = (q_kp[:, 0] >= 0) & (q_kp[:, 0] < W) & (q_kp[:, 1] >= 0) & (q_kp[:, 1] < H)
        q_kp, q_desc = q_kp[inside], flip_bits(rng, protos[inside], cfg.noise)
        q_objects = [b for b in (_map_box(t, b, W, H) for b in objects) if b is not None]

        change_boxes: list[BoundingBox] = []
        if is_change[k]:
            central = (int(0.2 * W), int(0.2 * H), int(0.8 * W), int(0.8 * H))
            placed = _place_boxes(rng, 1, W, H, lo, hi, avoid=q_objects, region=central)
            if not placed:
                placed = _place_boxes(rng, 1, W, H, lo, hi, region=central)
            cb = placed[0]
            change_boxes.append(cb)
            keep = ~cb.contains(q_kp)
            q_kp, q_desc = q_kp[keep], q_desc[keep]
            avoid = np.concatenate([prototypes, protos, ref_desc])
            c_protos = _far_descriptors(rng, cfg.features_per_object, nbytes, avoid, cfg.separation,
                                        cfg.prototypes_per_object, cfg.spread)
            c_desc = flip_bits(rng, c_protos, cfg.noise)
            q_kp = np.concatenate([q_kp, _points_in(rng, cb, cfg.features_per_object)])
            q_desc = np.concatenate([q_desc, c_desc])
            q_objects = q_objects + [cb]
            excess = len(q_kp) - cfg.features_per_image
            if excess > 0:
                n_old = len(q_kp) - cfg.features_per_object
                drop = rng.choice(n_old, excess, replace=False)
                keep = np.ones(len(q_kp), dtype=bool)
                keep[drop] = False
                q_kp, q_desc = q_kp[keep], q_desc[keep]
        ds.queries.append(ImageFeatures(qry_id, W, H, q_kp, q_desc))
        ds.query_proposals[qry_id] = _proposals(rng, q_objects, W, H, cfg.distractor_proposals)
        ds.pairs.append(Pair(qry_id, ref_id, tuple(change_boxes)))

    if cfg.vocab_bits is not None:
        ds.survey = _survey(rng, ds.reference, 1 << cfg.vocab_bits, cfg, nbytes)
    ds._reindex()
    return ds


def _survey(rng, reference, target: int, cfg: SynthConfig, nbytes: int) -> list[ImageFeatures]:
    """Filler images whose descriptors bring the distinct reference pool to ``target``."""
    have = np.unique(np.concatenate([r.descriptors for r in reference]), axis=0)
    need = target - len(have)
    if need < 0:
        raise ConfigError(f"reference set already has {len(have)} > {target} distinct descriptors")
    known = {bytes(row) for row in have}
    fresh: list[bytes] = []
    while len(fresh) < need:
        for row in _random_descriptors(rng, need - len(fresh), nbytes):
            b = bytes(row)
            if b not in known:
                known.add(b)
                fresh.append(b)
    desc = np.frombuffer(b"".join(fresh), dtype=np.uint8).reshape(-1, nbytes) if fresh else \
        np.zeros((0, nbytes), dtype=np.uint8)
    out = []
    per = cfg.features_per_image
    for i, s in enumerate(range(0, len(desc), per)):
        chunk = desc[s:s + per]
        kp = np.column_stack([rng.integers(0, cfg.width, len(chunk)),
                              rng.integers(0, cfg.height, len(chunk))]).astype(np.float64)
        out.append(ImageFeatures(f"svy{i:05d}", cfg.width, cfg.height, kp, chunk))
    return out
