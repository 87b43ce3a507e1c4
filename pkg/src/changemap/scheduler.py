"""Traversal-driven compress/decompress scheduling over a map store."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .compressed_map import CompressedMap
from .vocabulary import Vocabulary

DEFAULT_WINDOW = 1


@dataclass(frozen=True)
class Action:
    op: str  # "compress" | "decompress"
    place_id: int


def plan_step(decompressed: Iterable[int], current: int, window: int, n_places: int) -> list[Action]:
    """Actions that leave exactly the places within ``window`` of ``current`` decompressed.

    Compressions come first so the resident set never exceeds 2*window + 1.
    """
    if not 0 <= current < n_places:
        raise KeyError(f"unknown place id {current}")
    if window < 0:
        raise ValueError("window must be >= 0")
    want = set(range(max(0, current - window), min(n_places, current + window + 1)))
    have = set(decompressed)
    return ([Action("compress", p) for p in sorted(have - want)]
            + [Action("decompress", p) for p in sorted(want - have)])


def scheduler_step(store: CompressedMap, current: int, window: int, vocab: Vocabulary) -> list[Action]:
    actions = plan_step(store.decompressed_ids(), current, window, len(store))
    for a in actions:
        if a.op == "compress":
            store.compress(a.place_id)
        else:
            store.decompress(a.place_id, vocab)
    return actions


@dataclass(frozen=True)
class FrameCost:
    frame_id: int
    place_id: int
    resident_bits: int
    compressed_bits: int
    raw_bits: int
    decompressed: tuple[int, ...]


def simulate(store: CompressedMap, trajectory: Sequence[int], window: int,
             vocab: Vocabulary) -> list[FrameCost]:
    """Replay a place-id trajectory, recording memory use after every step.

    ``resident_bits`` counts decompressed places at their raw-descriptor size
    and the rest at their serialized compressed size.
    """
    comp = [store.place_bits(i) for i in range(len(store))]
    raw = [store.raw_bits(i) for i in range(len(store))]
    rows = []
    for frame, pid in enumerate(trajectory):
        scheduler_step(store, pid, window, vocab)
        live = tuple(store.decompressed_ids())
        resident = sum(raw[i] if i in live else comp[i] for i in range(len(store)))
        rows.append(FrameCost(frame, pid, resident, sum(comp), sum(raw), live))
    return rows


def write_cost_csv(path: str | Path, rows: Sequence[FrameCost], header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["frame_id", "place_id", "resident_bits", "compressed_bits", "raw_bits"])
        for r in rows:
            w.writerow([r.frame_id, r.place_id, r.resident_bits, r.compressed_bits, r.raw_bits])
