"""Command-line front end: ``changemap <command> [flags]``.

Flags override values from ``--config`` (a JSON object), which override the
built-in defaults. Every output records the resolved configuration: CSV files
in ``#`` header lines, binary files in a ``<file>.config.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .ablation import AXES, Variant, ablate
from .classifiers import ClassifierConfig
from .compressed_map import CompressedMap, build_place_models, space_cost
from .errors import ChangeMapError, ConfigError
from .evaluation import (DEFAULT_COLLECTION_COUNT, DEFAULT_COLLECTION_SIZE, DistanceOracle, build_collections,
                         evaluate, load_annotations, split_pairs, write_curves_csv)
from .features import DEFAULT_MAX_FEATURES, ImageFeatures, load_features
from .mining import MiningConfig
from .pipeline import DetectConfig, MapDetector
from .proposals import BoundingBox, load_proposals
from .ranking import ranking_rows, write_ranking_csv
from .scheduler import simulate, write_cost_csv
from .synth import SynthConfig, synth_generate
from .vocabulary import Vocabulary, build_vocabulary

COMMANDS = ("vocab-build", "map-build", "compress", "decompress", "detect", "evaluate", "ablate",
            "simulate", "synth")


@dataclass
class RunConfig:
    """Everything a run depends on; serializing it is enough to repeat the run."""

    command: str = ""
    features: list[str] = field(default_factory=list)
    proposals: list[str] = field(default_factory=list)
    ref_features: list[str] = field(default_factory=list)
    ref_proposals: list[str] = field(default_factory=list)
    annotations: str | None = None
    vocab: str | None = None
    map: str | None = None
    out: str | None = None
    vocab_bits: int = 16
    place_len: int = 10
    window: int = 1
    delta: float = 0.1
    margin: float = 0.1
    classifier: str = "svm"
    kernel: str = "rbf"
    mining: str = "uniform"
    mining_min_bits: int = 10
    sigma_d: float = 32.0
    svm_c: float = 1.0
    seed: int = 0
    jobs: int | None = None
    visibility: str = "hv"
    suppression: bool = True
    object_level: bool = True
    max_features: int = DEFAULT_MAX_FEATURES
    collection_size: int = DEFAULT_COLLECTION_SIZE
    collections: int = DEFAULT_COLLECTION_COUNT
    query_id: str | None = None
    ref_id: str | None = None
    trajectory: list[int] = field(default_factory=list)
    axes: list[str] = field(default_factory=lambda: list(AXES))
    n_change: int = 20
    n_nochange: int = 40
    noise: int = 0
    separation: int = 64
    transform: list[float] = field(default_factory=lambda: [1.0, 0.0, 1.0, 0.0])

    def validate(self) -> None:
        if not 1 <= self.vocab_bits <= 32:
            raise ConfigError("vocab-bits must lie in [1, 32]")
        if self.place_len < 1:
            raise ConfigError("place-len must be >= 1")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.classifier_config()
        self.mining_config()
        self.detect_config()

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(kind=self.classifier, kernel=self.kernel, C=self.svm_c, sigma_d=self.sigma_d)

    def mining_config(self) -> MiningConfig:
        return MiningConfig(self.mining, self.mining_min_bits, seed=self.seed)

    def detect_config(self) -> DetectConfig:
        return DetectConfig(self.delta, self.visibility, self.margin, self.suppression)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_FIELDS = {f.name for f in fields(RunConfig)}


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS  # unset flags stay absent so the config file can supply them
    g = common.add_argument_group("inputs and outputs")
    g.add_argument("--config", default=None, help="JSON file of RunConfig values")
    g.add_argument("--features", nargs="+", default=d, help="features file(s), JSON Lines")
    g.add_argument("--proposals", nargs="+", default=d, help="proposal file(s), JSON Lines")
    g.add_argument("--ref-features", nargs="+", default=d, help="reference features (ablate, oracle curve)")
    g.add_argument("--ref-proposals", nargs="+", default=d, help="reference proposals (ablate)")
    g.add_argument("--annotations", default=d)
    g.add_argument("--vocab", default=d)
    g.add_argument("--map", default=d)
    g.add_argument("--out", default=d)
    k = common.add_argument_group("pipeline")
    k.add_argument("--vocab-bits", type=int, default=d)
    k.add_argument("--place-len", type=int, default=d)
    k.add_argument("--window", type=int, default=d)
    k.add_argument("--delta", type=float, default=d)
    k.add_argument("--margin", type=float, default=d)
    k.add_argument("--classifier", choices=("nn", "svm"), default=d)
    k.add_argument("--kernel", choices=("linear", "sigmoid", "poly", "polynomial", "rbf"), default=d)
    k.add_argument("--mining", choices=("uniform", "farthest", "nearest"), default=d)
    k.add_argument("--mining-min-bits", type=int, default=d)
    k.add_argument("--sigma-d", type=float, default=d)
    k.add_argument("--svm-c", type=float, default=d)
    k.add_argument("--seed", type=int, default=d)
    k.add_argument("--jobs", type=int, default=d)
    k.add_argument("--visibility", choices=("hv", "h", "none"), default=d)
    k.add_argument("--suppression", type=_on_off, default=d, metavar="{on,off}")
    k.add_argument("--object-level", type=_on_off, default=d, metavar="{on,off}")
    k.add_argument("--max-features", type=int, default=d)
    e = common.add_argument_group("evaluation and replay")
    e.add_argument("--collection-size", type=int, default=d)
    e.add_argument("--collections", type=int, default=d)
    e.add_argument("--query-id", default=d)
    e.add_argument("--ref-id", default=d)
    e.add_argument("--trajectory", type=_int_list, default=d, help="place ids, e.g. 0,1,2,3")
    e.add_argument("--axes", nargs="+", choices=AXES, default=d)
    s = common.add_argument_group("synthetic data")
    s.add_argument("--n-change", type=int, default=d)
    s.add_argument("--n-nochange", type=int, default=d)
    s.add_argument("--noise", type=int, default=d)
    s.add_argument("--separation", type=int, default=d)
    s.add_argument("--transform", type=_float_list, default=d, help="a,b,c,d for x'=ax+b, y'=cy+d")

    parser = argparse.ArgumentParser(prog="changemap", description="Compressive change detection pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "vocab-build": "sample a vocabulary from features files",
        "map-build": "train place-specific classifiers and write a map",
        "compress": "rewrite a map with every place compressed, reporting sizes",
        "decompress": "retrain every classifier of a map and report them",
        "detect": "rank the features of one query image against a reference image",
        "evaluate": "success curve over collections of annotated pairs",
        "ablate": "success curves for every method variant",
        "simulate": "replay a place trajectory through the scheduler",
        "synth": "generate a synthetic dataset",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    for key, val in vars(args).items():
        if key in _FIELDS and key != "command":
            values[key] = val
    values["command"] = args.command
    for key in ("features", "proposals", "ref_features", "ref_proposals"):
        if isinstance(values.get(key), str):
            values[key] = [values[key]]
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- helpers

def _need(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"{cfg.command} requires {flags}")


def _features(paths: Sequence[str], cfg: RunConfig) -> list[ImageFeatures]:
    out: list[ImageFeatures] = []
    for p in paths:
        out.extend(load_features(p, max_features=cfg.max_features))
    ids = [f.image_id for f in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate image ids across features files")
    return out


def _proposals(paths: Sequence[str]) -> dict[str, list[BoundingBox]]:
    out: dict[str, list[BoundingBox]] = {}
    for p in paths:
        out.update(load_proposals(p))
    return out


def _header(cfg: RunConfig) -> str:
    return f"changemap {__version__}\nconfig: {cfg.to_json()}"


def _sidecar(path: str | Path, cfg: RunConfig, extra: dict | None = None) -> None:
    payload = {"changemap_version": __version__, "config": asdict(cfg)}
    if extra:
        payload.update(extra)
    Path(f"{path}.config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_map_and_vocab(cfg: RunConfig) -> tuple[CompressedMap, Vocabulary]:
    _need(cfg, "map", "vocab")
    return CompressedMap.load(cfg.map), Vocabulary.load(cfg.vocab)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- commands

def cmd_vocab_build(cfg: RunConfig) -> None:
    _need(cfg, "features", "out")
    v = build_vocabulary(_features(cfg.features, cfg), 1 << cfg.vocab_bits, cfg.seed)
    v.save(cfg.out)
    _sidecar(cfg.out, cfg, {"vocab_sha256": v.digest.hex()})
    _say(f"wrote {cfg.out}: {len(v)} words of {v.nbits} bits")


def cmd_map_build(cfg: RunConfig) -> None:
    _need(cfg, "features", "vocab", "out")
    v = Vocabulary.load(cfg.vocab)
    images = _features(cfg.features, cfg)
    props = _proposals(cfg.proposals)
    clf = cfg.classifier_config()
    models = build_place_models(images, props, v, cfg.mining_config(), clf, cfg.place_len, cfg.seed,
                                cfg.object_level, jobs=cfg.jobs)
    store = CompressedMap.from_models(models, v, cfg.place_len, clf)
    store.compress_all()
    store.save(cfg.out)
    report = space_cost(store)
    cost = {"space_cost_bits": report.total_bits, "positive_id_bits": report.positive_bits,
            "serialized_bytes": report.serialized_bytes, "places": len(store),
            "clusters": len(report.clusters),
            "per_place_bits": {str(k): v for k, v in report.per_place().items()}}
    Path(f"{cfg.out}.cost.json").write_text(json.dumps(cost, indent=2, sort_keys=True) + "\n")
    _sidecar(cfg.out, cfg, {"space_cost": cost})
    _say(f"wrote {cfg.out}: {len(store)} places, {report.total_bits} bits by the stored-word count")


def cmd_compress(cfg: RunConfig) -> None:
    _need(cfg, "map", "out")
    store = CompressedMap.load(cfg.map)
    store.compress_all()
    store.save(cfg.out)
    raw = sum(store.raw_bits(i) for i in range(len(store)))
    comp = sum(store.place_bits(i) for i in range(len(store)))
    _sidecar(cfg.out, cfg, {"compressed_bits": comp, "raw_bits": raw})
    _say(f"wrote {cfg.out}: {comp} compressed bits vs {raw} raw-descriptor bits")


def cmd_decompress(cfg: RunConfig) -> None:
    _need(cfg, "out")
    store, v = _load_map_and_vocab(cfg)
    rows = []
    for pid in range(len(store)):
        model = store.decompress(pid, v)
        for rec, clfs in zip(model.images, model.classifiers):
            for k, (c, clf) in enumerate(zip(rec.clusters, clfs)):
                row = {"place_id": pid, "image_id": rec.image_id, "cluster": k, "kind": c.kind,
                       "negatives": len(c.neg_words), "positives": len(c.pos_words)}
                if c.kind == "svm":
                    row.update(kernel=c.kernel, support_vectors=int(len(clf.support_vectors)),
                               bias=clf.bias, platt_A=clf.platt_A, platt_B=clf.platt_B)
                rows.append(row)
    with open(cfg.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"changemap_version": __version__, "config": asdict(cfg)}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _say(f"wrote {cfg.out}: {len(rows)} classifiers retrained")


def cmd_detect(cfg: RunConfig) -> None:
    _need(cfg, "features", "query_id", "ref_id", "out")
    store, v = _load_map_and_vocab(cfg)
    queries = {q.image_id: q for q in _features(cfg.features, cfg)}
    if cfg.query_id not in queries:
        raise ConfigError(f"query image {cfg.query_id!r} not found in --features")
    detector = MapDetector(store, v, queries, _proposals(cfg.proposals), cfg.detect_config())
    det = detector.detect(cfg.query_id, cfg.ref_id)
    truth = None
    if cfg.annotations:
        for p in load_annotations(cfg.annotations):
            if (p.query_id, p.ref_id) == (cfg.query_id, cfg.ref_id):
                truth = p.truth_mask(queries[cfg.query_id].keypoints)
    rows = ranking_rows(det.ranked, cfg.query_id, "", truth)
    write_ranking_csv(cfg.out, rows, _header(cfg))
    _say(f"wrote {cfg.out}: {len(rows)} ranked features, max p over scored features {det.max_p():.6f}")


def _collections(cfg: RunConfig):
    pairs = load_annotations(cfg.annotations)
    change, nochange = split_pairs(pairs)
    count = min(cfg.collections, len(change))
    return build_collections(change, nochange, cfg.collection_size, count, cfg.seed)


def cmd_evaluate(cfg: RunConfig) -> None:
    _need(cfg, "features", "annotations", "out")
    store, v = _load_map_and_vocab(cfg)
    queries = {q.image_id: q for q in _features(cfg.features, cfg)}
    cols = _collections(cfg)
    detector = MapDetector(store, v, queries, _proposals(cfg.proposals), cfg.detect_config())
    curves = [evaluate(cols, detector, "pipeline", jobs=cfg.jobs)]
    if cfg.ref_features:
        refs = {r.image_id: r for r in _features(cfg.ref_features, cfg)}
        curves.append(evaluate(cols, DistanceOracle(queries, refs), "distance-oracle", jobs=cfg.jobs))
    write_curves_csv(cfg.out, curves, _header(cfg))
    _say(f"wrote {cfg.out}: " + ", ".join(f"{c.method} {dict(c.ratios)}" for c in curves))


def cmd_ablate(cfg: RunConfig) -> None:
    _need(cfg, "features", "ref_features", "annotations", "vocab", "out")
    v = Vocabulary.load(cfg.vocab)
    queries = {q.image_id: q for q in _features(cfg.features, cfg)}
    refs = _features(cfg.ref_features, cfg)
    base = Variant("base", "base", cfg.object_level, cfg.classifier_config(), cfg.mining_config(),
                   cfg.detect_config())
    results = ablate(_collections(cfg), refs, _proposals(cfg.ref_proposals), queries,
                     _proposals(cfg.proposals), v, cfg.axes, base, cfg.place_len, cfg.seed, cfg.jobs)
    write_curves_csv(cfg.out, [r.curve for r in results], _header(cfg))
    _say(f"wrote {cfg.out}: {len(results)} curves")


def cmd_simulate(cfg: RunConfig) -> None:
    _need(cfg, "out")
    store, v = _load_map_and_vocab(cfg)
    traj = cfg.trajectory or list(range(len(store)))
    rows = simulate(store, traj, cfg.window, v)
    write_cost_csv(cfg.out, rows, _header(cfg))
    peak = max(len(r.decompressed) for r in rows) if rows else 0
    _say(f"wrote {cfg.out}: {len(rows)} frames, at most {peak} places decompressed")


def cmd_synth(cfg: RunConfig) -> None:
    _need(cfg, "out")
    scfg = SynthConfig(n_change=cfg.n_change, n_nochange=cfg.n_nochange, noise=cfg.noise,
                       separation=cfg.separation, transform=tuple(cfg.transform),
                       vocab_bits=cfg.vocab_bits, mining_threshold=cfg.mining_min_bits, seed=cfg.seed)
    paths = synth_generate(scfg).write(cfg.out)
    Path(cfg.out, "run_config.json").write_text(
        json.dumps({"changemap_version": __version__, "config": asdict(cfg)}, indent=2, sort_keys=True) + "\n")
    _say(f"wrote {len(paths)} files to {cfg.out}")


_HANDLERS = {
    "vocab-build": cmd_vocab_build, "map-build": cmd_map_build, "compress": cmd_compress,
    "decompress": cmd_decompress, "detect": cmd_detect, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
    "simulate": cmd_simulate, "synth": cmd_synth,
}


def _error_line(kind: str, exc: BaseException) -> str:
    return "error: " + json.dumps({"type": kind, "message": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        _HANDLERS[cfg.command](cfg)
    except (ChangeMapError, ValueError, TypeError) as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, TypeError)) else 1
    except (OSError, KeyError) as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
