"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also repeated in the pytest terminal summary (see conftest).
"""

from __future__ import annotations

import io
import time
from pathlib import Path

import numpy as np

from changemap.ablation import AXES, Variant, ablate
from changemap.classifiers import KernelParams, NNClassifier, gram, solve_dual, train_svm
from changemap.classifiers.smo import dual_objective
from changemap.compressed_map import (CompressedCluster, CompressedMap, CompressedPlace, ImageRecord, MapHeader,
                                      build_place_models, decode_cluster, encode_cluster, negative_payload,
                                      positive_payload, space_cost)
from changemap.evaluation import (X_PERCENT, DistanceOracle, build_collections, evaluate, read_curves_csv,
                                  split_pairs, success_curve, threshold, write_curves_csv)
from changemap.mining import MiningConfig, filter_candidates, mine, mine_positives
from changemap.pipeline import MapDetector
from changemap.proposals import BoundingBox
from changemap.ranking import nms_rerank
from changemap.registration import LinearTransform, match_words, register, visible_region
from changemap.scheduler import simulate, write_cost_csv
from changemap.synth import SynthConfig, synth_generate
from changemap.vocabulary import Vocabulary, build_vocabulary
from oracles import (eq2_direct, kkt_violation, pack_bits_string, percentile_bounds, pose_width, qp_active_set,
                     unpacked_distances)

GOLDEN = Path(__file__).parent / "golden"
RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def _random_cluster(rng, B):
    nreg = int(rng.integers(1, 4))
    regions = []
    for _ in range(nreg):
        x0, y0 = int(rng.integers(0, 600)), int(rng.integers(0, 440))
        regions.append(BoundingBox(x0, y0, x0 + int(rng.integers(1, 41)), y0 + int(rng.integers(1, 41))))
    n = int(rng.integers(1, 30))
    reg = np.sort(rng.integers(0, nreg, n))
    area = np.array([(b.x1 - b.x0) * (b.y1 - b.y0) for b in regions])
    words = rng.integers(0, 1 << B, n)
    poses = rng.integers(0, area[reg])
    order = np.lexsort((poses, words, reg))
    pos = np.sort(rng.integers(0, 1 << B, int(rng.integers(0, 10))))
    kind = "svm" if len(pos) else "nn"
    return CompressedCluster(tuple(regions), words[order], reg[order], poses[order], pos, kind,
                             "rbf", KernelParams(1 / 256), int(rng.integers(0, 2**63)), bool(rng.random() < 0.2))


def test_criterion_01_space_cost_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = []
    for m in range(50):
        B = int(rng.integers(4, 21))
        places = []
        for pid in range(int(rng.integers(1, 4))):
            images = tuple(ImageRecord(f"m{m}p{pid}i{i}", 640, 480,
                                       tuple(_random_cluster(rng, B) for _ in range(int(rng.integers(1, 4)))))
                           for i in range(int(rng.integers(1, 4))))
            places.append(CompressedPlace(pid, images))
        store = CompressedMap(MapHeader(rng.bytes(32), 256, B, 3), places)
        direct = sum(eq2_direct(img.clusters, B) for p in places for img in p.images)
        if space_cost(store).total_bits != direct:
            mismatches.append(f"map {m}: cost")
        for p in places:
            for img in p.images:
                for rec in img.clusters:
                    widths = [pose_width(*(int(v) for v in b)) for b in rec.regions]
                    fields = [f for w, r, q in zip(rec.neg_words, rec.neg_regions, rec.neg_poses)
                              for f in ((int(w), B), (int(q), widths[r]))]
                    if negative_payload(rec, B) != pack_bits_string(fields):
                        mismatches.append(f"map {m}: negative payload")
                    if positive_payload(rec, B) != pack_bits_string([(int(w), B) for w in rec.pos_words]):
                        mismatches.append(f"map {m}: positive payload")
        back = CompressedMap.from_bytes(store.to_bytes())
        same = all(x.same_examples(y) for p, q in zip(places, back.places)
                   for a, b in zip(p.images, q.images) for x, y in zip(a.clusters, b.clusters))
        if not same:
            mismatches.append(f"map {m}: round trip")

    goldens = {
        "cluster_b20_area1024.bin": (CompressedCluster(
            (BoundingBox(0, 0, 32, 32),), [5, 1000, (1 << 20) - 1], [0, 0, 0], [0, 33, 1023], [],
            "svm", "rbf", KernelParams(1 / 256, 0.0, 3), 42), 20),
        "cluster_two_regions_b12.bin": (CompressedCluster(
            (BoundingBox(0, 0, 32, 32), BoundingBox(100, 50, 103, 53)), [7, 7, 4095], [0, 0, 1], [5, 900, 8],
            [1, 2048], "nn", "linear", KernelParams(0.5, 1.0, 2), 2**63 + 5, True), 12),
    }
    for name, (rec, B) in goldens.items():
        blob = (GOLDEN / name).read_bytes()
        if encode_cluster(rec, B) != blob or not decode_cluster(io.BytesIO(blob), B).same_examples(rec):
            mismatches.append(f"golden {name}")
    ninety = goldens["cluster_b20_area1024.bin"][0].eq2_bits(20)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and ninety == 90 and elapsed < 30
    report(1, ok, f"50 maps cost == direct sum, payloads == oracle packing, 2 golden files, "
                  f"worked example {ninety} bits, {elapsed:.1f}s (< 30s) {mismatches[:3]}")


# ---------------------------------------------------------------- 2


def test_criterion_02_lossless_round_trip():
    t0 = time.perf_counter()
    ds = synth_generate(SynthConfig(n_change=7, n_nochange=13, vocab_bits=14, seed=11))
    vocab = build_vocabulary(ds.reference + ds.survey, 1 << 14, seed=0)
    models = build_place_models(ds.reference, ds.reference_proposals, vocab, place_len=1, seed=3)
    store = CompressedMap.from_models(models, vocab, 1)
    store.compress_all()
    restored = CompressedMap.from_bytes(store.to_bytes())
    probes = np.random.default_rng(5).integers(0, 256, size=(1000, 32), dtype=np.uint8)
    n_clf = 0
    bad = []
    for pid, model in enumerate(models):
        again = restored.decompress(pid, vocab)
        for rec0, rec1, live, redo in zip(model.images, again.images, model.classifiers, again.classifiers):
            for c0, c1, f0, f1 in zip(rec0.clusters, rec1.clusters, live, redo):
                n_clf += 1
                words_same = (np.array_equal(c0.neg_words, c1.neg_words)
                              and np.array_equal(c0.pos_words, c1.pos_words) and c0.same_examples(c1))
                if not words_same or not np.array_equal(f0.predict_change_prob(probes),
                                                        f1.predict_change_prob(probes)):
                    bad.append((pid, rec0.image_id))
    elapsed = time.perf_counter() - t0
    ok = len(models) == 20 and n_clf > 0 and not bad and elapsed < 120
    report(2, ok, f"{len(models)} places, {n_clf} classifiers, 1000 probes each, exact equality, "
                  f"{len(bad)} mismatches, {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------- 3


def test_criterion_03_svm_correctness():
    rng = np.random.default_rng(303)
    params = {"linear": KernelParams(), "polynomial": KernelParams(1 / 256, 1.0, 2),
              "sigmoid": KernelParams(1 / 256, 0.0), "rbf": KernelParams(1 / 256)}
    worst_gap, worst_kkt, done = 0.0, 0.0, 0
    for kind, p in params.items():
        for _ in range(200):
            n = int(rng.integers(2, 9))
            X = rng.integers(0, 256, size=(n, 32), dtype=np.uint8)
            y = rng.choice([-1.0, 1.0], n)
            y[0], y[1] = 1.0, -1.0
            C = float(rng.choice([0.1, 1.0, 10.0]))
            K = gram(kind, p, X, X)
            best, _ = qp_active_set(K, y, C)
            tight = solve_dual(K, y, C, tol=1e-10)
            worst_gap = max(worst_gap, abs(dual_objective(tight.alpha, y, K) - best))
            loose = solve_dual(K, y, C, tol=1e-3)
            worst_kkt = max(worst_kkt, kkt_violation(loose.alpha, y, K, C, loose.bias))
            done += 1
    # Two points with equal self-similarity; x is as close to one as to the other.
    bits = np.zeros((3, 256), dtype=np.uint8)
    bits[0, :64] = 1
    bits[1, 64:128] = 1
    bits[2, 32:96] = 1
    pts = np.packbits(bits, axis=1)
    worst_f = 0.0
    for kind, p in params.items():
        clf = train_svm(pts[:1], pts[1:2], kind, C=1.0, tol=1e-12, params=p, folds=2)
        worst_f = max(worst_f, abs(float(clf.decision_function(pts[2:])[0])))
    ok = done == 800 and worst_gap <= 1e-6 and worst_kkt <= 1e-3 and worst_f <= 1e-9
    report(3, ok, f"{done} problems (n<=8, 4 kernels): max |objective - oracle| {worst_gap:.2e} (<= 1e-6), "
                  f"max KKT violation {worst_kkt:.2e} (<= 1e-3), symmetric |f| {worst_f:.2e} (<= 1e-9)")


# ---------------------------------------------------------------- 4


def test_criterion_04_nn_oracle():
    rng = np.random.default_rng(404)
    worst = 0.0
    for n_neg, sigma in ((1, 32.0), (37, 32.0), (400, 12.5)):
        neg = rng.integers(0, 256, size=(n_neg, 32), dtype=np.uint8)
        q = rng.integers(0, 256, size=(10_000, 32), dtype=np.uint8)
        q[:n_neg // 2] = neg[:n_neg // 2]
        d = unpacked_distances(q, neg).min(axis=1).astype(np.float64)
        want = 1.0 - np.exp(-(d / sigma) ** 2)
        got = NNClassifier(neg, sigma).predict_change_prob(q)
        worst = max(worst, float(np.abs(got - want).max()))
    report(4, worst <= 1e-12, f"3 classifiers x 10^4 queries, max |p - exhaustive scan| {worst:.2e} (<= 1e-12)")


# ---------------------------------------------------------------- 5


def _clustered_words(rng, size):
    """Random words plus words 0..30 bit flips away from a few seeds, so distances straddle 10."""
    seeds = rng.integers(0, 2, size=(8, 256), dtype=np.uint8)
    near = seeds[rng.integers(0, 8, size // 2)].copy()
    for row, k in zip(near, rng.integers(0, 31, len(near))):
        row[rng.choice(256, k, replace=False)] ^= 1
    far = rng.integers(0, 2, size=(size - len(near), 256), dtype=np.uint8)
    return np.packbits(np.concatenate([near, far]), axis=1)


def test_criterion_05_mining():
    rng = np.random.default_rng(505)
    mined, min_seen, order_ok = 0, 256, True
    for c in range(100):
        size = int(rng.integers(256, 4097))
        v = Vocabulary(_clustered_words(rng, size))
        neg = rng.choice(size // 2, int(rng.integers(1, 60)), replace=False)
        dist = unpacked_distances(v.exemplars, v.exemplars[neg]).min(axis=1)
        for strat in ("uniform", "farthest", "nearest"):
            got = mine_positives(v, neg, MiningConfig(strat, 10, max_examples=int(rng.integers(1, 400)), seed=c))
            if len(got):
                mined += len(got)
                min_seen = min(min_seen, int(dist[got].min()))
        cand = [w for w in range(size) if dist[w] >= 10]
        k = int(rng.integers(1, 50))
        far = sorted(cand, key=lambda w: (-dist[w], w))[:k]
        near = sorted(cand, key=lambda w: (dist[w], w))[:k]
        c_arr = filter_candidates(v, neg, 10)
        order_ok &= c_arr.tolist() == cand
        order_ok &= mine(v, c_arr, neg, MiningConfig("farthest", 10, k)).tolist() == sorted(far)
        order_ok &= mine(v, c_arr, neg, MiningConfig("nearest", 10, k)).tolist() == sorted(near)
    ok = mined > 0 and min_seen == 10 and order_ok
    report(5, ok, f"100 clusters, {mined} mined positives, min distance to a negative {min_seen} (>= 10, boundary reached), "
                  f"farthest/nearest match sort oracle: {order_ok}")


# ---------------------------------------------------------------- 6


def test_criterion_06_registration():
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(200):
        a, c = rng.uniform(0.5, 2.0, 2)
        b, d = rng.uniform(-100, 100, 2)
        ref = rng.uniform(0, 640, size=(int(rng.integers(3, 200)), 2))
        words = rng.permutation(100_000)[:len(ref)]
        t = register(words, LinearTransform(a, b, c, d).apply(ref), words, ref, 0.1, "hv").transform
        worst = max(worst, max(abs(t.a - a), abs(t.b - b), abs(t.c - c), abs(t.d - d)))
    bounds_ok = True
    for m in range(1, 51):
        q = rng.uniform(0, 640, size=(m, 2))
        r = rng.uniform(0, 640, size=(m, 2))
        region = visible_region(match_words(np.arange(m), q, np.arange(m), r), 0.1, "hv")
        for side, pts in ((region.query, q), (region.reference, r)):
            x0, x1 = percentile_bounds(pts[:, 0].tolist(), 0.1)
            y0, y1 = percentile_bounds(pts[:, 1].tolist(), 0.1)
            bounds_ok &= side == (x0, y0, x1, y1)
    ok = worst <= 1e-9 and bounds_ok
    report(6, ok, f"200 noiseless transforms, max parameter error {worst:.2e} (<= 1e-9); "
                  f"visible-region bounds equal percentile oracle for |M| = 1..50: {bounds_ok}")


# ---------------------------------------------------------------- 7


def test_criterion_07_ranking_protocol():
    want = {"0.1": 200, "0.25": 500, "0.5": 1000, "1": 2000, "2.5": 5000, "5": 10000}
    got = {x: threshold(200_000, x) for x in X_PERCENT}
    rng = np.random.default_rng(707)
    # A rank exactly on the cut counts, one past it does not.
    edge = success_curve("edge", [200, 201, 10000, 10001], [200_000] * 4)
    edge_ok = edge["0.1"] == 0.25 and edge["5"] == 0.75
    monotone = True
    for _ in range(200):
        ranks = [int(r) if r > 0 else None for r in rng.integers(0, 12_000, 20)]
        ratios = [success_curve("r", ranks, [200_000] * 20)[x] for x in X_PERCENT]
        monotone &= all(a <= b for a, b in zip(ratios, ratios[1:]))
    diverse = ordered = True
    for _ in range(1000):
        n = int(rng.integers(1, 300))
        p = rng.choice([0.0, 0.5, 1.0], n) if rng.random() < 0.3 else rng.random(n)
        qc = rng.integers(-1, int(rng.integers(1, 12)), n)
        excl = rng.random(n) < 0.1
        ranked = nms_rerank(np.zeros((n, 2)), p, qc, excl)
        live = [f for f in ranked if not f.excluded]
        # diversity: the k-th member of any cluster never precedes a cluster's (k-1)-th member
        diverse &= all(a.r <= b.r for a, b in zip(live, live[1:]))
        diverse &= all(f.excluded for f in ranked[len(live):])
        for cid in set(qc[~excl].tolist()) - {-1}:
            ps = [f.p for f in live if f.query_cluster == cid]
            ordered &= all(a >= b for a, b in zip(ps, ps[1:]))
    ok = got == want and edge_ok and monotone and diverse and ordered
    report(7, ok, f"thresholds at 200,000 features {list(got.values())}; rank-at-cut {edge_ok}; "
                  f"curves monotone {monotone}; 1000 re-rankings diverse {diverse}, p-monotone {ordered}")


# ---------------------------------------------------------------- 8


def _parity(noise: int, seed: int):
    ds = synth_generate(SynthConfig(n_change=20, n_nochange=40, noise=noise, separation=64,
                                    vocab_bits=16, seed=seed))
    vocab = build_vocabulary(ds.reference + ds.survey, 1 << 16, seed=0)
    models = build_place_models(ds.reference, ds.reference_proposals, vocab, place_len=10, seed=0)
    store = CompressedMap.from_models(models, vocab, 10)
    store.compress_all()
    change, noch = split_pairs(ds.pairs)
    cols = build_collections(change, noch, size=20, count=20, seed=0)
    queries = {q.image_id: q for q in ds.queries}
    pipe = evaluate(cols, MapDetector(store, vocab, queries, ds.query_proposals), "pipeline")
    refs = {r.image_id: r for r in ds.reference}
    oracle = evaluate(cols, DistanceOracle(queries, refs), "oracle")
    return pipe, oracle


def test_criterion_08_end_to_end_parity():
    t0 = time.perf_counter()
    pipe0, orc0 = _parity(0, 1)
    pipe8, orc8 = _parity(8, 1)
    elapsed = time.perf_counter() - t0
    exact = all(pipe0[x] == orc0[x] for x in X_PERCENT)
    full = all(orc0[x] == 1.0 and pipe0[x] == 1.0 for x in ("0.5", "1", "2.5", "5"))
    noisy = pipe8["1"] >= orc8["1"] - 0.05
    ok = exact and full and noisy and elapsed < 600
    report(8, ok, f"noiseless pipeline {[pipe0[x] for x in X_PERCENT]} vs oracle {[orc0[x] for x in X_PERCENT]}; "
                  f"noise 8 at X=1%: pipeline {pipe8['1']:.2f} vs oracle {orc8['1']:.2f} (>= oracle - 0.05); "
                  f"{elapsed:.0f}s (< 600s)")


# ---------------------------------------------------------------- 9


def test_criterion_09_scheduler(tmp_path):
    ds = synth_generate(SynthConfig(n_change=4, n_nochange=8, seed=9))
    pool = np.unique(np.concatenate([r.descriptors for r in ds.reference]), axis=0)
    fill = np.random.default_rng(9).integers(0, 256, size=((1 << 20) - len(pool), 32), dtype=np.uint8)
    vocab = Vocabulary(np.concatenate([pool, fill]))
    models = build_place_models(ds.reference, ds.reference_proposals, vocab, place_len=2, seed=0)
    store = CompressedMap.from_models(models, vocab, 2)
    store.compress_all()
    store = CompressedMap.from_bytes(store.to_bytes())
    max_pose = max(pose_width(*(int(v) for v in b)) for p in store.places for img in p.images
                   for rec in img.clusters for b in rec.regions)
    rng = np.random.default_rng(99)
    bound_ok = True
    rows = []
    for window in (0, 1, 2):
        traj = [int(t) for t in rng.integers(0, len(store), 15)]
        rows = simulate(store, traj, window, vocab)
        bound_ok &= all(len(r.decompressed) <= 2 * window + 1 for r in rows)
    path = tmp_path / "cost.csv"
    write_cost_csv(path, rows, "space cost over time")
    table = np.loadtxt(path, delimiter=",", comments="#", skiprows=2)
    compressed, raw = table[:, 3], table[:, 4]
    factor = float((raw / compressed).min())
    ok = bound_ok and store.header.word_bits == 20 and max_pose <= 21 and factor >= 6
    report(9, ok, f"windows 0/1/2 keep <= 2W+1 places decompressed: {bound_ok}; B = {store.header.word_bits}, "
                  f"max B' = {max_pose}, D = 256; raw/compressed serialized bits = {factor:.1f} (>= 6)")


# ---------------------------------------------------------------- 10


def test_criterion_10_ablation(tmp_path):
    ds = synth_generate(SynthConfig(n_change=4, n_nochange=12, vocab_bits=13, seed=10))
    vocab = build_vocabulary(ds.reference + ds.survey, 1 << 13, seed=0)
    change, noch = split_pairs(ds.pairs)
    cols = build_collections(change, noch, size=8, seed=0)
    queries = {q.image_id: q for q in ds.queries}
    results = ablate(cols, ds.reference, ds.reference_proposals, queries, ds.query_proposals, vocab,
                     AXES, Variant("base", "base"), place_len=5)
    path = tmp_path / "ablation.csv"
    write_curves_csv(path, [r.curve for r in results])
    curves = read_curves_csv(path)
    per_axis = {a: sum(1 for m in curves if m.startswith(a + ":")) for a in AXES}
    non_object = next(r for r in results if r.variant.name == "non-object")
    used = {p.ref_id for c in cols for p in c.pairs}
    one_each = set(non_object.clusters_per_image) == used and set(non_object.clusters_per_image.values()) == {1}
    complete = all(len(v) == len(X_PERCENT) for v in curves.values())
    ok = per_axis == {"object": 3, "classifier": 5, "mining": 5, "visibility": 3} and one_each and complete
    report(10, ok, f"curves per axis {per_axis}; non-object uses one cluster on all "
                   f"{len(non_object.clusters_per_image)} reference images: {one_each}")
