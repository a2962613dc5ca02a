"""Acceptance criteria, one test each.

Every test records a ``criterion N: PASS|FAIL|SKIP`` line; the lines are
printed together in the pytest terminal summary (see conftest.py). Run
alone with ``python3 -m pytest tests/test_acceptance.py -v``.
"""

import csv
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from drex import evaluate as ev
from drex.checks import run_gradchecks
from drex.cli import main
from drex.config import TrainConfig
from drex.core import tape as T
from drex.ingest import ingest
from drex.model import fuse, gru_update
from drex.synth import SynthSpec, drop_reviews, generate, write_dataset
from drex.text import load_embedding_file
from drex.train import train

from oracles import random_instance, ref_mae, ref_ndcg, ref_prf

RESULTS = {}


def verdict(n, ok, detail, skipped=False):
    status = "SKIP" if skipped else ("PASS" if ok else "FAIL")
    RESULTS[n] = f"criterion {n}: {status}  {detail}"
    print(RESULTS[n])
    return ok


# ---------------------------------------------------------------------------
# shared synthetic run (criteria 5 and 6)

SYNTH_SEED = 0
SYNTH_CFG = TrainConfig(d=16, embedder_kind="file_table")


def run_synth(root, records, manifest, mapping):
    paths = write_dataset(root, records, manifest, mapping)
    bundle, _ = ingest(paths["corpus"], seed=SYNTH_SEED)
    provider = load_embedding_file(paths["embeddings"])
    t0 = time.perf_counter()
    res = train(bundle, replace(SYNTH_CFG, embedder_path=str(paths["embeddings"])), provider)
    return {"bundle": bundle, "result": res, "report": res.model.report(bundle),
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def synth_data():
    return generate(SynthSpec(), SYNTH_SEED)


@pytest.fixture(scope="module")
def full_run(synth_data, tmp_path_factory):
    return run_synth(tmp_path_factory.mktemp("full"), *synth_data)


# ---------------------------------------------------------------------------


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    results = run_gradchecks(0)
    secs = time.perf_counter() - t0
    worst_name, worst = max(results, key=lambda r: r[1])
    names = {n for n, _ in results}
    need = {"projection", "softmax_attention", "rating_embedding", "fusion", "gru_u", "gru_i", "mlp_head",
            "enc_u", "enc_i", "full_loss"}
    ok = need <= names and worst < 1e-4 and secs < 60
    verdict(1, ok, f"max rel err {worst:.2e} ({worst_name}) over {len(results)} checks, {secs:.1f}s")
    assert need <= names
    assert worst < 1e-4
    assert secs < 60


def test_2_metric_oracles():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(200):
        users = random_instance(rng, max_users=10, max_cands=20, discrete=n % 2 == 1)
        rs = [ev.UserRanking(u, items, sc, tr) for u, (items, sc, tr) in enumerate(users)]
        preds = [s for _, sc, _ in users for s in sc]
        truths = [t for _, _, tr in users for t in tr]
        worst = max(worst, abs(ev.mae(preds, truths) - ref_mae(preds, truths)))
        for k in range(1, 6):
            for a, b in zip(ev.f1_at_k(rs, k), ref_prf(users, k)):
                worst = max(worst, abs(a - b))
            for mode in ("capped", "paper_literal"):
                worst = max(worst, abs(ev.ndcg_at_k(rs, k, mode) - ref_ndcg(users, k, mode)))
    secs = time.perf_counter() - t0
    verdict(2, worst <= 1e-12 and secs < 10, f"max |diff| {worst:.1e} over 200 instances, {secs:.2f}s")
    assert worst <= 1e-12
    assert secs < 10


PUBLISHED_NDCG1 = [  # rows: EMF, DMF, DeepCoNN, NARRE, PESI, DReX, DReX-MLP; cols: 3 datasets
    [0.4197, 0.4803, 0.4896],
    [0.3752, 0.4227, 0.4484],
    [0.4864, 0.5162, 0.5345],
    [0.4899, 0.5023, 0.5534],
    [0.6104, 0.6666, 0.6482],
    [0.6720, 0.6512, 0.7333],
    [0.6490, 0.6765, 0.7073],
]


def test_3_rank_statistics():
    cd = ev.nemenyi_cd(7, 3, 2.949)
    res = ev.friedman_ranks(PUBLISHED_NDCG1)
    order = np.argsort(res.mean_ranks, kind="stable")
    top_two = set(order[:2].tolist()) == {5, 6}
    ok = abs(cd - 5.202) <= 1e-3 and top_two and abs(res.f_f - 29.5) < 1e-9
    verdict(3, ok, f"CD {cd:.4f}, mean ranks {np.round(res.mean_ranks, 3).tolist()}, F_F {res.f_f:.2f}")
    assert cd == pytest.approx(5.202, abs=1e-3)
    assert top_two
    assert res.f_f == pytest.approx(29.5, abs=1e-9)


def test_4_gru_fusion_invariants():
    bad_gate = bad_fuse = 0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 9))
        tape = T.Tape()
        p = {f"gru_u.{k}": tape.const(rng.normal(size=(d, d))) for k in ("W_r", "W_z", "W_h", "U_r", "U_z", "U_h")}
        p.update({f"gru_u.{k}": tape.const(rng.normal(size=d)) for k in ("b_r", "b_h")})
        p["gru_u.b_z"] = tape.const(np.full(d, -1000.0))
        s = rng.normal(size=d)
        out = gru_update(tape.const(s), tape.const(rng.normal(size=d)), p, "gru_u").value
        bad_gate += out.tobytes() != s.tobytes()
        q = {"P_x": tape.const(rng.normal(size=(2 * d, d))), "b_x": tape.const(rng.normal(size=d))}
        t, r, z = (tape.const(v) for v in (rng.normal(size=d), rng.normal(size=d), np.zeros(d)))
        bad_fuse += fuse(tape, None, r, q).value.tobytes() != fuse(tape, z, r, q).value.tobytes()
        bad_fuse += fuse(tape, t, None, q).value.tobytes() != fuse(tape, t, z, q).value.tobytes()
        bad_fuse += fuse(tape, None, None, q).value.tobytes() != fuse(tape, z, z, q).value.tobytes()
    verdict(4, bad_gate == 0 and bad_fuse == 0,
            f"1000 draws: {bad_gate} gate-closed mismatches, {bad_fuse} absent-vs-zero mismatches")
    assert bad_gate == 0 and bad_fuse == 0


def test_5_missing_modality(synth_data, full_run, tmp_path):
    records, manifest, mapping = synth_data
    half = run_synth(tmp_path, drop_reviews(records, 0.5, SYNTH_SEED), manifest, mapping)
    preds = half["result"].model.predictions(half["bundle"].test)
    finite = bool(np.all(np.isfinite(preds)))
    full_mae, half_mae = full_run["report"].mae, half["report"].mae
    degrade = half_mae / full_mae - 1.0
    ok = finite and degrade < 0.5
    verdict(5, ok, f"MAE full {full_mae:.4f}, 50% reviews dropped {half_mae:.4f} ({degrade:+.1%}), "
                   f"all finite: {finite}")
    assert finite
    assert degrade < 0.5


def test_6_synthetic_recoverability(synth_data, full_run):
    _, manifest, _ = synth_data
    bundle, res, rep = full_run["bundle"], full_run["result"], full_run["report"]
    n = len(bundle.train) + len(bundle.test) + len(bundle.validation)
    mean = float(np.mean([it.rating for it in bundle.train]))
    baseline = float(np.mean([abs(mean - it.rating) for it in bundle.test]))
    ratio = rep.mae / baseline
    hits = 0
    for i, key in enumerate(bundle.item_ids):
        top = set(res.profiles.item(i).top) if i in res.profiles.items else set()
        hits += len(top & set(manifest["planted"][key])) >= 3
    recovered = hits / bundle.n_items
    secs = full_run["seconds"]
    ok_a, ok_b, ok_c = ratio <= 0.8, rep.ndcg[5] >= 0.80, recovered >= 0.80
    verdict(6, ok_a and ok_b and ok_c and secs < 600,
            f"{n} interactions; MAE {rep.mae:.4f} vs mean-predictor {baseline:.4f} (ratio {ratio:.3f}); "
            f"NDCG@5 {rep.ndcg[5]:.4f}; keywords recovered for {recovered:.1%} of items; {secs:.1f}s")
    assert ok_a, f"MAE ratio {ratio:.3f}"
    assert ok_b, f"NDCG@5 {rep.ndcg[5]:.4f}"
    assert ok_c, f"recovery {recovered:.3f}"
    assert secs < 600


def test_7_directional_anchor(tmp_path):
    corpus, emb = os.environ.get("DREX_VG_CORPUS"), os.environ.get("DREX_VG_EMBEDDINGS")
    if not (corpus and emb and Path(corpus).is_file() and Path(emb).is_file()):
        verdict(7, True, "no Video Games snapshot (set DREX_VG_CORPUS and DREX_VG_EMBEDDINGS)", skipped=True)
        pytest.skip("Video Games snapshot not available")
    bundle, _ = ingest(corpus, seed=0)
    cfg = TrainConfig(lr=0.1, lam=0.001, d=64, embedder_kind="file_table", embedder_path=emb)
    rep = train(bundle, cfg, load_embedding_file(emb)).model.report(bundle)
    in_band = 0.60 <= rep.mae <= 0.85 and rep.ndcg[5] >= 0.80
    # directional only: deviations are reported, never failed
    verdict(7, True, f"MAE {rep.mae:.4f} (reference 0.6531), NDCG@5 {rep.ndcg[5]:.4f} (reference 0.9118), "
                     f"{'within' if in_band else 'OUTSIDE'} the expected band")


def _pipeline(root):
    data, ing, run = root / "data", root / "ing", root / "run"
    fast = ["--threads", "1", "--set", "d=8", "--set", "max_epochs=4"]
    steps = [
        ["synth", "--users", "40", "--items", "60", "--per-user", "25", "--seed", "5", "--out", str(data)],
        ["ingest", str(data / "corpus.jsonl"), "--seed", "5", "--out", str(ing)],
        ["train", "--bundle", str(ing / "bundle.drxb"), "--out", str(run), "--seed", "5", *fast],
        ["evaluate", "--bundle", str(ing / "bundle.drxb"), "--checkpoint", str(run / "checkpoint.drxm"),
         "--out", str(root / "eval"), "--threads", "1"],
        ["explain", "--bundle", str(ing / "bundle.drxb"), "--checkpoint", str(run / "checkpoint.drxm"),
         "--profiles", str(run / "profiles.jsonl"), "--out", str(root / "explain"), "--threads", "1"],
        ["sweep", "--bundle", str(ing / "bundle.drxb"), "--lr", "0.01,0.1", "--lambda", "0.001", "--d", "4",
         "--runs", "1", "--out", str(root / "sweep"), *fast],
        ["gradcheck", "--out", str(root / "gradcheck")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    keep = (".csv", ".drxm", ".drxb", ".jsonl", ".cfg", ".txt")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.suffix in keep}


def test_8_determinism(tmp_path):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    differ = sorted(str(k) for k in a if a[k] != b.get(k))
    ok = set(a) == set(b) and not differ
    verdict(8, ok, f"{len(a)} artifacts compared across 7 verbs, {len(differ)} differ {differ or ''}".rstrip())
    assert set(a) == set(b)
    assert not differ


def test_9_early_stopping(small_synth):
    bundle = small_synth["bundle"]
    cfg = TrainConfig(d=4, max_epochs=100, patience=10, rating_dropout=0.0, embedder_kind="file_table")
    lines = []
    for name, curve in (("plateau at peak", [0.1, 0.2, 0.5] + [0.5] * 40),
                        ("plateau below peak", [0.1, 0.2, 0.5] + [0.45] * 40)):
        it = iter(curve)
        res = train(bundle, cfg, small_synth["provider"], validate=lambda t: (0.0, 0.0, next(it)))
        epochs_ok = len(res.history) == 13 and res.best_epoch == 3 and res.stopped_early
        # the returned model must be epoch 3's: retrain 3 epochs and compare parameters
        ref = train(bundle, replace(cfg, max_epochs=3), small_synth["provider"],
                    validate=lambda t, c=iter(curve): (0.0, 0.0, next(c)))
        same = all(np.array_equal(res.params[k], ref.params[k]) for k in res.params)
        lines.append((name, len(res.history), res.best_epoch, epochs_ok and same))
    ok = all(x[3] for x in lines)
    verdict(9, ok, "; ".join(f"{n}: halted after {e} epochs, returned epoch {b}" for n, e, b, _ in lines))
    assert ok, lines


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
