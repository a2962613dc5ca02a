from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from drex.config import ConfigError, TrainConfig
from drex.ingest import Interaction, SplitBundle
from drex.kernels import PythonKernel
from drex.train import Trainer, early_stop, score_s, sweep, train, validation_criterion

SMALL = TrainConfig(d=4, embedder_b=8, embedder_table_size=64, batch_size=32, max_epochs=3, rating_dropout=0.0)


def tiny_bundle(train_rows, n_users=2, n_items=2, vocab=("good", "fun", "plot")):
    rows = [Interaction(u, i, r, tuple(t), ts) for ts, (u, i, r, t) in enumerate(train_rows)]
    return SplitBundle(rows, [], [], [f"u{j}" for j in range(n_users)], [f"i{j}" for j in range(n_items)],
                       list(vocab), split_seed=0)


def test_empty_train_raises():
    with pytest.raises(ConfigError):
        Trainer(tiny_bundle([]), SMALL)


def test_single_interaction_overfits():
    bundle = tiny_bundle([(0, 0, 2, (0, 1))], 1, 1)
    cfg = replace(SMALL, lam=0.0, lr=0.1, max_epochs=500, patience=1000)
    res = train(bundle, cfg)
    assert len(res.history) == 500
    assert res.history[-1].train_loss < 0.01


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_huge_lambda_shrinks_states(seed):
    """Adam momentum makes the per-epoch norm wobble, so compare the tail
    against the first epoch and against an unregularised twin run."""
    rows = [(u, i, 1 + (u + i) % 5, (u % 3, i % 3)) for u in range(4) for i in range(4)]
    bundle = tiny_bundle(rows, 4, 4)

    def norm_curve(lam):
        norms = []
        cfg = replace(SMALL, lam=lam, lr=0.01, batch_size=16, max_epochs=30, patience=100, seed=seed)
        train(bundle, cfg, probe=lambda it, ru, ri, wu, wi: norms.append(np.linalg.norm(wu)))
        return np.array(norms).reshape(30, 16).mean(axis=1)

    heavy, free = norm_curve(1e6), norm_curve(0.0)
    assert heavy[-5:].mean() < 0.35 * heavy[0]
    assert heavy[-5:].mean() < 0.35 * free[-5:].mean()


def test_zero_lambda_loss_is_mse(small_synth):
    bundle = small_synth["bundle"]
    cfg = replace(SMALL, lam=0.0, batch_size=len(bundle.train))
    tr = Trainer(bundle, cfg, small_synth["provider"])
    params = {k: v.copy() for k, v in tr.params.items()}
    U, I = tr.states.U.copy(), tr.states.I.copy()
    kernel = PythonKernel(params)
    errs = []
    for it in bundle.train:
        E = tr.provider.table[tr.vocab_rows[list(it.tokens)]] if it.tokens else None
        errs.append((it.rating - kernel.forward(E, it.rating, U[it.user_idx], I[it.item_idx])[0]) ** 2)
    loss, _ = tr.run_epoch(1, collect_profiles=False)
    assert loss == pytest.approx(np.mean(errs), rel=1e-12)


def test_states_chain_through_commits(small_synth):
    bundle = small_synth["bundle"]
    seen = []
    cfg = replace(SMALL, batch_size=50, max_epochs=2, patience=5)
    train(bundle, cfg, small_synth["provider"], probe=lambda *a: seen.append(a))
    assert len(seen) == 2 * len(bundle.train)
    last_u, last_i, checked = {}, {}, 0
    for it, ru, ri, wu, wi in seen:
        if it.user_idx in last_u:
            np.testing.assert_array_equal(ru, last_u[it.user_idx])
            checked += 1
        if it.item_idx in last_i:
            np.testing.assert_array_equal(ri, last_i[it.item_idx])
        last_u[it.user_idx], last_i[it.item_idx] = wu, wi
    assert checked > len(bundle.train)


def test_profile_mass_counts_reviews(small_synth):
    bundle = small_synth["bundle"]
    tr = Trainer(bundle, SMALL, small_synth["provider"])
    _, store = tr.run_epoch(1, collect_profiles=True)
    with_text = sum(1 for it in bundle.train if it.tokens)
    assert sum(p.mass() for p in store.users.values()) == pytest.approx(with_text, rel=1e-12)
    assert sum(p.mass() for p in store.items.values()) == pytest.approx(with_text, rel=1e-12)


def test_deterministic(small_synth):
    bundle = small_synth["bundle"]
    cfg = replace(SMALL, rating_dropout=0.5, shuffle=True)
    a = train(bundle, cfg, small_synth["provider"])
    b = train(bundle, cfg, small_synth["provider"])
    assert [h.row(False) for h in a.history] == [h.row(False) for h in b.history]
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    np.testing.assert_array_equal(a.states.U, b.states.U)


def test_best_checkpoint_returned(small_synth):
    bundle = small_synth["bundle"]
    res = train(bundle, replace(SMALL, max_epochs=6), small_synth["provider"])
    best = max(h.criterion for h in res.history)
    assert res.history[res.best_epoch - 1].criterion == best
    assert validation_criterion(res.model, bundle)[2] == pytest.approx(best, abs=1e-12)


def test_validate_hook_drives_stopping():
    bundle = tiny_bundle([(0, 0, 4, (0,)), (1, 1, 2, ())])
    curve = iter([0.1, 0.3, 0.2, 0.3, 0.1, 0.0] + [0.0] * 50)
    res = train(bundle, replace(SMALL, max_epochs=50, patience=3), validate=lambda t: (0, 0, next(curve)))
    assert res.best_epoch == 2 and len(res.history) == 5 and res.stopped_early


def crit(*vals):
    return [SimpleNamespace(criterion=v) for v in vals]


def test_early_stop_examples():
    assert not early_stop(crit(0.1, 0.2), 2)
    assert early_stop(crit(0.5, 0.4, 0.4), 2)
    assert early_stop(crit(0.5, 0.5, 0.5), 2)
    assert not early_stop(crit(0.5, 0.4, 0.6), 2)
    # best at epoch 3 then flat, patience 10: stop after epoch 13
    flat = [0.1, 0.2, 0.5] + [0.5] * 10
    assert not early_stop(crit(*flat[:12]), 10) and early_stop(crit(*flat), 10)
    # equal every epoch: best is epoch 1, stop after epoch 1 + patience
    assert not early_stop(crit(*[0.3] * 10), 10) and early_stop(crit(*[0.3] * 11), 10)
    with pytest.raises(ValueError):
        early_stop([], 2)


def test_score_s():
    perfect = SimpleNamespace(mae=0.0, f1={k: 1.0 for k in range(1, 6)}, ndcg={k: 1.0 for k in range(1, 6)})
    assert score_s([perfect]) == 0.0
    worst = SimpleNamespace(mae=1.1, f1={k: 0.0 for k in range(1, 6)}, ndcg={k: 0.0 for k in range(1, 6)})
    assert score_s([worst, perfect]) == pytest.approx((11.1 / 11) / 2)


def test_single_config_sweep(small_synth):
    res = sweep(small_synth["bundle"], replace(SMALL, max_epochs=1), lrs=(0.01,), lams=(0.001,), ds=(4,),
                runs=1, provider=small_synth["provider"])
    assert len(res.table) == 1
    assert (res.winner["lr"], res.winner["lambda"], res.winner["d"]) == (0.01, 0.001, 4)
