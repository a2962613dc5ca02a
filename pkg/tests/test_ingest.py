import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drex.ingest import (BundleFormatError, ChecksumError, EmptyCorpusError, Interaction, RawReview,
                         bundle_bytes, deduplicate, filter_density, index_reviews, ingest, largest_remainder,
                         load_bundle, parse_corpus, round_rating, save_bundle, split_70_20_10)


def write_lines(path, objs):
    path.write_text("".join((o if isinstance(o, str) else json.dumps(o)) + "\n" for o in objs))
    return path


def rec(u, i, r=4, text="", ts=None):
    return RawReview(u, i, r, text, ts)


# ---------------------------------------------------------------------------
# parsing


def test_empty_file(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("")
    assert parse_corpus(path) == ([], 0)


def test_missing_rating_skipped(tmp_path):
    good = [{"user_id": "u", "item_id": f"i{j}", "rating": 4} for j in range(3)]
    path = write_lines(tmp_path / "c.jsonl", good + [{"user_id": "u", "item_id": "x"}])
    records, skipped = parse_corpus(path)
    assert len(records) == 3 and skipped == 1


def test_out_of_range_and_garbage(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", [
        {"user_id": "u", "item_id": "a", "rating": 6},
        {"user_id": "u", "item_id": "b", "rating": 0.4},
        {"user_id": "", "item_id": "c", "rating": 3},
        "{not json",
        {"user_id": "u", "item_id": "d", "rating": 4.5, "timestamp": 12},
    ])
    records, skipped = parse_corpus(path)
    assert skipped == 4
    assert records == [RawReview("u", "d", 5, "", 12)]


def test_all_malformed_is_empty_corpus(tmp_path):
    path = write_lines(tmp_path / "c.jsonl", ["nope", "{}"])
    with pytest.raises(EmptyCorpusError):
        parse_corpus(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(OSError):
        parse_corpus(tmp_path / "missing.jsonl")


def test_round_half_up():
    assert [round_rating(x) for x in (1.0, 1.49, 1.5, 2.5, 4.5, 5.0)] == [1, 1, 2, 3, 5, 5]


def test_deduplicate_latest_then_last():
    raws = [rec("u", "i", 1, ts=5), rec("u", "i", 2, ts=9), rec("u", "i", 3, ts=7),
            rec("v", "i", 1), rec("v", "i", 4)]
    out = deduplicate(raws)
    assert [(r.user_key, r.rating) for r in out] == [("u", 2), ("v", 4)]


# ---------------------------------------------------------------------------
# filtering


def test_filter_unchanged_when_dense():
    raws = [rec(f"u{u}", f"i{i}") for u in range(5) for i in range(20)]
    assert filter_density(raws, 20, 5) == raws


def test_filter_hand_trace():
    # user A has 19 ratings including the only 5 ratings of item X
    raws = [rec("A", f"x{j}") for j in range(14)] + [rec("A", "X")]
    raws += [rec("A", f"y{j}") for j in range(4)]
    raws += [rec(f"B{k}", "X") for k in range(4)]
    for k in range(4):
        raws += [rec(f"B{k}", f"z{j}") for j in range(19)]
    raws += [rec(f"C{c}", f"z{j}") for c in range(2) for j in range(20)]
    out = filter_density(raws, 20, 5)
    assert all(r.user_key != "A" for r in out)
    assert all(r.item_key != "X" for r in out)
    # B users keep their other 19 ratings: single pass does not revisit users
    assert sum(r.user_key == "B0" for r in out) == 19


def test_filter_iterate_reaches_fixpoint():
    raws = [rec("A", f"i{j}") for j in range(3)] + [rec(f"u{k}", "i0") for k in range(2)]
    raws += [rec(f"u{k}", f"j{k}") for k in range(2)]
    single = filter_density(raws, 2, 2)
    fixed = filter_density(raws, 2, 2, iterate=True)
    assert len(fixed) <= len(single)
    assert filter_density(fixed, 2, 2) == fixed


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=80),
       st.integers(1, 5), st.integers(1, 5))
def test_filter_invariants(pairs, mu, mi):
    raws = deduplicate([rec(f"u{u}", f"i{i}") for u, i in pairs])
    out = filter_density(raws, mu, mi)
    before = {}
    for r in raws:
        before[r.user_key] = before.get(r.user_key, 0) + 1
    raters = {}
    for r in out:
        raters[r.item_key] = raters.get(r.item_key, 0) + 1
    assert all(before[r.user_key] >= mu for r in out)
    assert all(n >= mi for n in raters.values())


def test_filter_thresholds_validated():
    with pytest.raises(ValueError):
        filter_density([], 0, 5)


# ---------------------------------------------------------------------------
# splitting


def lr_oracle(n, weights=(7, 2, 1)):
    """Largest remainder with exact fractions."""
    quotas = [Fraction(n * w, sum(weights)) for w in weights]
    parts = [q.numerator // q.denominator for q in quotas]
    order = sorted(range(len(weights)), key=lambda j: (-(quotas[j] - parts[j]), j))
    for j in order[:n - sum(parts)]:
        parts[j] += 1
    return parts


def test_largest_remainder_examples():
    assert largest_remainder(10) == [7, 2, 1]
    assert largest_remainder(13) == [9, 3, 1]


@pytest.mark.parametrize("n", range(0, 200))
def test_largest_remainder_oracle(n):
    assert largest_remainder(n) == lr_oracle(n)


def make_interactions(counts):
    out = []
    for u, n in enumerate(counts):
        out += [Interaction(u, i, 1 + (u + i) % 5, (i % 3,), 100 * u + i) for i in range(n)]
    return out


def test_split_proportions_and_disjoint():
    inters = make_interactions([10, 13, 20, 27])
    b = split_70_20_10(inters, seed=4)
    for u, n in enumerate([10, 13, 20, 27]):
        got = [sum(it.user_idx == u for it in part) for part in (b.train, b.test, b.validation)]
        assert got == lr_oracle(n)
    keys = [(it.user_idx, it.item_idx) for it in b.all_interactions()]
    assert sorted(keys) == sorted((it.user_idx, it.item_idx) for it in inters)
    assert len(set(keys)) == len(keys)


def test_split_deterministic():
    inters = make_interactions([12, 30, 25])
    assert bundle_bytes(split_70_20_10(inters, 7)) == bundle_bytes(split_70_20_10(inters, 7))
    assert bundle_bytes(split_70_20_10(inters, 7)) != bundle_bytes(split_70_20_10(inters, 8))


def test_split_small_user_warns(caplog):
    b = split_70_20_10(make_interactions([2, 10]), seed=0)
    assert sum(it.user_idx == 0 for it in b.train) == 2
    assert "all assigned to train" in caplog.text


# ---------------------------------------------------------------------------
# bundle file


@pytest.fixture
def bundle():
    raws = [rec(f"u{u}", f"i{i}", 1 + (u * i) % 5, "great fun games" if i % 2 else "", u * 50 + i)
            for u in range(4) for i in range(12)]
    inters, users, items, vocab = index_reviews(raws)
    return split_70_20_10(inters, 3, users, items, vocab.tokens)


def test_bundle_round_trip(tmp_path, bundle):
    path = tmp_path / "b.drxb"
    save_bundle(bundle, path)
    assert load_bundle(path) == bundle


def test_bundle_bad_magic(tmp_path, bundle):
    path = tmp_path / "b.drxb"
    path.write_bytes(b"XXXX" + bundle_bytes(bundle)[4:])
    with pytest.raises(BundleFormatError, match="magic"):
        load_bundle(path)


def test_bundle_truncated(tmp_path, bundle):
    data = bundle_bytes(bundle)
    path = tmp_path / "b.drxb"
    path.write_bytes(data[:-7])
    with pytest.raises(ChecksumError):
        load_bundle(path)


def test_bundle_corrupt_byte(tmp_path, bundle):
    data = bytearray(bundle_bytes(bundle))
    data[len(data) // 2] ^= 0xFF
    path = tmp_path / "b.drxb"
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_bundle(path)


def test_ingest_pipeline(tmp_path):
    objs = [{"user_id": f"u{u}", "item_id": f"i{i}", "rating": 1 + (u + i) % 5,
             "review_text": "Nice games", "timestamp": 1000 + 30 * u + i}
            for u in range(6) for i in range(25)]
    objs.append({"user_id": "solo", "item_id": "i0", "rating": 3})
    path = write_lines(tmp_path / "c.jsonl", objs)
    b, summary = ingest(path, seed=1)
    assert summary.parsed == 151 and summary.after_filter == 150
    assert summary.users == 6 and summary.items == 25
    assert summary.sizes == {"train": 6 * 18, "test": 6 * 5, "validation": 6 * 2}
    assert b.vocab == ["nice", "game"]
