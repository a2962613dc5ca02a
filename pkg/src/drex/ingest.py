"""Corpus loading, density filtering, ID mapping and the 70/20/10 split."""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import substream
from .text import Vocab, normalize

log = logging.getLogger(__name__)

BUNDLE_MAGIC = b"DRXB"
BUNDLE_VERSION = 1


class EmptyCorpusError(ValueError):
    pass


class BundleFormatError(ValueError):
    pass


class ChecksumError(BundleFormatError):
    pass


@dataclass
class RawReview:
    user_key: str
    item_key: str
    rating: int
    review_text: str = ""
    timestamp: int | None = None


@dataclass(frozen=True)
class Interaction:
    user_idx: int
    item_idx: int
    rating: int
    tokens: tuple = ()
    timestamp: int | None = None


@dataclass
class SplitBundle:
    train: list
    test: list
    validation: list
    user_ids: list
    item_ids: list
    vocab: list
    split_seed: int
    rating_scale: int = 5

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def all_interactions(self) -> list:
        return self.train + self.test + self.validation


def round_rating(value: float) -> int:
    """Nearest integer, halves rounded up."""
    return int(math.floor(value + 0.5))


def parse_record(obj, scale: int = 5) -> RawReview:
    user, item = obj["user_id"], obj["item_id"]
    if not isinstance(user, str) or not isinstance(item, str) or not user or not item:
        raise ValueError("user_id and item_id must be non-empty strings")
    rating = obj["rating"]
    if isinstance(rating, bool) or not isinstance(rating, (int, float)) or not math.isfinite(rating):
        raise ValueError(f"bad rating {rating!r}")
    if not 1 <= rating <= scale:
        raise ValueError(f"rating {rating} outside 1..{scale}")
    rating = round_rating(rating)
    text = obj.get("review_text") or ""
    if not isinstance(text, str):
        raise ValueError("review_text must be a string")
    ts = obj.get("timestamp")
    if ts is not None and (isinstance(ts, bool) or not isinstance(ts, int)):
        raise ValueError("timestamp must be an integer")
    return RawReview(user, item, rating, text, ts)


def parse_corpus(path, scale: int = 5) -> tuple[list[RawReview], int]:
    """Read one JSON object per line. Returns (records, malformed line count)."""
    records, skipped, seen_lines = [], 0, 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            seen_lines += 1
            try:
                records.append(parse_record(json.loads(line), scale))
            except (ValueError, KeyError, TypeError):
                skipped += 1
    if seen_lines and not records:
        raise EmptyCorpusError(f"{path}: no well-formed records among {seen_lines} lines")
    if skipped:
        log.info("%s: skipped %d malformed lines", path, skipped)
    return records, skipped


def deduplicate(raws: list[RawReview]) -> list[RawReview]:
    """Keep one record per (user, item): latest timestamp, else last seen."""
    best: dict[tuple, tuple] = {}
    for pos, r in enumerate(raws):
        key = (r.user_key, r.item_key)
        rank = (r.timestamp if r.timestamp is not None else -math.inf, pos)
        if key not in best or rank >= best[key][0]:
            best[key] = (rank, pos)
    keep = sorted(pos for _, pos in best.values())
    return [raws[p] for p in keep]


def _filter_once(raws, min_user_ratings, min_item_raters):
    users = Counter(r.user_key for r in raws)
    raws = [r for r in raws if users[r.user_key] >= min_user_ratings]
    items = Counter(r.item_key for r in raws)
    return [r for r in raws if items[r.item_key] >= min_item_raters]


def filter_density(raws, min_user_ratings=20, min_item_raters=5, iterate=False):
    """Drop sparse users, then sparse items among what is left.

    With ``iterate`` the two passes repeat until nothing changes (k-core).
    """
    if min_user_ratings < 1 or min_item_raters < 1:
        raise ValueError("thresholds must be >= 1")
    out = _filter_once(list(raws), min_user_ratings, min_item_raters)
    while iterate:
        nxt = _filter_once(out, min_user_ratings, min_item_raters)
        if len(nxt) == len(out):
            break
        out = nxt
    return out


def index_reviews(raws, stopwords=None, vocab: Vocab | None = None):
    """Map string keys to contiguous indices and normalise review text.

    Indices follow first appearance. Returns (interactions, user_ids,
    item_ids, vocab).
    """
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    vocab = vocab or Vocab()
    kwargs = {} if stopwords is None else {"stopwords": stopwords}
    out = []
    for r in raws:
        u = users.setdefault(r.user_key, len(users))
        i = items.setdefault(r.item_key, len(items))
        toks = tuple(vocab.encode(normalize(r.review_text, **kwargs)))
        out.append(Interaction(u, i, r.rating, toks, r.timestamp))
    return out, list(users), list(items), vocab


def largest_remainder(n: int, weights=(7, 2, 1)) -> list[int]:
    """Split ``n`` into integer parts proportional to ``weights``.

    Floors first, then hands leftover units to the largest fractional parts
    (earlier part wins a tie).
    """
    total = sum(weights)
    parts = [n * w // total for w in weights]
    rems = [n * w % total for w in weights]
    left = n - sum(parts)
    for j in sorted(range(len(weights)), key=lambda j: (-rems[j], j))[:left]:
        parts[j] += 1
    return parts


def split_70_20_10(interactions, seed: int, user_ids=None, item_ids=None, vocab=None,
                   rating_scale=5) -> SplitBundle:
    """Per-user random 70/20/10 assignment, deterministic in ``seed``."""
    rng = substream(seed, "split")
    by_user = defaultdict(list)
    for pos, it in enumerate(interactions):
        by_user[it.user_idx].append(pos)
    label = [0] * len(interactions)
    for u in sorted(by_user):
        positions = by_user[u]
        n = len(positions)
        if n < 3:
            log.warning("user %d has %d interactions; all assigned to train", u, n)
            continue
        n_train, n_test, _ = largest_remainder(n)
        order = rng.permutation(n)
        for rank, j in enumerate(order):
            label[positions[j]] = 0 if rank < n_train else (1 if rank < n_train + n_test else 2)
    parts = ([], [], [])
    for pos, it in enumerate(interactions):
        parts[label[pos]].append(it)
    if user_ids is None:
        user_ids = [str(u) for u in range(max((it.user_idx for it in interactions), default=-1) + 1)]
    if item_ids is None:
        item_ids = [str(i) for i in range(max((it.item_idx for it in interactions), default=-1) + 1)]
    return SplitBundle(parts[0], parts[1], parts[2], list(user_ids), list(item_ids),
                       list(vocab or []), seed, rating_scale)


# ---------------------------------------------------------------------------
# bundle file


def _pack_strings(strings) -> bytes:
    chunks = [struct.pack("<I", len(strings))]
    for s in strings:
        b = s.encode("utf-8")
        chunks.append(struct.pack("<I", len(b)))
        chunks.append(b)
    return b"".join(chunks)


def _pack_split(items) -> bytes:
    n = len(items)
    users = np.array([it.user_idx for it in items], dtype="<i4")
    itms = np.array([it.item_idx for it in items], dtype="<i4")
    ratings = np.array([it.rating for it in items], dtype="u1")
    has_ts = np.array([it.timestamp is not None for it in items], dtype="u1")
    ts = np.array([it.timestamp or 0 for it in items], dtype="<i8")
    lens = np.array([len(it.tokens) for it in items], dtype="<u4")
    toks = np.array([t for it in items for t in it.tokens], dtype="<i4")
    return b"".join([struct.pack("<I", n), users.tobytes(), itms.tobytes(), ratings.tobytes(),
                     has_ts.tobytes(), ts.tobytes(), lens.tobytes(), toks.tobytes()])


def bundle_bytes(bundle: SplitBundle) -> bytes:
    body = b"".join([
        BUNDLE_MAGIC,
        struct.pack("<HIq", BUNDLE_VERSION, bundle.rating_scale, bundle.split_seed),
        _pack_strings(bundle.user_ids),
        _pack_strings(bundle.item_ids),
        _pack_strings(bundle.vocab),
        _pack_split(bundle.train),
        _pack_split(bundle.test),
        _pack_split(bundle.validation),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_bundle(bundle: SplitBundle, path) -> None:
    Path(path).write_bytes(bundle_bytes(bundle))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise BundleFormatError("unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, n: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * n), dtype=dt)

    def strings(self) -> list[str]:
        (n,) = self.unpack("<I")
        out = []
        for _ in range(n):
            (ln,) = self.unpack("<I")
            out.append(self.take(ln).decode("utf-8"))
        return out


def _read_split(rd: _Reader) -> list[Interaction]:
    (n,) = rd.unpack("<I")
    users = rd.array("<i4", n)
    items = rd.array("<i4", n)
    ratings = rd.array("u1", n)
    has_ts = rd.array("u1", n)
    ts = rd.array("<i8", n)
    lens = rd.array("<u4", n)
    toks = rd.array("<i4", int(lens.sum()))
    out, off = [], 0
    for j in range(n):
        ln = int(lens[j])
        out.append(Interaction(int(users[j]), int(items[j]), int(ratings[j]),
                               tuple(int(t) for t in toks[off:off + ln]),
                               int(ts[j]) if has_ts[j] else None))
        off += ln
    return out


def load_bundle(path) -> SplitBundle:
    buf = Path(path).read_bytes()
    if buf[:4] != BUNDLE_MAGIC:
        raise BundleFormatError(f"{path}: not a bundle file (bad magic)")
    if len(buf) < 10:
        raise ChecksumError(f"{path}: truncated bundle")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")
    rd = _Reader(body, 4)
    version, scale, seed = rd.unpack("<HIq")
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"{path}: unsupported bundle version {version}")
    user_ids, item_ids, vocab = rd.strings(), rd.strings(), rd.strings()
    train, test, val = _read_split(rd), _read_split(rd), _read_split(rd)
    if rd.pos != len(body):
        raise BundleFormatError(f"{path}: trailing bytes after bundle body")
    return SplitBundle(train, test, val, user_ids, item_ids, vocab, seed, scale)


@dataclass
class IngestSummary:
    parsed: int
    skipped: int
    after_dedup: int
    after_filter: int
    users: int
    items: int
    sizes: dict = field(default_factory=dict)

    @property
    def sparsity(self) -> float:
        if not self.users or not self.items:
            return 1.0
        return 1.0 - self.after_filter / (self.users * self.items)


def ingest(path, seed: int, scale=5, min_user_ratings=20, min_item_raters=5,
           iterate=False, stopwords=None) -> tuple[SplitBundle, IngestSummary]:
    raws, skipped = parse_corpus(path, scale)
    deduped = deduplicate(raws)
    kept = filter_density(deduped, min_user_ratings, min_item_raters, iterate=iterate)
    inters, users, items, vocab = index_reviews(kept, stopwords=stopwords)
    bundle = split_70_20_10(inters, seed, users, items, vocab.tokens, scale)
    summary = IngestSummary(len(raws), skipped, len(deduped), len(kept), len(users), len(items),
                            {"train": len(bundle.train), "test": len(bundle.test),
                             "validation": len(bundle.validation)})
    return bundle, summary
