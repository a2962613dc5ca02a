"""Synthetic review corpus with planted item keywords.

Ratings are ``clamp(round(mu + p_uᵀq_i + bonus_i), 1, S)`` where ``bonus_i``
is the mean weight of the item's five planted keywords. Every review of an
item contains all five planted keywords plus a few noise words, so item
keyword profiles should recover the planted sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import substream
from .text import STOPWORDS, lemmatize

CONSONANTS = "bdfgklmnprtvz"
VOWELS = "aeiou"


@dataclass
class SynthSpec:
    n_users: int = 200
    n_items: int = 300
    per_user: int = 40
    latent_dim: int = 3
    latent_scale: float = 0.55
    mu: float = 3.6
    n_keywords: int = 60
    keywords_per_item: int = 5
    keyword_weight: float = 2.0
    n_noise: int = 400
    noise_words: tuple = (4, 12)
    embed_dim: int = 64
    scale: int = 5
    review_drop: float = 0.0


def make_words(rng, n: int, taken=()) -> list[str]:
    """Pronounceable tokens that normalisation leaves untouched."""
    out, seen = [], set(taken)
    while len(out) < n:
        syl = rng.integers(2, 4)
        w = "".join(CONSONANTS[rng.integers(len(CONSONANTS))] + VOWELS[rng.integers(len(VOWELS))]
                    for _ in range(syl))
        if w in seen or w in STOPWORDS or lemmatize(w) != w:
            continue
        seen.add(w)
        out.append(w)
    return out


def generate(spec: SynthSpec, seed: int):
    """Returns (records, manifest, embedding mapping)."""
    rng = substream(seed, "synth")
    keywords = make_words(rng, spec.n_keywords)
    noise = make_words(rng, spec.n_noise, taken=keywords)
    kw_weight = rng.uniform(-spec.keyword_weight, spec.keyword_weight, spec.n_keywords)
    P = rng.normal(0.0, spec.latent_scale, (spec.n_users, spec.latent_dim))
    Q = rng.normal(0.0, spec.latent_scale, (spec.n_items, spec.latent_dim))
    planted = [rng.choice(spec.n_keywords, spec.keywords_per_item, replace=False) for _ in range(spec.n_items)]
    bonus = np.array([kw_weight[p].mean() for p in planted])

    records = []
    clock = 1_600_000_000
    for u in range(spec.n_users):
        items = rng.choice(spec.n_items, spec.per_user, replace=False)
        for i in items:
            score = spec.mu + P[u] @ Q[i] + bonus[i]
            rating = int(np.clip(np.floor(score + 0.5), 1, spec.scale))
            words = [keywords[k] for k in planted[i]]
            lo, hi = spec.noise_words
            words += [noise[j] for j in rng.integers(0, len(noise), rng.integers(lo, hi + 1))]
            rng.shuffle(words)
            text = " ".join(words)
            if spec.review_drop and rng.random() < spec.review_drop:
                text = ""
            clock += int(rng.integers(1, 3600))
            records.append({"user_id": f"u{u:04d}", "item_id": f"i{i:04d}", "rating": rating,
                            "review_text": text, "timestamp": clock})
    # interleave users in time
    order = rng.permutation(len(records))
    stamps = sorted(r["timestamp"] for r in records)
    records = [records[j] for j in order]
    for r, ts in zip(records, stamps):
        r["timestamp"] = ts

    erng = substream(seed, "synth_embed")
    vocab = keywords + noise
    table = erng.normal(0.0, 1.0, (len(vocab), spec.embed_dim))
    mapping = {w: table[j] for j, w in enumerate(vocab)}
    manifest = {
        "seed": seed,
        "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.__dict__.items()},
        "planted": {f"i{i:04d}": [keywords[k] for k in planted[i]] for i in range(spec.n_items)},
        "keyword_weights": {keywords[k]: float(kw_weight[k]) for k in range(spec.n_keywords)},
        "item_bonus": {f"i{i:04d}": float(bonus[i]) for i in range(spec.n_items)},
    }
    return records, manifest, mapping


def drop_reviews(records, fraction: float, seed: int):
    """Copy of ``records`` with a random ``fraction`` of reviews blanked."""
    rng = substream(seed, "review_drop")
    mask = rng.random(len(records)) < fraction
    return [dict(r, review_text="") if m else dict(r) for r, m in zip(records, mask)]


def write_dataset(out_dir, records, manifest, mapping) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.jsonl", "embeddings": out / "embeddings.txt",
             "manifest": out / "manifest.json"}
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(paths["embeddings"], "w", encoding="utf-8") as fh:
        dim = len(next(iter(mapping.values())))
        fh.write(f"{len(mapping)} {dim}\n")
        for w, vec in mapping.items():
            fh.write(w + " " + " ".join(f"{x:.8f}" for x in vec) + "\n")
    paths["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return paths
