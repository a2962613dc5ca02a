"""Keyword profiles from attention mass and overlap explanations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .core.tape import ContractError


@dataclass
class KeywordProfile:
    kind: str
    entity: int
    scores: dict = field(default_factory=dict)
    top: list = field(default_factory=list)

    def mass(self) -> float:
        return sum(self.scores.values())


@dataclass
class Explanation:
    user: int
    item: int
    shared: list
    combined: list
    predicted: float | None = None

    @property
    def keyword_free(self) -> bool:
        return not self.shared


class ProfileStore:
    """User and item keyword profiles, filled one interaction at a time."""

    def __init__(self):
        self.users: dict[int, KeywordProfile] = {}
        self.items: dict[int, KeywordProfile] = {}

    def user(self, u: int) -> KeywordProfile:
        prof = self.users.get(u)
        if prof is None:
            prof = self.users[u] = KeywordProfile("user", u)
        return prof

    def item(self, i: int) -> KeywordProfile:
        prof = self.items.get(i)
        if prof is None:
            prof = self.items[i] = KeywordProfile("item", i)
        return prof

    def truncate(self, k: int = 10) -> None:
        for prof in list(self.users.values()) + list(self.items.values()):
            top_k_profile(prof, k)

    def records(self):
        for prof in list(self.users.values()) + list(self.items.values()):
            words = prof.top if prof.top else ranked_words(prof.scores)
            yield {"kind": prof.kind, "id": prof.entity,
                   "keywords": [[w, prof.scores[w]] for w in words]}


def accumulate(store: ProfileStore, user: int, item: int, tokens, weights) -> None:
    """Add each token's attention weight to both the user's and item's profile."""
    if len(tokens) != len(weights):
        raise ContractError(f"{len(tokens)} tokens but {len(weights)} attention weights")
    if not len(tokens):
        return
    total = float(sum(weights))
    if abs(total - 1.0) > 1e-9:
        raise ContractError(f"attention weights sum to {total}, not 1")
    us, its = store.user(user).scores, store.item(item).scores
    for tok, w in zip(tokens, weights):
        w = float(w)
        us[tok] = us.get(tok, 0.0) + w
        its[tok] = its.get(tok, 0.0) + w


def ranked_words(scores: dict) -> list:
    return sorted(scores, key=lambda w: (-scores[w], w))


def top_k_profile(profile: KeywordProfile, k: int = 10) -> KeywordProfile:
    if k < 1:
        raise ValueError("k must be >= 1")
    profile.top = ranked_words(profile.scores)[:k]
    return profile


def explain(user_profile: KeywordProfile, item_profile: KeywordProfile, predicted=None) -> Explanation:
    """Words in both top-k lists, ordered by summed score (then word)."""
    ut = user_profile.top or ranked_words(user_profile.scores)
    it = item_profile.top or ranked_words(item_profile.scores)
    common = set(ut) & set(it)
    combined = {w: user_profile.scores[w] + item_profile.scores[w] for w in common}
    shared = sorted(common, key=lambda w: (-combined[w], w))
    u_id, i_id = user_profile.entity, item_profile.entity
    if user_profile.kind == "item" and item_profile.kind == "user":
        u_id, i_id = i_id, u_id
    return Explanation(u_id, i_id, shared, [combined[w] for w in shared], predicted)


def write_profiles(store: ProfileStore, path, words=None) -> None:
    """One JSON record per line: kind, id, [[word, score], ...].

    ``words`` maps entity ids to external keys when given as
    ``{"user": [...], "item": [...]}``.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for rec in store.records():
            if words is not None:
                rec["key"] = words[rec["kind"]][rec["id"]]
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_profiles(path) -> ProfileStore:
    store = ProfileStore()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            prof = store.user(rec["id"]) if rec["kind"] == "user" else store.item(rec["id"])
            prof.scores = {w: float(s) for w, s in rec["keywords"]}
            prof.top = [w for w, _ in rec["keywords"]]
    return store

