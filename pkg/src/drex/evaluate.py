"""Rating and ranking metrics, rank statistics across algorithms."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

K_VALUES = (1, 2, 3, 4, 5, 10, 15, 20)


@dataclass
class UserRanking:
    """Candidates of one user. ``truths`` holds 0 where the rating is unknown."""

    user: int
    items: list
    scores: list
    truths: list

    def ranked_relevance(self, theta: float) -> list[bool]:
        order = sorted(range(len(self.items)), key=lambda j: (-self.scores[j], self.items[j]))
        return [self.truths[j] >= theta for j in order]

    def n_relevant(self, theta: float) -> int:
        return sum(1 for t in self.truths if t >= theta)


def mae(predictions, truths, scale: int | None = 5) -> float:
    """Mean absolute error; predictions are clamped to [1, scale] first."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("mae needs two non-empty sequences of equal length")
    if scale is not None:
        p = np.clip(p, 1.0, float(scale))
    return float(np.mean(np.abs(p - t)))


def _eligible(rankings, theta):
    return [r for r in rankings if r.n_relevant(theta) > 0]


def f1_at_k(rankings, k: int, theta: float = 4.0):
    """(P@k, R@k, F1@k); users without relevant candidates are skipped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    users = _eligible(rankings, theta)
    if not users:
        return 0.0, 0.0, 0.0
    p_sum = r_sum = 0.0
    for r in users:
        hits = sum(r.ranked_relevance(theta)[:k])
        p_sum += hits / k
        r_sum += hits / r.n_relevant(theta)
    p, rec = p_sum / len(users), r_sum / len(users)
    f1 = 0.0 if p + rec == 0 else 2 * p * rec / (p + rec)
    return p, rec, f1


def ndcg_at_k(rankings, k: int, normalization: str = "capped", theta: float = 4.0) -> float:
    """Binary-gain NDCG@k.

    ``capped`` normalises by the ideal DCG over min(k, |rel|) positions;
    ``paper_literal`` sums the ideal discounts over all |rel| positions.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if normalization not in ("capped", "paper_literal"):
        raise ValueError(f"unknown normalization {normalization!r}")
    users = _eligible(rankings, theta)
    if not users:
        return 0.0
    total = 0.0
    for r in users:
        rel = r.ranked_relevance(theta)
        dcg = sum(1.0 / math.log2(pos + 2) for pos, hit in enumerate(rel[:k]) if hit)
        n_rel = r.n_relevant(theta)
        depth = min(k, n_rel) if normalization == "capped" else n_rel
        total += dcg / sum(1.0 / math.log2(pos + 2) for pos in range(depth))
    return total / len(users)


@dataclass
class MetricReport:
    mae: float
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    f1: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)
    n_users: int = 0
    n_excluded: int = 0
    theta: float = 4.0
    normalization: str = "capped"
    scope: str = "test_items"
    meta: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols = ["mae"]
        for name in ("P", "R", "F1", "NDCG"):
            cols += [f"{name}@{k}" for k in sorted(self.f1)]
        return cols + ["n_users", "n_excluded", "theta", "normalization", "scope"]

    def row(self) -> list:
        vals = [self.mae]
        for table in (self.precision, self.recall, self.f1, self.ndcg):
            vals += [table[k] for k in sorted(table)]
        return vals + [self.n_users, self.n_excluded, self.theta, self.normalization, self.scope]

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("precision", "recall", "f1", "ndcg"):
            out[key] = {str(k): v for k, v in out[key].items()}
        return out


def metric_report(predictions, truths, rankings, ks=K_VALUES, theta=4.0,
                  normalization="capped", scale=5, scope="test_items", n_excluded=0) -> MetricReport:
    rep = MetricReport(mae(predictions, truths, scale), theta=theta,
                       normalization=normalization, scope=scope)
    for k in ks:
        rep.precision[k], rep.recall[k], rep.f1[k] = f1_at_k(rankings, k, theta)
        rep.ndcg[k] = ndcg_at_k(rankings, k, normalization, theta)
    eligible = _eligible(rankings, theta)
    rep.n_users = len(eligible)
    rep.n_excluded = n_excluded + len(rankings) - len(eligible)
    return rep


def build_rankings(score_fn, bundle, scope: str = "test_items", split: str = "test"):
    """Candidate lists per user.

    ``score_fn(user, item, interaction_or_None)`` returns the predicted score.
    ``test_items`` ranks each user's held-out interactions; ``full_catalog``
    ranks every item absent from the user's train split, with unobserved
    items counted as irrelevant. Returns (rankings, users skipped for having
    no held-out interactions).
    """
    held = getattr(bundle, split)
    by_user = defaultdict(list)
    for it in held:
        by_user[it.user_idx].append(it)
    rankings = []
    if scope == "test_items":
        for u in sorted(by_user):
            its = sorted(by_user[u], key=lambda it: it.item_idx)
            rankings.append(UserRanking(u, [it.item_idx for it in its],
                                        [float(score_fn(u, it.item_idx, it)) for it in its],
                                        [it.rating for it in its]))
    elif scope == "full_catalog":
        seen = defaultdict(set)
        for it in bundle.train:
            seen[it.user_idx].add(it.item_idx)
        for u in sorted(by_user):
            truth = {it.item_idx: it for it in by_user[u]}
            items = [i for i in range(bundle.n_items) if i not in seen[u]]
            rankings.append(UserRanking(
                u, items, [float(score_fn(u, i, truth.get(i))) for i in items],
                [truth[i].rating if i in truth else 0 for i in items]))
    else:
        raise ValueError(f"unknown ranking scope {scope!r}")
    users_with_history = {it.user_idx for it in bundle.train}
    skipped = len(users_with_history - set(by_user))
    return rankings, skipped


# ---------------------------------------------------------------------------
# significance


def average_ranks(values, higher_is_better=True) -> np.ndarray:
    """Ranks 1..n with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    key = -v if higher_is_better else v
    order = np.argsort(key, kind="stable")
    ranks = np.empty(len(v))
    j = 0
    while j < len(v):
        k = j
        while k + 1 < len(v) and key[order[k + 1]] == key[order[j]]:
            k += 1
        ranks[order[j:k + 1]] = (j + k) / 2.0 + 1.0
        j = k + 1
    return ranks


@dataclass
class FriedmanResult:
    mean_ranks: np.ndarray
    chi2: float
    f_f: float


def friedman_ranks(score_table, higher_is_better=True) -> FriedmanResult:
    """Mean ranks over datasets and the Iman-Davenport statistic.

    ``score_table`` is models x datasets.
    """
    S = np.asarray(score_table, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError("score table must be 2-D (models x datasets)")
    K, N = S.shape
    if K < 2 or N < 2:
        raise ValueError(f"need at least 2 models and 2 datasets, got {K}x{N}")
    ranks = np.column_stack([average_ranks(S[:, j], higher_is_better) for j in range(N)])
    R = ranks.mean(axis=1)
    chi2 = 12.0 * N / (K * (K + 1)) * (np.sum(R ** 2) - K * (K + 1) ** 2 / 4.0)
    denom = N * (K - 1) - chi2
    f_f = math.inf if denom <= 0 else (N - 1) * chi2 / denom
    return FriedmanResult(R, float(chi2), float(f_f))


def nemenyi_cd(K: int, N: int, q_alpha: float) -> float:
    if K < 2 or N < 1 or q_alpha < 0:
        raise ValueError("need K >= 2, N >= 1, q_alpha >= 0")
    return q_alpha * math.sqrt(K * (K + 1) / (6.0 * N))
