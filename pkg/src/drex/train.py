"""Training loop: chronological batches, Adam, GRU state commits, early stopping."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluate as ev
from .config import ConfigError, TrainConfig
from .core.adam import AdamState, TrainingError, adam_step
from .explain import ProfileStore, accumulate
from .kernels import get_kernel
from .model import EntityState, HyperParams, init_params, init_states, rating_matrix
from .seeding import substream
from .text import EmbeddingProvider, load_embedding_file

log = logging.getLogger(__name__)

EMBED_TABLE = "embed.table"


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_f1: float
    val_ndcg: float
    criterion: float
    wall_time: float

    HEADER = ("epoch", "train_loss", "val_f1_at_5", "val_ndcg_at_5", "criterion", "wall_time")

    def row(self, with_time=True):
        vals = [self.epoch, self.train_loss, self.val_f1, self.val_ndcg, self.criterion]
        return vals + [self.wall_time] if with_time else vals


def make_provider(config: TrainConfig) -> EmbeddingProvider:
    if config.embedder_kind == "file_table":
        if not config.embedder_path:
            raise ConfigError("embedder.kind = file_table needs embedder.path")
        return load_embedding_file(config.embedder_path)
    return EmbeddingProvider.hashed(config.embedder_b, config.embedder_table_size,
                                    seed=int(substream(config.seed, "embed").integers(2 ** 31)))


class Recommender:
    """Trained parameters + entity states + the token lookup needed to score."""

    def __init__(self, params, states: EntityState, provider: EmbeddingProvider, vocab, config: TrainConfig,
                 kernel_backend=None):
        self.params = params
        self.states = states
        self.provider = provider
        self.vocab = list(vocab)
        self.config = config
        self.vocab_rows = provider.rows(self.vocab)
        self.kernel = get_kernel(kernel_backend or config.kernel)(params)

    @property
    def table(self) -> np.ndarray:
        return self.params.get(EMBED_TABLE, self.provider.table)

    def embeds(self, tokens):
        if not tokens:
            return None
        return self.table[self.vocab_rows[np.asarray(tokens, dtype=np.int64)]]

    def predict(self, user: int, item: int, interaction=None) -> float:
        """Raw score for (user, item).

        With ``eval_input = review`` the held-out interaction's review passes
        through fusion (rating block absent) and both GRUs before the head;
        otherwise the stored states feed the head directly.
        """
        U, I = self.states.U, self.states.I
        if self.config.eval_input == "review":
            E = self.embeds(interaction.tokens) if interaction is not None else None
            return self.kernel.forward(E, 0, U[user], I[item])[0]
        return head(self.params, U[user], I[item])

    def predictions(self, interactions):
        return np.array([self.predict(it.user_idx, it.item_idx, it) for it in interactions])

    def report(self, bundle, split="test", scope=None, normalization=None, theta=None):
        cfg = self.config
        scope = scope or cfg.scope
        theta = cfg.relevance_threshold if theta is None else theta
        held = getattr(bundle, split)
        rankings, skipped = ev.build_rankings(self.predict, bundle, scope, split)
        return ev.metric_report(self.predictions(held), [it.rating for it in held], rankings,
                                theta=theta, normalization=normalization or cfg.normalization,
                                scale=cfg.rating_scale, scope=scope, n_excluded=skipped)


def head(params, u, i) -> float:
    h = np.maximum(np.concatenate([u, i]) @ params["mlp.L1"] + params["mlp.c1"], 0.0)
    return float(h @ params["mlp.L2"][:, 0] + params["mlp.c2"][0])


def validation_criterion(model: Recommender, bundle) -> tuple[float, float, float]:
    """(F1@5, NDCG@5, their mean) over the validation split."""
    if not bundle.validation:
        return 0.0, 0.0, 0.0
    rankings, _ = ev.build_rankings(model.predict, bundle, "test_items", "validation")
    theta = model.config.relevance_threshold
    f1 = ev.f1_at_k(rankings, 5, theta)[2]
    nd = ev.ndcg_at_k(rankings, 5, model.config.normalization, theta)
    return f1, nd, (f1 + nd) / 2.0


def early_stop(history, patience: int) -> bool:
    """True once ``patience`` epochs have passed without a strictly better criterion."""
    if not history:
        raise ValueError("empty history")
    best = max(range(len(history)), key=lambda j: (history[j].criterion, -j))
    return len(history) - 1 - best >= patience


def chronological(interactions):
    if interactions and all(it.timestamp is not None for it in interactions):
        return sorted(interactions, key=lambda it: it.timestamp)
    return list(interactions)


def _encoder_backward(params, grads, side, X, G):
    """Accumulate encoder gradients for input rows ``X`` with output cotangents ``G``."""
    W1, c1, W2 = params[f"{side}.W1"], params[f"{side}.c1"], params[f"{side}.W2"]
    pre = X @ W1 + c1
    H = np.maximum(pre, 0.0)
    grads[f"{side}.W2"] += H.T @ G
    grads[f"{side}.c2"] += G.sum(axis=0)
    dH = (G @ W2.T) * (pre > 0)
    grads[f"{side}.W1"] += X.T @ dH
    grads[f"{side}.c1"] += dH.sum(axis=0)


@dataclass
class TrainResult:
    model: Recommender
    history: list = field(default_factory=list)
    best_epoch: int = 0
    profiles: ProfileStore | None = None
    stopped_early: bool = False

    @property
    def params(self):
        return self.model.params

    @property
    def states(self):
        return self.model.states


class Trainer:
    def __init__(self, bundle, config: TrainConfig, provider: EmbeddingProvider | None = None,
                 params=None, states: EntityState | None = None, validate=None, probe=None):
        if not bundle.train:
            raise ConfigError("training split is empty")
        if config.rating_scale != bundle.rating_scale:
            config = replace(config, rating_scale=bundle.rating_scale)
        self.bundle = bundle
        self.cfg = config
        self.provider = provider or make_provider(config)
        self.hyper = HyperParams(d=config.d, b=self.provider.dim, S=config.rating_scale, lam=config.lam)
        M, N = bundle.n_users, bundle.n_items
        mlp = config.variant == "drex_mlp"
        if params is None:
            params = init_params(self.hyper, config.seed, M, N, encoders=mlp)
            # start the output at the mean training rating so the head's
            # ReLUs are not driven dead while chasing the offset
            params["mlp.c2"][:] = np.mean([it.rating for it in bundle.train])
            if self.provider.trainable:
                params[EMBED_TABLE] = self.provider.table
        self.params = params
        self.R = rating_matrix(bundle.train, M, N, config.rating_scale) if mlp else None
        if states is None:
            states = (init_states("mlp_encoders", self.hyper, M, N, params=params, ratings=self.R) if mlp
                      else init_states("random", self.hyper, M, N, seed=config.seed))
        self.states = states
        self.vocab_rows = self.provider.rows(bundle.vocab)
        self.order = chronological(bundle.train)
        self.validate = validate
        # probe(interaction, read_u, read_i, written_u, written_i) sees every state commit
        self.probe = probe
        self.adam = AdamState()

    def _embeds(self, it):
        if not it.tokens:
            return None, None
        rows = self.vocab_rows[np.asarray(it.tokens, dtype=np.int64)]
        table = self.params.get(EMBED_TABLE, self.provider.table)
        return table[rows], rows

    def model(self) -> Recommender:
        return Recommender(self.params, self.states, self.provider, self.bundle.vocab, self.cfg)

    def run_epoch(self, epoch: int, collect_profiles: bool) -> tuple[float, ProfileStore | None]:
        cfg = self.cfg
        params, st = self.params, self.states
        mlp = cfg.variant == "drex_mlp"
        leaf = cfg.state_mode == "leaf"
        if mlp:
            st.U[:] = self._encode("enc_u", self.R)
            st.I[:] = self._encode("enc_i", self.R.T)
        order = self.order
        if cfg.shuffle:
            perm = substream(cfg.seed, "shuffle", epoch).permutation(len(order))
            order = [order[j] for j in perm]
        drop_rng = substream(cfg.seed, "rating_dropout", epoch)
        trainables = dict(params)
        if leaf:
            trainables["state.U"], trainables["state.I"] = st.U, st.I
        grads = {k: np.zeros_like(v) for k, v in trainables.items()}
        kernel = get_kernel(cfg.kernel)(params, grads)
        profiles = ProfileStore() if collect_profiles else None
        seen_u, seen_i = set(), set()
        total_loss = 0.0
        B = cfg.batch_size
        n_batches = (len(order) + B - 1) // B
        for bidx in range(n_batches):
            batch = order[bidx * B:(bidx + 1) * B]
            for g in grads.values():
                g.fill(0.0)
            scale = 1.0 / len(batch)
            enc_u, enc_i = [], []
            drops = drop_rng.random(len(batch)) < cfg.rating_dropout
            batch_loss = 0.0
            for pos, it in enumerate(batch):
                u, i = it.user_idx, it.item_idx
                first_u = mlp and u not in seen_u
                first_i = mlp and i not in seen_i
                E, rows = self._embeds(it)
                rating = 0 if drops[pos] else it.rating
                loss, pred, _, _, _, du, di, dE = kernel.train_step(
                    E, rating, st.U[u], st.I[i], float(it.rating), cfg.lam, scale,
                    want_state=leaf or first_u or first_i, want_embed=rows is not None and EMBED_TABLE in grads)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, user {self.bundle.user_ids[u]!r}, "
                        f"item {self.bundle.item_ids[i]!r}")
                batch_loss += loss
                if dE is not None:
                    np.add.at(grads[EMBED_TABLE], rows, dE)
                if leaf:
                    grads["state.U"][u] += du
                    grads["state.I"][i] += di
                if first_u:
                    enc_u.append((u, du))
                if first_i:
                    enc_i.append((i, di))
            if mlp:
                seen_u.update(it.user_idx for it in batch)
                seen_i.update(it.item_idx for it in batch)
                if enc_u:
                    idx = [u for u, _ in enc_u]
                    _encoder_backward(params, grads, "enc_u", self.R[idx], np.array([g for _, g in enc_u]))
                if enc_i:
                    idx = [i for i, _ in enc_i]
                    _encoder_backward(params, grads, "enc_i", self.R.T[idx], np.array([g for _, g in enc_i]))
            if leaf and cfg.reg_scope == "full" and cfg.lam:
                grads["state.U"] += cfg.lam * st.U
                grads["state.I"] += cfg.lam * st.I
                batch_loss += 0.5 * cfg.lam * (np.sum(st.U ** 2) + np.sum(st.I ** 2)) * len(batch)
            adam_step(trainables, grads, self.adam, cfg.lr)
            total_loss += batch_loss
            collect = profiles is not None and (cfg.explain_window == "final_epoch" or bidx == n_batches - 1)
            self._commit(kernel, batch, profiles if collect else None)
        return total_loss / len(order), profiles

    def _encode(self, side, X):
        p = self.params
        H = np.maximum(X @ p[f"{side}.W1"] + p[f"{side}.c1"], 0.0)
        return H @ p[f"{side}.W2"] + p[f"{side}.c2"]

    def _commit(self, kernel, batch, profiles):
        """Replay the batch in order with post-step parameters, chaining states."""
        st = self.states
        vocab = self.bundle.vocab
        for it in batch:
            u, i = it.user_idx, it.item_idx
            E, _ = self._embeds(it)
            read_u, read_i = st.U[u].copy(), st.I[i].copy()
            _, u2, i2, attn = kernel.forward(E, it.rating, read_u, read_i)
            st.U[u] = u2
            st.I[i] = i2
            if self.probe is not None:
                self.probe(it, read_u, read_i, u2, i2)
            if profiles is not None and attn is not None:
                accumulate(profiles, u, i, [vocab[t] for t in it.tokens], attn)

    def criterion(self) -> tuple[float, float, float]:
        if self.validate is not None:
            return self.validate(self)
        return validation_criterion(self.model(), self.bundle)

    def fit(self) -> TrainResult:
        cfg = self.cfg
        history: list[EpochStats] = []
        best = None
        stopped = False
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            loss, profiles = self.run_epoch(epoch, collect_profiles=True)
            f1, nd, crit = self.criterion()
            history.append(EpochStats(epoch, loss, f1, nd, crit, time.perf_counter() - t0))
            log.info("epoch %d loss %.5f val F1@5 %.4f NDCG@5 %.4f", epoch, loss, f1, nd)
            if best is None or crit > best[0]:
                best = (crit, epoch, copy.deepcopy(self.params), self.states.copy(), profiles)
            if early_stop(history, cfg.patience):
                stopped = True
                break
        if best is None:
            model = self.model()
            return TrainResult(model, history, 0, None, False)
        _, epoch, params, states, profiles = best
        if profiles is not None:
            profiles.truncate(cfg.profile_k)
        model = Recommender(params, states, self.provider, self.bundle.vocab, cfg)
        return TrainResult(model, history, epoch, profiles, stopped)


def train(bundle, config: TrainConfig, provider=None, **kwargs) -> TrainResult:
    return Trainer(bundle, config, provider, **kwargs).fit()


# ---------------------------------------------------------------------------
# hyperparameter sweep

LR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
D_GRID = (8, 16, 32, 64, 128, 256)


def score_s(reports) -> float:
    """Mean over runs of (MAE + Σ_k (1 - F1@k) + Σ_k (1 - NDCG@k)) / 11, k = 1..5."""
    vals = []
    for rep in reports:
        terms = [rep.mae] + [1.0 - rep.f1[k] for k in range(1, 6)] + [1.0 - rep.ndcg[k] for k in range(1, 6)]
        vals.append(sum(terms) / len(terms))
    return float(np.mean(vals))


@dataclass
class SweepResult:
    table: list
    winner: dict
    runs: dict


def sweep(bundle, base: TrainConfig, lrs=LR_GRID, lams=LAMBDA_GRID, ds=(64,), runs=3,
          provider=None, split="test") -> SweepResult:
    table, all_runs = [], {}
    for d in ds:
        for lam in lams:
            for lr in lrs:
                reps = []
                for r in range(runs):
                    cfg = replace(base, lr=lr, lam=lam, d=d, seed=base.seed + r)
                    res = train(bundle, cfg, provider)
                    reps.append(res.model.report(bundle, split))
                key = (lr, lam, d)
                all_runs[key] = reps
                table.append({"lr": lr, "lambda": lam, "d": d, "s": score_s(reps)})
    winner = min(table, key=lambda row: (row["s"], row["lambda"], row["lr"]))
    return SweepResult(table, winner, all_runs)
