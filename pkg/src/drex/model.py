"""DReX forward computation expressed on the differentiation tape.

These functions are the readable reference for the model. Training runs
through :mod:`drex.kernels`, which fuses the same maths per interaction and is
tested against the functions here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tape as T
from .core.tape import ContractError
from .seeding import substream

GRU_WEIGHTS = ("W_r", "W_z", "W_h", "U_r", "U_z", "U_h")
GRU_BIASES = ("b_r", "b_z", "b_h")


@dataclass
class HyperParams:
    d: int = 64
    b: int = 768
    S: int = 5
    lam: float = 0.0
    K: int = 2

    def __post_init__(self):
        if min(self.d, self.b, self.S) < 1:
            raise ValueError("d, b and S must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.K != 2:
            raise ValueError("only the review + rating modality pair is wired")


@dataclass
class EntityState:
    U: np.ndarray
    I: np.ndarray

    def copy(self) -> "EntityState":
        return EntityState(self.U.copy(), self.I.copy())


def param_shapes(hyper: HyperParams, n_users=0, n_items=0, encoders=False) -> dict[str, tuple]:
    """Name -> (shape, fan_in) for every trainable tensor."""
    d, b, S = hyper.d, hyper.b, hyper.S
    spec = {
        "P_t": ((b, d), b), "b_t": ((d,), b), "v": ((d,), d),
        "P_s": ((S, d), S), "b_r": ((d,), S),
        "P_x": ((2 * d, d), 2 * d), "b_x": ((d,), 2 * d),
    }
    for side in ("gru_u", "gru_i"):
        for w in GRU_WEIGHTS:
            spec[f"{side}.{w}"] = ((d, d), d)
        for bias in GRU_BIASES:
            spec[f"{side}.{bias}"] = ((d,), d)
    spec.update({
        "mlp.L1": ((2 * d, d), 2 * d), "mlp.c1": ((d,), 2 * d),
        "mlp.L2": ((d, 1), d), "mlp.c2": ((1,), d),
    })
    if encoders:
        # user encoder reads a length-N row of the rating matrix, item encoder length M
        for side, n_in in (("enc_u", n_items), ("enc_i", n_users)):
            spec[f"{side}.W1"] = ((n_in, 2 * d), n_in)
            spec[f"{side}.c1"] = ((2 * d,), n_in)
            spec[f"{side}.W2"] = ((2 * d, d), 2 * d)
            spec[f"{side}.c2"] = ((d,), 2 * d)
    return spec


def init_params(hyper: HyperParams, seed: int, n_users=0, n_items=0, encoders=False) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, in a fixed order."""
    rng = substream(seed, "init")
    params = {}
    for name, (shape, fan_in) in param_shapes(hyper, n_users, n_items, encoders).items():
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# ---------------------------------------------------------------------------
# tape operations


def review_features(E: T.Node, p: dict):
    """Attention-pooled review vector. Returns (t, attention node)."""
    if E.shape[0] == 0:
        raise ContractError("review_features needs at least one token; route empty reviews to fuse")
    Ep = T.project_rows(p["P_t"], p["b_t"], E)
    a = T.softmax(T.rows_dot(Ep, p["v"]))
    return T.weighted_rows(a, Ep), a


def one_hot(rating: int, S: int) -> np.ndarray:
    if not 1 <= rating <= S:
        raise ValueError(f"rating {rating} outside 1..{S}")
    s = np.zeros(S)
    s[rating - 1] = 1.0
    return s


def rating_features(tape: T.Tape, rating: int, p: dict) -> T.Node:
    S = p["P_s"].shape[0]
    return T.project(p["P_s"], p["b_r"], tape.const(one_hot(rating, S)))


def fuse(tape: T.Tape, t, r, p: dict) -> T.Node:
    """``P_xᵀ[t; r] + b_x`` with an absent modality (``None``) zero-filled."""
    d = p["b_x"].shape[0]
    t = t if t is not None else tape.const(np.zeros(d))
    r = r if r is not None else tape.const(np.zeros(d))
    return T.project(p["P_x"], p["b_x"], T.concat(t, r))


def gru_update(state: T.Node, x: T.Node, p: dict, side: str) -> T.Node:
    g = lambda k: p[f"{side}.{k}"]  # noqa: E731
    r = T.sigmoid(T.matvec(g("W_r"), state) + T.matvec(g("U_r"), x) + g("b_r"))
    z = T.sigmoid(T.matvec(g("W_z"), state) + T.matvec(g("U_z"), x) + g("b_z"))
    cand = T.tanh(T.matvec(g("W_h"), r * state) + T.matvec(g("U_h"), x) + g("b_h"))
    return T.one_minus(z) * state + z * cand


def predict(u: T.Node, i: T.Node, p: dict) -> T.Node:
    h = T.relu(T.project(p["mlp.L1"], p["mlp.c1"], T.concat(u, i)))
    return T.project(p["mlp.L2"], p["mlp.c2"], h)


def encoder(x: T.Node, p: dict, side: str) -> T.Node:
    h = T.relu(T.project(p[f"{side}.W1"], p[f"{side}.c1"], x))
    return T.project(p[f"{side}.W2"], p[f"{side}.c2"], h)


def interaction_loss(tape, p, E, rating, u, i, target, lam):
    """Squared error plus (lam/2)(|u'|² + |i'|²) for one interaction.

    ``E`` is a node of token embeddings or ``None``; ``rating`` 0 means the
    rating modality is absent. Returns (loss, prediction, u', i').
    """
    t = review_features(E, p)[0] if E is not None and E.shape[0] else None
    r = rating_features(tape, rating, p) if rating else None
    x = fuse(tape, t, r, p)
    u2 = gru_update(u, x, p, "gru_u")
    i2 = gru_update(i, x, p, "gru_i")
    pred = predict(u2, i2, p)
    err = T.sub(tape.const(np.array([float(target)])), pred)
    loss = T.sum_squares(err)
    if lam:
        reg = T.scale(T.sum_squares(u2) + T.sum_squares(i2), lam / 2.0)
        loss = loss + reg
    return loss, pred, u2, i2


# ---------------------------------------------------------------------------
# plain-array forward (evaluation, state commits)


def clamp(pred, S: int):
    return np.clip(pred, 1.0, float(S))


def rating_matrix(interactions, n_users: int, n_items: int, S: int) -> np.ndarray:
    """User x item matrix with entries rating/S and 0 where unrated."""
    R = np.zeros((n_users, n_items))
    for it in interactions:
        R[it.user_idx, it.item_idx] = it.rating / S
    return R


def encode_rows(X: np.ndarray, p: dict, side: str) -> np.ndarray:
    H = np.maximum(X @ p[f"{side}.W1"] + p[f"{side}.c1"], 0.0)
    return H @ p[f"{side}.W2"] + p[f"{side}.c2"]


def init_states(mode: str, hyper: HyperParams, n_users: int, n_items: int, seed: int = 0,
                params: dict | None = None, ratings: np.ndarray | None = None) -> EntityState:
    """Random rows in [-1/sqrt(d), 1/sqrt(d)] or encoder outputs over ``ratings``."""
    if mode == "random":
        rng = substream(seed, "states")
        bound = 1.0 / np.sqrt(hyper.d)
        return EntityState(rng.uniform(-bound, bound, (n_users, hyper.d)),
                           rng.uniform(-bound, bound, (n_items, hyper.d)))
    if mode == "mlp_encoders":
        if params is None or ratings is None:
            raise ValueError("mlp_encoders mode needs encoder parameters and the rating matrix")
        return EntityState(encode_rows(ratings, params, "enc_u"), encode_rows(ratings.T, params, "enc_i"))
    raise ValueError(f"unknown state init mode {mode!r}")
