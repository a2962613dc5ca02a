"""Finite-difference checks of every forward operation and the composed loss."""

from __future__ import annotations

import numpy as np

from .core import tape as T
from .core.gradcheck import finite_diff_gradcheck
from .kernels import KERNEL_PARAMS, CythonKernel, PythonKernel
from .model import (HyperParams, encoder, fuse, gru_update, init_params, interaction_loss, predict,
                    rating_features, review_features)
from .seeding import substream

TOLERANCE = 1e-4


def _readout(tape, out, seed):
    """Fixed random linear functional of ``out`` so every coordinate matters."""
    w = tape.const(substream(seed, "gradcheck_readout").normal(size=out.shape))
    return T.total(T.mul(out, w))


def _pick(params, prefix=None, names=()):
    keys = [k for k in params if (prefix and k.startswith(prefix)) or k in names]
    return {k: params[k] for k in keys}


def _toy(seed: int, d=4, b=6, S=5, words=5, n_users=3, n_items=4):
    hyper = HyperParams(d=d, b=b, S=S)
    params = init_params(hyper, seed, n_users, n_items, encoders=True)
    rng = substream(seed, "gradcheck")
    # spread pre-activations so ReLU/sigmoid/tanh are probed away from zero
    for k in params:
        params[k] = params[k] * 1.5
    return hyper, params, rng, words


def operation_cases(seed: int = 0):
    """(name, fn, params) for each forward operation."""
    hyper, p, rng, w = _toy(seed)
    d, b, S = hyper.d, hyper.b, hyper.S
    E = rng.normal(size=(w, b))
    u, i = rng.normal(size=d) * 0.5, rng.normal(size=d) * 0.5
    t0, r0 = rng.normal(size=d), rng.normal(size=d)
    x0 = rng.normal(size=d)
    ro = seed
    cases = []

    def projection(tape, n):
        return _readout(tape, T.project_rows(n["P_t"], n["b_t"], n["E"]), ro)
    cases.append(("projection", projection, {"P_t": p["P_t"], "b_t": p["b_t"], "E": E}))

    def attention(tape, n):
        t, a = review_features(n["E"], n)
        return T.add(_readout(tape, t, ro), _readout(tape, a, ro))
    cases.append(("softmax_attention", attention, {"P_t": p["P_t"], "b_t": p["b_t"], "v": p["v"], "E": E}))

    def rating_embedding(tape, n):
        return _readout(tape, rating_features(tape, 3, n), ro)
    cases.append(("rating_embedding", rating_embedding, {"P_s": p["P_s"], "b_r": p["b_r"]}))

    def fusion(tape, n):
        both = fuse(tape, n["t"], n["r"], n)
        only_t = fuse(tape, n["t"], None, n)
        only_r = fuse(tape, None, n["r"], n)
        return T.add(T.add(_readout(tape, both, ro), _readout(tape, only_t, ro)), _readout(tape, only_r, ro))
    cases.append(("fusion", fusion, {"P_x": p["P_x"], "b_x": p["b_x"], "t": t0, "r": r0}))

    for side, s0 in (("gru_u", u), ("gru_i", i)):
        def gru(tape, n, side=side):
            return _readout(tape, gru_update(n["s"], n["x"], n, side), ro)
        cases.append((side, gru, dict(_pick(p, side + "."), s=s0, x=x0)))

    def head(tape, n):
        return _readout(tape, predict(n["u"], n["i"], n), ro)
    cases.append(("mlp_head", head, dict(_pick(p, "mlp."), u=u, i=i)))

    for side, width in (("enc_u", p["enc_u.W1"].shape[0]), ("enc_i", p["enc_i.W1"].shape[0])):
        X = rng.uniform(0.0, 1.0, width)
        def enc(tape, n, side=side):
            return _readout(tape, encoder(n["X"], n, side), ro)
        cases.append((side, enc, dict(_pick(p, side + "."), X=X)))
    return cases


def toy_loss_case(seed: int = 0, lam: float = 0.1):
    """Batch-mean loss over three interactions that share a user.

    The second interaction has no review and the third no rating, so every
    fusion path is exercised; user and item states are differentiated too.
    """
    hyper, p, rng, w = _toy(seed)
    d, b = hyper.d, hyper.b
    params = {k: p[k] for k in KERNEL_PARAMS}
    params["U"] = rng.normal(size=(2, d)) * 0.5
    params["I"] = rng.normal(size=(3, d)) * 0.5
    data = [(0, 0, rng.normal(size=(w, b)), 4, 4.0),
            (0, 1, None, 2, 2.0),
            (1, 2, rng.normal(size=(w - 2, b)), 0, 5.0)]

    def fn(tape, n):
        total = None
        for u, i, E, rating, target in data:
            En = tape.const(E) if E is not None else None
            loss = interaction_loss(tape, n, En, rating, T.take_row(n["U"], u), T.take_row(n["I"], i),
                                    target, lam)[0]
            total = loss if total is None else T.add(total, loss)
        return T.scale(total, 1.0 / len(data))
    return "full_loss", fn, params


def kernel_case(kernel_cls, seed: int = 0, lam: float = 0.1):
    """Analytic kernel gradients against central differences of its own loss."""
    hyper, p, rng, w = _toy(seed)
    params = {k: np.ascontiguousarray(p[k]) for k in KERNEL_PARAMS}
    E = rng.normal(size=(w, hyper.b))
    u, i = rng.normal(size=hyper.d) * 0.5, rng.normal(size=hyper.d) * 0.5
    target, rating = 4.0, 3

    def loss_of(kernel):
        pred, u2, i2, _ = kernel.forward(E, rating, u, i)
        return (target - pred) ** 2 + 0.5 * lam * (u2 @ u2 + i2 @ i2)

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    kernel = kernel_cls(params, grads)
    *_, du, di, dE = kernel.train_step(E, rating, u, i, target, lam, 1.0, True, True)
    analytic = dict(grads, u=du, i=di, E=dE)
    inputs = {"u": u, "i": i, "E": E}
    worst, h = 0.0, 1e-5
    for name, arr in list(params.items()) + list(inputs.items()):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            plus = loss_of(kernel)
            flat[j] = keep - h
            minus = loss_of(kernel)
            flat[j] = keep
            num = (plus - minus) / (2 * h)
            a = float(analytic[name].reshape(-1)[j])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


def run_gradchecks(seed: int = 0, h: float = 1e-5):
    """[(check name, max relative error)] over operations, full loss and kernels."""
    results = [(name, finite_diff_gradcheck(fn, params, h)) for name, fn, params in operation_cases(seed)]
    name, fn, params = toy_loss_case(seed)
    results.append((name, finite_diff_gradcheck(fn, params, h)))
    results.append(("kernel_python", kernel_case(PythonKernel, seed)))
    if CythonKernel is not None:
        results.append(("kernel_cython", kernel_case(CythonKernel, seed)))
    return results
