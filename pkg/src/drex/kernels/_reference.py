"""Pure-numpy per-interaction forward/backward.

The attention block never forms the projected token matrix: with
``q = P_t v`` the scores are ``E q + v·b_t`` and, because the weights sum to
one, the pooled review vector is ``P_tᵀ(aᵀE) + b_t``. Cost is O(w·b + b·d)
instead of O(w·b·d).
"""

import numpy as np

from ..core.tape import sigmoid_values
from .layout import GRU_SIDES, check_layout


class Kernel:
    backend = "python"

    def __init__(self, params: dict, grads: dict | None = None):
        check_layout(params, grads)
        self.p = params
        self.g = grads
        self.d = params["b_x"].shape[0]
        self.S = params["P_s"].shape[0]

    # -- forward ------------------------------------------------------------

    def _gru(self, side, s, x):
        p = self.p
        W_r, W_z, W_h = p[side + ".W_r"], p[side + ".W_z"], p[side + ".W_h"]
        U_r, U_z, U_h = p[side + ".U_r"], p[side + ".U_z"], p[side + ".U_h"]
        r = sigmoid_values(W_r @ s + U_r @ x + p[side + ".b_r"])
        z = sigmoid_values(W_z @ s + U_z @ x + p[side + ".b_z"])
        rs = r * s
        c = np.tanh(W_h @ rs + U_h @ x + p[side + ".b_h"])
        out = (1.0 - z) * s + z * c
        return out, (s, r, z, rs, c)

    def _forward(self, E, rating, u, i):
        p, d = self.p, self.d
        zvec = np.zeros(2 * d)
        cache = {"E": E, "rating": rating}
        attn = None
        if E is not None and len(E):
            q = p["P_t"] @ p["v"]
            scores = E @ q + p["v"] @ p["b_t"]
            e = np.exp(scores - scores.max())
            attn = e / e.sum()
            ebar = attn @ E
            zvec[:d] = p["P_t"].T @ ebar + p["b_t"]
            cache.update(q=q, attn=attn, ebar=ebar)
        if rating:
            if not 1 <= rating <= self.S:
                raise ValueError(f"rating {rating} outside 1..{self.S}")
            zvec[d:] = p["P_s"][rating - 1] + p["b_r"]
        x = p["P_x"].T @ zvec + p["b_x"]
        u2, cu = self._gru("gru_u", u, x)
        i2, ci = self._gru("gru_i", i, x)
        joint = np.concatenate([u2, i2])
        hpre = p["mlp.L1"].T @ joint + p["mlp.c1"]
        h = np.maximum(hpre, 0.0)
        pred = float(p["mlp.L2"][:, 0] @ h + p["mlp.c2"][0])
        cache.update(z=zvec, x=x, cu=cu, ci=ci, joint=joint, hpre=hpre, h=h, u2=u2, i2=i2)
        return pred, u2, i2, attn, cache

    def forward(self, E, rating, u, i):
        """Returns (prediction, u', i', attention or None)."""
        pred, u2, i2, attn, _ = self._forward(E, rating, u, i)
        return pred, u2, i2, attn

    # -- backward -----------------------------------------------------------

    def _gru_back(self, side, dout, x, cache, dx):
        p, g = self.p, self.g
        s, r, z, rs, c = cache
        dz = dout * (c - s)
        dc = dout * z
        ds = dout * (1.0 - z)
        dcp = dc * (1.0 - c * c)
        g[side + ".W_h"] += np.outer(dcp, rs)
        g[side + ".U_h"] += np.outer(dcp, x)
        g[side + ".b_h"] += dcp
        drs = p[side + ".W_h"].T @ dcp
        dr = drs * s
        ds += drs * r
        dx += p[side + ".U_h"].T @ dcp
        dzp = dz * z * (1.0 - z)
        g[side + ".W_z"] += np.outer(dzp, s)
        g[side + ".U_z"] += np.outer(dzp, x)
        g[side + ".b_z"] += dzp
        ds += p[side + ".W_z"].T @ dzp
        dx += p[side + ".U_z"].T @ dzp
        drp = dr * r * (1.0 - r)
        g[side + ".W_r"] += np.outer(drp, s)
        g[side + ".U_r"] += np.outer(drp, x)
        g[side + ".b_r"] += drp
        ds += p[side + ".W_r"].T @ drp
        dx += p[side + ".U_r"].T @ drp
        return ds

    def train_step(self, E, rating, u, i, target, lam, scale,
                   want_state=False, want_embed=False):
        """Forward, then accumulate ``scale * d(loss)`` into the gradient buffers.

        Returns (loss, prediction, u', i', attention, du, di, dE); the last
        three are ``None`` unless requested.
        """
        p, g, d = self.p, self.g, self.d
        pred, u2, i2, attn, c = self._forward(E, rating, u, i)
        resid = target - pred
        loss = resid * resid + 0.5 * lam * (u2 @ u2 + i2 @ i2)

        dpred = -2.0 * resid * scale
        h, joint = c["h"], c["joint"]
        g["mlp.L2"][:, 0] += dpred * h
        g["mlp.c2"][0] += dpred
        dh = p["mlp.L2"][:, 0] * dpred
        dh = np.where(c["hpre"] > 0, dh, 0.0)
        g["mlp.L1"] += np.outer(joint, dh)
        g["mlp.c1"] += dh
        djoint = p["mlp.L1"] @ dh
        du2 = djoint[:d] + (lam * scale) * u2
        di2 = djoint[d:] + (lam * scale) * i2

        x = c["x"]
        dx = np.zeros(d)
        du = self._gru_back("gru_u", du2, x, c["cu"], dx)
        di = self._gru_back("gru_i", di2, x, c["ci"], dx)

        g["P_x"] += np.outer(c["z"], dx)
        g["b_x"] += dx
        dzvec = p["P_x"] @ dx
        if rating:
            dr = dzvec[d:]
            g["P_s"][rating - 1] += dr
            g["b_r"] += dr
        dE = None
        if attn is not None:
            dt = dzvec[:d]
            ebar, q, v = c["ebar"], c["q"], p["v"]
            g["P_t"] += np.outer(ebar, dt)
            g["b_t"] += dt
            debar = p["P_t"] @ dt
            da = E @ debar + p["b_t"] @ dt
            dscore = attn * (da - attn @ da)
            dq = E.T @ dscore
            dsum = dscore.sum()
            g["P_t"] += np.outer(dq, v)
            g["v"] += p["P_t"].T @ dq + dsum * p["b_t"]
            g["b_t"] += dsum * v
            if want_embed:
                dE = np.outer(attn, debar) + np.outer(dscore, q)
        return (loss, pred, u2, i2, attn,
                du if want_state else None, di if want_state else None, dE)
