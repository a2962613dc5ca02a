# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-interaction forward/backward; mirrors ``_reference.Kernel``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.string cimport memset

from .layout import check_layout

cnp.import_array()

ctypedef double* dptr


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline void _mv(const double* W, const double* x, double* out, int n, int m) nogil:
    # out[n] = W[n, m] @ x[m]
    cdef int a, k
    cdef double acc
    for a in range(n):
        acc = 0.0
        for k in range(m):
            acc += W[a * m + k] * x[k]
        out[a] = acc


cdef inline void _mtv_add(const double* W, const double* x, double* out, int n, int m) nogil:
    # out[m] += W[n, m].T @ x[n]
    cdef int a, k
    cdef double xa
    for a in range(n):
        xa = x[a]
        if xa != 0.0:
            for k in range(m):
                out[k] += W[a * m + k] * xa


cdef inline void _mtv_add_full(const double* W, const double* x, double* out, int n, int m) nogil:
    # out[m] += W[n, m].T @ x[n], no zero skipping (keeps absent blocks exact)
    cdef int a, k
    for a in range(n):
        for k in range(m):
            out[k] += W[a * m + k] * x[a]

cdef inline void _outer_add(double* G, const double* a, const double* b, int n, int m) nogil:
    cdef int i, k
    cdef double ai
    for i in range(n):
        ai = a[i]
        if ai != 0.0:
            for k in range(m):
                G[i * m + k] += ai * b[k]


cdef inline double* _p(cnp.ndarray arr):
    return <double*> cnp.PyArray_DATA(arr)


cdef class _Gru:
    cdef cnp.ndarray W_r, W_z, W_h, U_r, U_z, U_h, b_r, b_z, b_h
    cdef object gW_r, gW_z, gW_h, gU_r, gU_z, gU_h, gb_r, gb_z, gb_h
    cdef cnp.ndarray s, r, z, rs, c, tmp

    def __init__(self, params, grads, side, int d):
        self.W_r = params[side + ".W_r"]; self.W_z = params[side + ".W_z"]; self.W_h = params[side + ".W_h"]
        self.U_r = params[side + ".U_r"]; self.U_z = params[side + ".U_z"]; self.U_h = params[side + ".U_h"]
        self.b_r = params[side + ".b_r"]; self.b_z = params[side + ".b_z"]; self.b_h = params[side + ".b_h"]
        if grads is not None:
            self.gW_r = grads[side + ".W_r"]; self.gW_z = grads[side + ".W_z"]; self.gW_h = grads[side + ".W_h"]
            self.gU_r = grads[side + ".U_r"]; self.gU_z = grads[side + ".U_z"]; self.gU_h = grads[side + ".U_h"]
            self.gb_r = grads[side + ".b_r"]; self.gb_z = grads[side + ".b_z"]; self.gb_h = grads[side + ".b_h"]
        self.s = np.zeros(d); self.r = np.zeros(d); self.z = np.zeros(d)
        self.rs = np.zeros(d); self.c = np.zeros(d); self.tmp = np.zeros(d)

    cdef void forward(self, const double* s_in, const double* x, double* out, int d):
        cdef double* s = _p(self.s)
        cdef double* r = _p(self.r)
        cdef double* z = _p(self.z)
        cdef double* rs = _p(self.rs)
        cdef double* c = _p(self.c)
        cdef double* tmp = _p(self.tmp)
        cdef double* br = _p(self.b_r)
        cdef double* bz = _p(self.b_z)
        cdef double* bh = _p(self.b_h)
        cdef int a
        for a in range(d):
            s[a] = s_in[a]
        _mv(_p(self.W_r), s, r, d, d)
        _mv(_p(self.U_r), x, tmp, d, d)
        for a in range(d):
            r[a] = _sigmoid(r[a] + tmp[a] + br[a])
        _mv(_p(self.W_z), s, z, d, d)
        _mv(_p(self.U_z), x, tmp, d, d)
        for a in range(d):
            z[a] = _sigmoid(z[a] + tmp[a] + bz[a])
            rs[a] = r[a] * s[a]
        _mv(_p(self.W_h), rs, c, d, d)
        _mv(_p(self.U_h), x, tmp, d, d)
        for a in range(d):
            c[a] = tanh(c[a] + tmp[a] + bh[a])
            out[a] = (1.0 - z[a]) * s[a] + z[a] * c[a]

    cdef void backward(self, const double* dout, const double* x, double* dx, double* ds, int d):
        cdef double* s = _p(self.s)
        cdef double* r = _p(self.r)
        cdef double* z = _p(self.z)
        cdef double* rs = _p(self.rs)
        cdef double* c = _p(self.c)
        cdef double* tmp = _p(self.tmp)
        cdef double* g
        cdef int a
        cdef double dz
        # tmp <- d(candidate pre-activation)
        for a in range(d):
            ds[a] = dout[a] * (1.0 - z[a])
            tmp[a] = dout[a] * z[a] * (1.0 - c[a] * c[a])
        _outer_add(_p(self.gW_h), tmp, rs, d, d)
        _outer_add(_p(self.gU_h), tmp, x, d, d)
        g = _p(self.gb_h)
        for a in range(d):
            g[a] += tmp[a]
        _mtv_add(_p(self.U_h), tmp, dx, d, d)
        # rs <- d(r*s) then reuse as dr pre-activation after gating
        memset(rs, 0, d * sizeof(double))
        _mtv_add(_p(self.W_h), tmp, rs, d, d)
        for a in range(d):
            ds[a] += rs[a] * r[a]
            rs[a] = rs[a] * s[a] * r[a] * (1.0 - r[a])
        # tmp <- d(update gate pre-activation)
        for a in range(d):
            dz = dout[a] * (c[a] - s[a])
            tmp[a] = dz * z[a] * (1.0 - z[a])
        _outer_add(_p(self.gW_z), tmp, s, d, d)
        _outer_add(_p(self.gU_z), tmp, x, d, d)
        g = _p(self.gb_z)
        for a in range(d):
            g[a] += tmp[a]
        _mtv_add(_p(self.W_z), tmp, ds, d, d)
        _mtv_add(_p(self.U_z), tmp, dx, d, d)
        _outer_add(_p(self.gW_r), rs, s, d, d)
        _outer_add(_p(self.gU_r), rs, x, d, d)
        g = _p(self.gb_r)
        for a in range(d):
            g[a] += rs[a]
        _mtv_add(_p(self.W_r), rs, ds, d, d)
        _mtv_add(_p(self.U_r), rs, dx, d, d)


cdef class Kernel:
    cdef public str backend
    cdef public int d, S, b
    cdef object p, g
    cdef cnp.ndarray P_t, b_t, v, P_s, b_rat, P_x, b_x, L1, c1, L2, c2
    cdef _Gru gu, gi
    cdef cnp.ndarray zvec, x, joint, hpre, h, dx, djoint, dzvec, q, ebar, debar, dq
    cdef cnp.ndarray u2, i2, du, di

    def __init__(self, dict params, grads=None):
        check_layout(params, grads)
        self.backend = "cython"
        self.p = params
        self.g = grads
        self.P_t = params["P_t"]; self.b_t = params["b_t"]; self.v = params["v"]
        self.P_s = params["P_s"]; self.b_rat = params["b_r"]
        self.P_x = params["P_x"]; self.b_x = params["b_x"]
        self.L1 = params["mlp.L1"]; self.c1 = params["mlp.c1"]
        self.L2 = params["mlp.L2"]; self.c2 = params["mlp.c2"]
        self.d = self.b_x.shape[0]
        self.S = self.P_s.shape[0]
        self.b = self.P_t.shape[0]
        self.gu = _Gru(params, grads, "gru_u", self.d)
        self.gi = _Gru(params, grads, "gru_i", self.d)
        d, b = self.d, self.b
        self.zvec = np.zeros(2 * d); self.x = np.zeros(d); self.joint = np.zeros(2 * d)
        self.hpre = np.zeros(d); self.h = np.zeros(d); self.dx = np.zeros(d)
        self.djoint = np.zeros(2 * d); self.dzvec = np.zeros(2 * d)
        self.q = np.zeros(b); self.ebar = np.zeros(b); self.debar = np.zeros(b); self.dq = np.zeros(b)
        self.du = np.zeros(d); self.di = np.zeros(d)

    cdef object _forward(self, E, int rating, u, i):
        cdef int d = self.d, b = self.b, w = 0, j, k, a
        cdef double[:, ::1] Ev
        cdef double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
        cdef double[::1] iv = np.ascontiguousarray(i, dtype=np.float64)
        cdef double* z = _p(self.zvec)
        cdef double* q = _p(self.q)
        cdef double* ebar = _p(self.ebar)
        cdef double* Pt = _p(self.P_t)
        cdef double* bt = _p(self.b_t)
        cdef double* vv = _p(self.v)
        cdef double* x = _p(self.x)
        cdef double* hp = _p(self.hpre)
        cdef double* h = _p(self.h)
        cdef double* joint = _p(self.joint)
        cdef double* L2 = _p(self.L2)
        cdef double vb, mx, tot, acc, pred
        cdef double* row
        cdef double* ap
        cdef cnp.ndarray attn = None
        if uv.shape[0] != d or iv.shape[0] != d:
            raise ValueError(f"state vectors must have length {d}")
        memset(z, 0, 2 * d * sizeof(double))
        if E is not None:
            w = E.shape[0]
        if w > 0:
            Ev = np.ascontiguousarray(E, dtype=np.float64)
            if Ev.shape[1] != b:
                raise ValueError(f"token embeddings must have {b} columns, got {Ev.shape[1]}")
            _mv(Pt, vv, q, b, d)
            vb = 0.0
            for a in range(d):
                vb += vv[a] * bt[a]
            attn = np.empty(w)
            ap = _p(attn)
            for j in range(w):
                row = &Ev[j, 0]
                acc = vb
                for k in range(b):
                    acc += row[k] * q[k]
                ap[j] = acc
            mx = ap[0]
            for j in range(1, w):
                if ap[j] > mx:
                    mx = ap[j]
            tot = 0.0
            for j in range(w):
                ap[j] = exp(ap[j] - mx)
                tot += ap[j]
            for j in range(w):
                ap[j] /= tot
            memset(ebar, 0, b * sizeof(double))
            for j in range(w):
                row = &Ev[j, 0]
                for k in range(b):
                    ebar[k] += ap[j] * row[k]
            for a in range(d):
                z[a] = bt[a]
            _mtv_add(Pt, ebar, z, b, d)
        if rating:
            if rating < 1 or rating > self.S:
                raise ValueError(f"rating {rating} outside 1..{self.S}")
            row = _p(self.P_s) + (rating - 1) * d
            for a in range(d):
                z[d + a] = row[a] + (<double*> _p(self.b_rat))[a]
        for a in range(d):
            x[a] = (<double*> _p(self.b_x))[a]
        _mtv_add_full(_p(self.P_x), z, x, 2 * d, d)
        u2 = np.empty(d)
        i2 = np.empty(d)
        self.gu.forward(&uv[0], x, _p(u2), d)
        self.gi.forward(&iv[0], x, _p(i2), d)
        for a in range(d):
            joint[a] = (<double*> _p(u2))[a]
            joint[d + a] = (<double*> _p(i2))[a]
        for a in range(d):
            hp[a] = (<double*> _p(self.c1))[a]
        _mtv_add_full(_p(self.L1), joint, hp, 2 * d, d)
        pred = (<double*> _p(self.c2))[0]
        for a in range(d):
            h[a] = hp[a] if hp[a] > 0 else 0.0
            pred += L2[a] * h[a]
        return pred, u2, i2, attn

    def forward(self, E, int rating, u, i):
        """Returns (prediction, u', i', attention or None)."""
        return self._forward(E, rating, u, i)

    def train_step(self, E, int rating, u, i, double target, double lam, double scale,
                   bint want_state=False, bint want_embed=False):
        cdef int d = self.d, b = self.b, w, j, k, a
        pred, u2, i2, attn = self._forward(E, rating, u, i)
        cdef double* pu = _p(u2)
        cdef double* pi = _p(i2)
        cdef double p_ = pred
        cdef double resid = target - p_
        cdef double nu = 0.0, ni = 0.0
        for a in range(d):
            nu += pu[a] * pu[a]
            ni += pi[a] * pi[a]
        cdef double loss = resid * resid + 0.5 * lam * (nu + ni)
        cdef double dpred = -2.0 * resid * scale
        cdef double* h = _p(self.h)
        cdef double* hp = _p(self.hpre)
        cdef double* L2 = _p(self.L2)
        cdef double* gL2 = _p(self.g["mlp.L2"])
        cdef double* gc1 = _p(self.g["mlp.c1"])
        cdef double* dj = _p(self.djoint)
        cdef double* dx = _p(self.dx)
        cdef double* dz = _p(self.dzvec)
        cdef double* z = _p(self.zvec)
        cdef double* x = _p(self.x)
        cdef cnp.ndarray dh_arr = np.empty(d)
        cdef double* dh = _p(dh_arr)
        (<double*> _p(self.g["mlp.c2"]))[0] += dpred
        for a in range(d):
            gL2[a] += dpred * h[a]
            dh[a] = L2[a] * dpred if hp[a] > 0 else 0.0
            gc1[a] += dh[a]
        _outer_add(_p(self.g["mlp.L1"]), _p(self.joint), dh, 2 * d, d)
        _mv(_p(self.L1), dh, dj, 2 * d, d)
        cdef double ls = lam * scale
        for a in range(d):
            dj[a] += ls * pu[a]
            dj[d + a] += ls * pi[a]
        memset(dx, 0, d * sizeof(double))
        du = np.empty(d)
        di = np.empty(d)
        self.gu.backward(dj, x, dx, _p(du), d)
        self.gi.backward(dj + d, x, dx, _p(di), d)
        _outer_add(_p(self.g["P_x"]), z, dx, 2 * d, d)
        cdef double* gbx = _p(self.g["b_x"])
        for a in range(d):
            gbx[a] += dx[a]
        _mv(_p(self.P_x), dx, dz, 2 * d, d)
        cdef double* row
        cdef double* gbr
        if rating:
            row = _p(self.g["P_s"]) + (rating - 1) * d
            gbr = _p(self.g["b_r"])
            for a in range(d):
                row[a] += dz[d + a]
                gbr[a] += dz[d + a]
        dE = None
        cdef double[:, ::1] Ev
        cdef double* ap
        cdef double* debar
        cdef double* dq
        cdef double* q
        cdef double* bt
        cdef double* vv
        cdef double* gbt
        cdef double* gv
        cdef double btdt, mean, dsum, acc
        cdef cnp.ndarray ds_arr
        cdef double* ds
        cdef double[:, ::1] dEv
        if attn is not None:
            Ev = np.ascontiguousarray(E, dtype=np.float64)
            w = Ev.shape[0]
            ap = _p(attn)
            debar = _p(self.debar)
            dq = _p(self.dq)
            q = _p(self.q)
            bt = _p(self.b_t)
            vv = _p(self.v)
            gbt = _p(self.g["b_t"])
            gv = _p(self.g["v"])
            _outer_add(_p(self.g["P_t"]), _p(self.ebar), dz, b, d)
            btdt = 0.0
            for a in range(d):
                gbt[a] += dz[a]
                btdt += bt[a] * dz[a]
            _mv(_p(self.P_t), dz, debar, b, d)
            ds_arr = np.empty(w)
            ds = _p(ds_arr)
            mean = 0.0
            for j in range(w):
                row = &Ev[j, 0]
                acc = btdt
                for k in range(b):
                    acc += row[k] * debar[k]
                ds[j] = acc
                mean += ap[j] * acc
            dsum = 0.0
            for j in range(w):
                ds[j] = ap[j] * (ds[j] - mean)
                dsum += ds[j]
            memset(dq, 0, b * sizeof(double))
            for j in range(w):
                row = &Ev[j, 0]
                for k in range(b):
                    dq[k] += ds[j] * row[k]
            _outer_add(_p(self.g["P_t"]), dq, vv, b, d)
            _mtv_add(_p(self.P_t), dq, gv, b, d)
            for a in range(d):
                gv[a] += dsum * bt[a]
                gbt[a] += dsum * vv[a]
            if want_embed:
                dE = np.empty((w, b))
                dEv = dE
                for j in range(w):
                    for k in range(b):
                        dEv[j, k] = ap[j] * debar[k] + ds[j] * q[k]
        return (loss, pred, u2, i2, attn,
                du if want_state else None, di if want_state else None, dE)

