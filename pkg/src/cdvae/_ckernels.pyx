# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-frame CDVAE forward/backward and the Adam update.

Parameters and gradients live in the flat float64 buffers of a ParamStore;
each network keeps raw pointers into them plus private activation caches.
Matrix-vector work goes through BLAS (dgemv/dger) from scipy.
"""

import numpy as np

from libc.math cimport exp, sqrt
from libc.stdlib cimport calloc, free
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemv, dger

cdef char TRANS = b'T'
cdef char NOTRANS = b'N'
cdef int ONE = 1


cdef struct Layer:
    int n_in
    int n_out
    double* W
    double* b
    double* g
    double* be
    double* dW
    double* db
    double* dg
    double* dbe
    const double* inp
    double* a
    double* xhat
    double* out
    double* dout
    double inv


cdef class Net:
    cdef Layer* layers
    cdef int n_layers
    cdef double slope
    cdef double ln_eps
    cdef double* dx
    cdef int n_in

    def __cinit__(self, double[::1] data, double[::1] grad, list widths, list offsets,
                  double slope, double ln_eps):
        # offsets: per layer (W, b, gamma, beta) with gamma/beta = -1 on the output layer
        cdef int i
        cdef Layer* L
        self.n_layers = len(widths) - 1
        self.layers = <Layer*> calloc(self.n_layers, sizeof(Layer))
        self.slope = slope
        self.ln_eps = ln_eps
        self.n_in = widths[0]
        self.dx = <double*> calloc(self.n_in, sizeof(double))
        for i in range(self.n_layers):
            L = &self.layers[i]
            L.n_in = widths[i]
            L.n_out = widths[i + 1]
            w_off, b_off, g_off, be_off = offsets[i]
            L.W = &data[w_off]
            L.b = &data[b_off]
            L.dW = &grad[w_off]
            L.db = &grad[b_off]
            if g_off >= 0:
                L.g = &data[g_off]
                L.be = &data[be_off]
                L.dg = &grad[g_off]
                L.dbe = &grad[be_off]
            L.a = <double*> calloc(L.n_out, sizeof(double))
            L.xhat = <double*> calloc(L.n_out, sizeof(double))
            L.out = <double*> calloc(L.n_out, sizeof(double))
            L.dout = <double*> calloc(L.n_out, sizeof(double))

    def __dealloc__(self):
        cdef int i
        if self.layers != NULL:
            for i in range(self.n_layers):
                free(self.layers[i].a)
                free(self.layers[i].xhat)
                free(self.layers[i].out)
                free(self.layers[i].dout)
            free(self.layers)
        free(self.dx)

    cdef double* forward(self, const double* x) noexcept nogil:
        cdef int l, i, n
        cdef Layer* L
        cdef const double* inp = x
        cdef double mean, var, d, one = 1.0
        for l in range(self.n_layers):
            L = &self.layers[l]
            n = L.n_out
            L.inp = inp
            memcpy(L.a, L.b, n * sizeof(double))
            dgemv(&TRANS, &L.n_in, &L.n_out, &one, L.W, &L.n_in, <double*> inp, &ONE, &one, L.a, &ONE)
            if l == self.n_layers - 1:
                memcpy(L.out, L.a, n * sizeof(double))
                break
            mean = 0.0
            for i in range(n):
                d = L.a[i] if L.a[i] > 0 else self.slope * L.a[i]
                L.xhat[i] = d
                mean += d
            mean /= n
            var = 0.0
            for i in range(n):
                d = L.xhat[i] - mean
                L.xhat[i] = d
                var += d * d
            var /= n
            L.inv = 1.0 / sqrt(var + self.ln_eps)
            for i in range(n):
                L.xhat[i] *= L.inv
                L.out[i] = L.g[i] * L.xhat[i] + L.be[i]
            inp = L.out
        return self.layers[self.n_layers - 1].out

    cdef double* backward(self, const double* dout, bint need_dx) noexcept nogil:
        """Accumulate parameter gradients for cotangent ``dout`` of the last forward."""
        cdef int l, i, n
        cdef Layer* L
        cdef Layer* P
        cdef double m1, m2, dxh, one = 1.0, zero = 0.0
        cdef double* target
        L = &self.layers[self.n_layers - 1]
        memcpy(L.dout, dout, L.n_out * sizeof(double))
        for l in range(self.n_layers - 1, -1, -1):
            L = &self.layers[l]
            n = L.n_out
            if l < self.n_layers - 1:
                # layer norm then leaky relu, in reverse
                m1 = 0.0
                m2 = 0.0
                for i in range(n):
                    L.dg[i] += L.dout[i] * L.xhat[i]
                    L.dbe[i] += L.dout[i]
                    dxh = L.dout[i] * L.g[i]
                    m1 += dxh
                    m2 += dxh * L.xhat[i]
                m1 /= n
                m2 /= n
                for i in range(n):
                    dxh = L.dout[i] * L.g[i]
                    dxh = L.inv * (dxh - m1 - L.xhat[i] * m2)
                    L.dout[i] = dxh if L.a[i] > 0 else self.slope * dxh
            for i in range(n):
                L.db[i] += L.dout[i]
            dger(&L.n_in, &L.n_out, &one, <double*> L.inp, &ONE, L.dout, &ONE, L.dW, &L.n_in)
            if l > 0:
                target = self.layers[l - 1].dout
            elif need_dx:
                target = self.dx
            else:
                break
            dgemv(&NOTRANS, &L.n_in, &L.n_out, &one, L.W, &L.n_in, L.dout, &ONE, &zero, target, &ONE)
        return self.dx


cdef inline double sgn(double x) noexcept nogil:
    return (x > 0) - (x < 0)


cdef class ObjectiveKernel:
    """Batch-mean loss terms and their gradient, written into ``params.store.grad``."""

    cdef Net enc_sp, enc_mcc, dec_sp, dec_mcc
    cdef object store
    cdef double[::1] data
    cdef double[::1] grad
    cdef int L, S, sp_dim, mcc_dim
    cdef size_t codes_off
    cdef double* zin
    cdef double* dmu_sp
    cdef double* dlv_sp
    cdef double* dmu_mcc
    cdef double* dlv_mcc
    cdef double* denc
    cdef double* resid_sp
    cdef double* resid_mcc

    def __cinit__(self, params):
        cfg = params.config
        st = params.store
        self.store = st
        self.data = st.data
        self.grad = st.grad
        self.L = cfg.latent_dim
        self.S = cfg.speaker_dim
        self.sp_dim = cfg.sp_dim
        self.mcc_dim = cfg.mcc_dim
        self.codes_off = st.offsets["speaker_codes"]
        nets = []
        for name in ("enc_sp", "enc_mcc", "dec_sp", "dec_mcc"):
            widths = cfg.widths(name)
            offs = []
            for i in range(len(widths) - 2):
                p = f"{name}.h{i}"
                offs.append((st.offsets[p + ".W"], st.offsets[p + ".b"],
                             st.offsets[p + ".gamma"], st.offsets[p + ".beta"]))
            offs.append((st.offsets[name + ".out.W"], st.offsets[name + ".out.b"], -1, -1))
            nets.append(Net(st.data, st.grad, widths, offs, cfg.slope, cfg.ln_eps))
        self.enc_sp, self.enc_mcc, self.dec_sp, self.dec_mcc = nets
        self.zin = <double*> calloc(self.L + self.S, sizeof(double))
        self.denc = <double*> calloc(4 * self.L, sizeof(double))
        self.dmu_sp = self.denc
        self.dlv_sp = self.denc + self.L
        self.dmu_mcc = self.denc + 2 * self.L
        self.dlv_mcc = self.denc + 3 * self.L
        self.resid_sp = <double*> calloc(self.sp_dim, sizeof(double))
        self.resid_mcc = <double*> calloc(self.mcc_dim, sizeof(double))

    def __dealloc__(self):
        free(self.zin)
        free(self.denc)
        free(self.resid_sp)
        free(self.resid_mcc)

    cdef double path(self, Net dec, const double* enc_out, const double* eps, const double* x,
                     int dim, double* resid, double* y, double* gy, double coef,
                     double* dmu, double* dlv) noexcept nogil:
        """Decode the sample ``mu + sigma*eps`` with code ``y``; backprop ``coef * loss``."""
        cdef int i, L = self.L
        cdef double loss = 0.0, s, dz
        cdef double* xhat
        cdef double* din
        for i in range(L):
            self.zin[i] = enc_out[i] + exp(0.5 * enc_out[L + i]) * eps[i]
        memcpy(self.zin + L, y, self.S * sizeof(double))
        xhat = dec.forward(self.zin)
        for i in range(dim):
            s = xhat[i] - x[i]
            loss += s * s
            resid[i] = coef * s
        if coef == 0.0:
            return 0.5 * loss
        din = dec.backward(resid, True)
        for i in range(L):
            dz = din[i]
            dmu[i] += dz
            dlv[i] += dz * eps[i] * 0.5 * exp(0.5 * enc_out[L + i])
        for i in range(self.S):
            gy[i] += din[L + i]
        return 0.5 * loss

    cdef double kld(self, const double* enc_out, double coef, double* dmu, double* dlv) noexcept nogil:
        cdef int i, L = self.L
        cdef double acc = 0.0, mu, lv, e
        for i in range(L):
            mu = enc_out[i]
            lv = enc_out[L + i]
            e = exp(lv)
            acc += mu * mu + e - lv - 1.0
            dmu[i] += coef * mu
            dlv[i] += coef * 0.5 * (e - 1.0)
        return 0.5 * acc

    def loss_and_grad(self, x_sp, x_mcc, long[::1] speaker_idx, tuple noise,
                      double[::1] weights, int mode, bint sim_on_sample):
        """Return batch-mean ``[l_wi, l_kld, l_cross, l_sim]``; gradient of the weighted total goes to store.grad."""
        cdef Py_ssize_t B = speaker_idx.shape[0]
        cdef int L = self.L
        cdef bint use_sp = mode != 2
        cdef bint use_mcc = mode != 1
        cdef bint cd = mode == 0
        empty = np.zeros((B, 1))
        cdef double[:, ::1] xs = np.ascontiguousarray(x_sp if use_sp else empty, dtype=np.float64)
        cdef double[:, ::1] xm = np.ascontiguousarray(x_mcc if use_mcc else empty, dtype=np.float64)
        cdef double[:, ::1] e_spw = np.ascontiguousarray(noise[0] if use_sp else empty, dtype=np.float64)
        cdef double[:, ::1] e_spc = np.ascontiguousarray(noise[1] if use_sp else empty, dtype=np.float64)
        cdef double[:, ::1] e_mw = np.ascontiguousarray(noise[2] if use_mcc else empty, dtype=np.float64)
        cdef double[:, ::1] e_mc = np.ascontiguousarray(noise[3] if use_mcc else empty, dtype=np.float64)
        if use_sp and (xs.shape[1] != self.sp_dim or e_spw.shape[1] != L or e_spc.shape[1] != L):
            raise ValueError("SP batch or noise has the wrong width")
        if use_mcc and (xm.shape[1] != self.mcc_dim or e_mw.shape[1] != L or e_mc.shape[1] != L):
            raise ValueError("MCC batch or noise has the wrong width")
        cdef double w_wi = weights[0], w_kld = weights[1], w_cross = weights[2], w_sim = weights[3]
        cdef double scale = 1.0 / B
        cdef double l_wi = 0.0, l_kld = 0.0, l_cross = 0.0, l_sim = 0.0
        cdef double* o_sp = NULL
        cdef double* o_mcc = NULL
        cdef double* y
        cdef double* gy
        cdef double d, c, s_sp, s_mcc
        cdef Py_ssize_t f
        cdef int i
        cdef double* grad = &self.grad[0]
        cdef double* data = &self.data[0]
        memset(grad, 0, self.grad.shape[0] * sizeof(double))
        with nogil:
            for f in range(B):
                y = data + self.codes_off + speaker_idx[f] * self.S
                gy = grad + self.codes_off + speaker_idx[f] * self.S
                memset(self.denc, 0, 4 * L * sizeof(double))
                if use_sp:
                    o_sp = self.enc_sp.forward(&xs[f, 0])
                if use_mcc:
                    o_mcc = self.enc_mcc.forward(&xm[f, 0])
                if use_sp:
                    l_wi += self.path(self.dec_sp, o_sp, &e_spw[f, 0], &xs[f, 0], self.sp_dim,
                                      self.resid_sp, y, gy, w_wi * scale, self.dmu_sp, self.dlv_sp)
                    l_kld += self.kld(o_sp, w_kld * scale, self.dmu_sp, self.dlv_sp)
                if use_mcc:
                    l_wi += self.path(self.dec_mcc, o_mcc, &e_mw[f, 0], &xm[f, 0], self.mcc_dim,
                                      self.resid_mcc, y, gy, w_wi * scale, self.dmu_mcc, self.dlv_mcc)
                    l_kld += self.kld(o_mcc, w_kld * scale, self.dmu_mcc, self.dlv_mcc)
                if cd:
                    l_cross += self.path(self.dec_mcc, o_sp, &e_spc[f, 0], &xm[f, 0], self.mcc_dim,
                                         self.resid_mcc, y, gy, w_cross * scale, self.dmu_sp, self.dlv_sp)
                    l_cross += self.path(self.dec_sp, o_mcc, &e_mc[f, 0], &xs[f, 0], self.sp_dim,
                                         self.resid_sp, y, gy, w_cross * scale, self.dmu_mcc, self.dlv_mcc)
                    c = w_sim * scale
                    for i in range(L):
                        if sim_on_sample:
                            s_sp = exp(0.5 * o_sp[L + i])
                            s_mcc = exp(0.5 * o_mcc[L + i])
                            d = (o_sp[i] + s_sp * e_spw[f, i]) - (o_mcc[i] + s_mcc * e_mw[f, i])
                            l_sim += d if d > 0 else -d
                            self.dmu_sp[i] += c * sgn(d)
                            self.dlv_sp[i] += c * sgn(d) * e_spw[f, i] * 0.5 * s_sp
                            self.dmu_mcc[i] -= c * sgn(d)
                            self.dlv_mcc[i] -= c * sgn(d) * e_mw[f, i] * 0.5 * s_mcc
                        else:
                            d = o_sp[i] - o_mcc[i]
                            l_sim += d if d > 0 else -d
                            self.dmu_sp[i] += c * sgn(d)
                            self.dmu_mcc[i] -= c * sgn(d)
                if use_sp:
                    self.enc_sp.backward(self.dmu_sp, False)
                if use_mcc:
                    self.enc_mcc.backward(self.dmu_mcc, False)
        return np.array([l_wi * scale, l_kld * scale, l_cross * scale, l_sim * scale])


cdef extern from "_adam.h":
    void cdvae_adam(double* p, const double* g, double* m, double* v, size_t n,
                    double beta1, double beta2, double step, double rbc2, double eps) nogil


def adam_update(double[::1] data, double[::1] grad, double[::1] m, double[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    """In-place Adam step; entries with an exactly zero gradient are skipped."""
    cdef size_t n = data.shape[0]
    cdef double step = lr / (1.0 - beta1 ** t)
    cdef double rbc2 = 1.0 / sqrt(1.0 - beta2 ** t)
    if grad.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: buffer lengths differ")
    if n == 0:
        return
    with nogil:
        cdvae_adam(&data[0], &grad[0], &m[0], &v[0], n, beta1, beta2, step, rbc2, eps)
