# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""BLAS-backed MLP kernel for the sampling hot path.

A forward pass and an input-VJP are the two operations the denoising loop
performs per flow step, so both are single dgemv chains with the GIL
released. Row-major (out, in) weights are fed to Fortran BLAS as their own
transpose; no copies are made after construction.
"""

import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()

ACT_TANH = 0
ACT_IDENTITY = 1

DEF MAX_LAYERS = 16


cdef class FastMlp:
    cdef double[::1] wflat
    cdef double[::1] bflat
    cdef Py_ssize_t[MAX_LAYERS] woff
    cdef Py_ssize_t[MAX_LAYERS] boff
    cdef int[MAX_LAYERS + 1] dims
    cdef int n_layers
    cdef int act
    cdef readonly list weights
    cdef readonly list biases
    cdef readonly int activation
    cdef readonly int in_dim
    cdef readonly int out_dim
    cdef readonly str backend

    def __init__(self, weights, biases, activation=ACT_TANH):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        if len(weights) > MAX_LAYERS:
            raise ValueError(f"at most {MAX_LAYERS} layers supported")
        if activation not in (ACT_TANH, ACT_IDENTITY):
            raise ValueError(f"unknown activation code {activation}")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        cdef Py_ssize_t l, wtot = 0, btot = 0
        self.n_layers = len(self.weights)
        for l in range(self.n_layers):
            w = self.weights[l]
            b = self.biases[l]
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shape mismatch")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError("layer width mismatch")
            self.dims[l] = w.shape[1]
            self.dims[l + 1] = w.shape[0]
            self.woff[l] = wtot
            self.boff[l] = btot
            wtot += w.shape[0] * w.shape[1]
            btot += b.shape[0]
        wbuf = np.empty(wtot, dtype=np.float64)
        bbuf = np.empty(btot, dtype=np.float64)
        for l in range(self.n_layers):
            wbuf[self.woff[l]:self.woff[l] + self.weights[l].size] = self.weights[l].ravel()
            bbuf[self.boff[l]:self.boff[l] + self.biases[l].size] = self.biases[l]
        self.wflat = wbuf
        self.bflat = bbuf
        self.act = activation
        self.activation = activation
        self.in_dim = self.dims[0]
        self.out_dim = self.dims[self.n_layers]
        self.backend = "cython"

    cdef void _layer(self, Py_ssize_t l, double* hin, double* hout) noexcept nogil:
        # z = W_l @ h + b_l via dgemv on the Fortran view of row-major W (= W^T)
        cdef char transT = b'T'
        cdef int m = self.dims[l], n = self.dims[l + 1], inc = 1
        cdef double one = 1.0
        memcpy(hout, &self.bflat[self.boff[l]], n * sizeof(double))
        dgemv(&transT, &m, &n, &one, &self.wflat[self.woff[l]], &m, hin, &inc, &one, hout, &inc)

    def forward(self, x):
        cdef double[::1] h = np.ascontiguousarray(x, dtype=np.float64)
        if h.shape[0] != self.in_dim:
            raise ValueError(f"expected input of length {self.in_dim}, got {h.shape[0]}")
        cdef Py_ssize_t l
        cdef double[::1] out
        for l in range(self.n_layers):
            buf = np.empty(self.dims[l + 1], dtype=np.float64)
            out = buf
            with nogil:
                self._layer(l, &h[0], &out[0])
            if l < self.n_layers - 1 and self.act == 0:
                # numpy's SIMD tanh is ~10x libm's scalar one; the ufunc
                # dispatch is cheap next to that
                np.tanh(buf, out=buf)
            h = out
            res = buf
        return res

    def forward_cached(self, x):
        """Forward pass returning (output, hidden post-activations)."""
        cdef double[::1] h = np.ascontiguousarray(x, dtype=np.float64)
        if h.shape[0] != self.in_dim:
            raise ValueError(f"expected input of length {self.in_dim}, got {h.shape[0]}")
        cdef Py_ssize_t l
        cdef double[::1] out
        hs = []
        res = None
        for l in range(self.n_layers):
            buf = np.empty(self.dims[l + 1], dtype=np.float64)
            out = buf
            with nogil:
                self._layer(l, &h[0], &out[0])
            if l < self.n_layers - 1:
                if self.act == 0:
                    np.tanh(buf, out=buf)
                hs.append(buf)
            else:
                res = buf
            h = out
        return res, hs

    def vjp_input(self, hs, cot):
        """Pull an output cotangent back to the input of the net."""
        cdef double[::1] g = np.array(cot, dtype=np.float64)
        if g.shape[0] != self.out_dim:
            raise ValueError(f"expected cotangent of length {self.out_dim}, got {g.shape[0]}")
        cdef char transN = b'N'
        cdef int m, n, inc = 1
        cdef double one = 1.0, zero = 0.0
        cdef Py_ssize_t l, j
        cdef double[::1] gin, hv
        res = None
        for l in range(self.n_layers - 1, -1, -1):
            buf = np.empty(self.dims[l], dtype=np.float64)
            gin = buf
            m = self.dims[l]
            n = self.dims[l + 1]
            with nogil:
                # W^T @ g: the Fortran view is already W^T, so trans='N'
                dgemv(&transN, &m, &n, &one, &self.wflat[self.woff[l]], &m,
                      &g[0], &inc, &zero, &gin[0], &inc)
            if l > 0 and self.act == 0:
                hv = hs[l - 1]
                with nogil:
                    for j in range(m):
                        gin[j] *= 1.0 - hv[j] * hv[j]
            g = gin
            res = buf
        return res
