# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels.

Same contracts as :mod:`focusopt.backends.purepy`.  The per-sample nets here
are tiny, so avoiding numpy dispatch overhead is the whole point; each kernel
is a straight C loop over float64 memoryviews.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

NAME = "c"


def affine_fwd(double[:, ::1] W, double[::1] b, double[::1] x):
    cdef Py_ssize_t n_out = W.shape[0]
    cdef Py_ssize_t n_in = W.shape[1]
    cdef cnp.ndarray[double, ndim=1] z = np.empty(n_out, dtype=np.float64)
    cdef double[::1] zv = z
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n_out):
        acc = b[i]
        for j in range(n_in):
            acc += W[i, j] * x[j]
        zv[i] = acc
    return z


def outer_acc(double[:, ::1] A, double[::1] u, double[::1] v):
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = A.shape[1]
    cdef Py_ssize_t i, j
    cdef double ui
    for i in range(n):
        ui = u[i]
        for j in range(m):
            A[i, j] += ui * v[j]


def matvecT_acc(double[::1] out, double[:, ::1] W, double[::1] u):
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t m = W.shape[1]
    cdef Py_ssize_t i, j
    cdef double ui
    for i in range(n):
        ui = u[i]
        for j in range(m):
            out[j] += W[i, j] * ui


def vec_acc(double[::1] out, double[::1] u):
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] += u[i]


def relu_fwd(double[::1] x):
    cdef cnp.ndarray[double, ndim=1] out = np.empty(x.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        ov[i] = x[i] if x[i] > 0.0 else 0.0
    return out


def relu_bwd_acc(double[::1] out, double[::1] x, double[::1] adj):
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        if x[i] > 0.0:
            out[i] += adj[i]


def softmax(double[::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[double, ndim=1] p = np.empty(n, dtype=np.float64)
    cdef double[::1] pv = p
    cdef Py_ssize_t i
    cdef double m = z[0]
    cdef double s = 0.0
    for i in range(1, n):
        if z[i] > m:
            m = z[i]
    for i in range(n):
        pv[i] = exp(z[i] - m)
        s += pv[i]
    for i in range(n):
        pv[i] /= s
    return p


def logsumexp(double[::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t i
    cdef double m = z[0]
    cdef double s = 0.0
    for i in range(1, n):
        if z[i] > m:
            m = z[i]
    for i in range(n):
        s += exp(z[i] - m)
    return m + log(s)


def mlp_forward(widths, double[::1] theta, double[::1] x):
    cdef Py_ssize_t n_layers = len(widths) - 1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w = np.asarray(widths, dtype=np.int64)
    cdef Py_ssize_t off = 0, l, i, j, n_in, n_out
    cdef double acc
    cdef cnp.ndarray[double, ndim=1] a = np.empty(w[0], dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] z
    cdef double[::1] av = a, zv
    for i in range(w[0]):
        av[i] = x[i]
    for l in range(n_layers):
        n_in = w[l]
        n_out = w[l + 1]
        z = np.empty(n_out, dtype=np.float64)
        zv = z
        for i in range(n_out):
            acc = theta[off + n_in * n_out + i]  # bias
            for j in range(n_in):
                acc += theta[off + i * n_in + j] * av[j]
            if l < n_layers - 1 and acc < 0.0:
                acc = 0.0
            zv[i] = acc
        off += n_in * n_out + n_out
        a = z
        av = zv
    return a


def grad_norm(double[::1] g):
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        s += g[i] * g[i]
    return sqrt(s)


def axpy(double[::1] y, double a, double[::1] x):
    cdef Py_ssize_t i
    for i in range(y.shape[0]):
        y[i] += a * x[i]


def scale(double[::1] x, double a):
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        x[i] *= a
