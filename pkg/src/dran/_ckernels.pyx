# Fused single-pass versions of the kernels in dran.kernels.
# Semantics must match the NumPy implementations exactly; tests compare both.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_lastaxis(cnp.ndarray x):
    cdef cnp.ndarray flat = np.ascontiguousarray(x).reshape(-1, x.shape[x.ndim - 1])
    cdef const double[:, ::1] xv = flat
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, s, e
    for i in range(rows):
        mx = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > mx:
                mx = xv[i, j]
        s = 0.0
        for j in range(cols):
            e = exp(xv[i, j] - mx)
            out[i, j] = e
            s += e
        for j in range(cols):
            out[i, j] /= s
    return out_arr


def softmax_grad_lastaxis(cnp.ndarray y, cnp.ndarray gout):
    cdef cnp.ndarray yf = np.ascontiguousarray(y).reshape(-1, y.shape[y.ndim - 1])
    cdef cnp.ndarray gf = np.ascontiguousarray(gout).reshape(-1, y.shape[y.ndim - 1])
    cdef const double[:, ::1] yv = yf
    cdef const double[:, ::1] gv = gf
    cdef Py_ssize_t rows = yv.shape[0], cols = yv.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += yv[i, j] * gv[i, j]
        for j in range(cols):
            out[i, j] = yv[i, j] * (gv[i, j] - dot)
    return out_arr


def sigmoid(cnp.ndarray x):
    cdef cnp.ndarray flat = np.ascontiguousarray(x).reshape(-1)
    cdef const double[::1] xv = flat
    cdef Py_ssize_t n = xv.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double e
    for i in range(n):
        if xv[i] >= 0.0:
            out[i] = 1.0 / (1.0 + exp(-xv[i]))
        else:
            e = exp(xv[i])
            out[i] = e / (1.0 + e)
    return out_arr


def sigmoid_grad(cnp.ndarray y, cnp.ndarray gout):
    cdef cnp.ndarray yf = np.ascontiguousarray(y).reshape(-1)
    cdef cnp.ndarray gf = np.ascontiguousarray(gout).reshape(-1)
    cdef const double[::1] yv = yf
    cdef const double[::1] gv = gf
    cdef Py_ssize_t n = yv.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out_arr


def adam_update(double[::1] param, const double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, long step):
    cdef Py_ssize_t n = param.shape[0], i
    cdef double c1 = 1.0 - beta1 ** step
    cdef double c2 = 1.0 - beta2 ** step
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        param[i] -= lr * mhat / (sqrt(vhat) + eps)


def kde_eval(const double[::1] samples, const double[::1] grid, double h, double const):
    cdef Py_ssize_t m = samples.shape[0], g = grid.shape[0], i, j
    out_arr = np.zeros(g, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double u, acc
    for i in range(g):
        acc = 0.0
        for j in range(m):
            u = (grid[i] - samples[j]) / h
            acc += const * exp(-0.5 * u * u)
        out[i] = acc / (m * h)
    return out_arr
