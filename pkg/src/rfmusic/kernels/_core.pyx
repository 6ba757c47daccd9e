# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: row softmax, rms-norm, SiLU/GELU, AdamW.

Same contracts as `numpy_backend`; benchmarks/bench_kernels.py compares the
two. float32 paths use a polynomial exp (rel. error ~1e-7, exact at 0) since
scalar libm transcendentals lose to NumPy's SIMD ufuncs; float64 paths keep
libm accuracy for gradient-check builds. Single-threaded, deterministic.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, pow

cnp.import_array()

cdef extern from *:
    """
    #include <math.h>
    #include <stdint.h>

    /* exp via range reduction x = n*ln2 + r and a degree-6 polynomial on
       |r| <= ln2/2; exact 2^n scaling through the exponent bits. */
    static inline float rf_fast_expf(float x) {
        if (x > 87.0f) x = 87.0f;
        if (x < -87.0f) return 0.0f;
        float n = rintf(x * 1.44269504088896341f);
        float r = x - n * 0.693359375f;
        r -= n * -2.12194440e-4f;
        float p = 1.0f + r * (1.0f + r * (0.5f + r * (0.16666667f
                  + r * (0.041666668f + r * (0.008333334f + r * 0.0013888889f)))));
        union { uint32_t i; float f; } s;
        s.i = (uint32_t)((int32_t)n + 127) << 23;
        return p * s.f;
    }

    static inline float rf_fast_sigmoidf(float x) {
        return 1.0f / (1.0f + rf_fast_expf(-x));
    }

    static inline float rf_fast_tanhf(float x) {
        if (x > 9.0f) return 1.0f;
        if (x < -9.0f) return -1.0f;
        return 1.0f - 2.0f / (1.0f + rf_fast_expf(2.0f * x));
    }
    """
    float rf_fast_expf(float x) nogil
    float rf_fast_sigmoidf(float x) nogil
    float rf_fast_tanhf(float x) nogil

NAME = "compiled"

ctypedef fused real:
    float
    double

cdef double _SQRT_2_OVER_PI = 0.7978845608028654
cdef double _GELU_C = 0.044715


def softmax_fwd(real[:, ::1] x):
    out_arr = np.empty((x.shape[0], x.shape[1]), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] p = out_arr
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double m, s
    cdef float mf, sf
    if real is float:
        with nogil:
            for i in range(n):
                mf = x[i, 0]
                for j in range(1, d):
                    if x[i, j] > mf:
                        mf = x[i, j]
                sf = 0.0
                for j in range(d):
                    p[i, j] = rf_fast_expf(<float> x[i, j] - mf)
                    sf += p[i, j]
                sf = 1.0 / sf
                for j in range(d):
                    p[i, j] = p[i, j] * sf
    else:
        with nogil:
            for i in range(n):
                m = x[i, 0]
                for j in range(1, d):
                    if x[i, j] > m:
                        m = x[i, j]
                s = 0.0
                for j in range(d):
                    p[i, j] = <real> exp(<double> x[i, j] - m)
                    s += p[i, j]
                s = 1.0 / s
                for j in range(d):
                    p[i, j] = <real> (p[i, j] * s)
    return out_arr


def softmax_bwd(real[:, ::1] p, real[:, ::1] dy):
    out_arr = np.empty((p.shape[0], p.shape[1]), dtype=np.asarray(p).dtype)
    cdef real[:, ::1] dx = out_arr
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], i, j
    cdef double inner
    with nogil:
        for i in range(n):
            inner = 0.0
            for j in range(d):
                inner += <double> p[i, j] * <double> dy[i, j]
            for j in range(d):
                dx[i, j] = <real> (<double> p[i, j] * (<double> dy[i, j] - inner))
    return out_arr


def rmsnorm_fwd(real[:, ::1] x, real[::1] gain, double eps):
    dtype = np.asarray(x).dtype
    y_arr = np.empty((x.shape[0], x.shape[1]), dtype=dtype)
    inv_arr = np.empty(x.shape[0], dtype=dtype)
    cdef real[:, ::1] y = y_arr
    cdef real[::1] inv = inv_arr
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double ms, r
    with nogil:
        for i in range(n):
            ms = 0.0
            for j in range(d):
                ms += <double> x[i, j] * <double> x[i, j]
            r = 1.0 / sqrt(ms / d + eps)
            inv[i] = <real> r
            for j in range(d):
                y[i, j] = <real> (<double> x[i, j] * r * <double> gain[j])
    return y_arr, inv_arr


def rmsnorm_bwd(real[:, ::1] x, real[::1] gain, real[::1] inv, real[:, ::1] dy):
    dtype = np.asarray(x).dtype
    dx_arr = np.empty((x.shape[0], x.shape[1]), dtype=dtype)
    dg_arr = np.zeros(x.shape[1], dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double r, dot, g
    with nogil:
        for i in range(n):
            r = <double> inv[i]
            dot = 0.0
            for j in range(d):
                dot += <double> dy[i, j] * <double> gain[j] * <double> x[i, j]
            dot = dot * r * r * r / d
            for j in range(d):
                g = <double> dy[i, j] * <double> gain[j]
                dx[i, j] = <real> (r * g - dot * <double> x[i, j])
                dg[j] += <double> dy[i, j] * <double> x[i, j] * r
    return dx_arr, dg_arr.astype(dtype)


def silu_fwd(real[::1] x):
    out_arr = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef real[::1] y = out_arr
    cdef Py_ssize_t n = x.shape[0], i
    cdef double s
    if real is float:
        with nogil:
            for i in range(n):
                y[i] = <float> x[i] * rf_fast_sigmoidf(<float> x[i])
    else:
        with nogil:
            for i in range(n):
                s = 1.0 / (1.0 + exp(-<double> x[i]))
                y[i] = <real> (<double> x[i] * s)
    return out_arr


def silu_bwd(real[::1] x, real[::1] dy):
    out_arr = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef real[::1] dx = out_arr
    cdef Py_ssize_t n = x.shape[0], i
    cdef double s
    cdef float sf
    if real is float:
        with nogil:
            for i in range(n):
                sf = rf_fast_sigmoidf(<float> x[i])
                dx[i] = <float> dy[i] * sf * (<float> 1.0 + <float> x[i] * (<float> 1.0 - sf))
    else:
        with nogil:
            for i in range(n):
                s = 1.0 / (1.0 + exp(-<double> x[i]))
                dx[i] = <real> (<double> dy[i] * s * (1.0 + <double> x[i] * (1.0 - s)))
    return out_arr


def gelu_fwd(real[::1] x):
    out_arr = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef real[::1] y = out_arr
    cdef Py_ssize_t n = x.shape[0], i
    cdef double u, xi
    cdef float uf, xf
    if real is float:
        with nogil:
            for i in range(n):
                xf = <float> x[i]
                uf = <float> 0.7978845608 * (xf + <float> 0.044715 * xf * xf * xf)
                y[i] = <float> 0.5 * xf * (<float> 1.0 + rf_fast_tanhf(uf))
    else:
        with nogil:
            for i in range(n):
                xi = <double> x[i]
                u = _SQRT_2_OVER_PI * (xi + _GELU_C * xi * xi * xi)
                y[i] = <real> (0.5 * xi * (1.0 + tanh(u)))
    return out_arr


def gelu_bwd(real[::1] x, real[::1] dy):
    out_arr = np.empty(x.shape[0], dtype=np.asarray(x).dtype)
    cdef real[::1] dx = out_arr
    cdef Py_ssize_t n = x.shape[0], i
    cdef double u, t, du, xi
    cdef float uf, tf, duf, xf
    if real is float:
        with nogil:
            for i in range(n):
                xf = <float> x[i]
                uf = <float> 0.7978845608 * (xf + <float> 0.044715 * xf * xf * xf)
                tf = rf_fast_tanhf(uf)
                duf = <float> 0.7978845608 * (<float> 1.0 + <float> 0.134145 * xf * xf)
                dx[i] = <float> dy[i] * (<float> 0.5 * (<float> 1.0 + tf) + <float> 0.5 * xf * (<float> 1.0 - tf * tf) * duf)
    else:
        with nogil:
            for i in range(n):
                xi = <double> x[i]
                u = _SQRT_2_OVER_PI * (xi + _GELU_C * xi * xi * xi)
                t = tanh(u)
                du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * xi * xi)
                dx[i] = <real> (<double> dy[i] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du))
    return out_arr


def adamw_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                 long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double lr1 = lr / bc1, mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * <double> m[i] + (1.0 - beta1) * <double> g[i]
            vi = beta2 * <double> v[i] + (1.0 - beta2) * <double> g[i] * <double> g[i]
            m[i] = <real> mi
            v[i] = <real> vi
            if weight_decay != 0.0:
                p[i] = <real> (<double> p[i] * (1.0 - lr * weight_decay))
            p[i] = <real> (<double> p[i] - lr1 * mi / (sqrt(vi / bc2) + eps))
