# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror :mod:`bearing_vit._pykernels`."""

from libc.math cimport exp, sin, ceil, M_PI


def fft_rows(double complex[:, ::1] x, const double complex[::1] twiddle, const Py_ssize_t[::1] bitrev):
    """In-place radix-2 DIT FFT of every row of ``x``."""
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t r, i, j, start, half, m, step
    cdef double complex u, v, w, tmp
    for r in range(rows):
        for i in range(n):
            j = bitrev[i]
            if i < j:
                tmp = x[r, i]
                x[r, i] = x[r, j]
                x[r, j] = tmp
        m = 2
        while m <= n:
            half = m >> 1
            step = n // m
            start = 0
            while start < n:
                for j in range(half):
                    w = twiddle[j * step]
                    u = x[r, start + j]
                    v = x[r, start + j + half] * w
                    x[r, start + j] = u + v
                    x[r, start + j + half] = u - v
                start += m
            m <<= 1


def impulse_train(double[::1] out, const double[::1] times, const double[::1] amps,
                  double fs, double decay, double freq, Py_ssize_t window):
    """Accumulate damped-sine ring-downs starting at ``times`` into ``out``."""
    cdef Py_ssize_t n_out = out.shape[0]
    cdef Py_ssize_t k, n, n0, n1
    cdef double tk, dt, a
    cdef double w = 2.0 * M_PI * freq
    for k in range(times.shape[0]):
        tk = times[k]
        a = amps[k]
        n0 = <Py_ssize_t>ceil(tk * fs)
        n1 = n0 + window
        if n1 > n_out:
            n1 = n_out
        for n in range(n0, n1):
            dt = n / fs - tk
            out[n] += a * exp(-decay * dt) * sin(w * dt)
