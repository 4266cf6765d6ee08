# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Mirrors _ops_py function for function; random draws come from the numpy
Generator's underlying BitGenerator, so both backends consume the stream
in the same order and produce the same draws.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport fabs, sin
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

cnp.import_array()


cdef bitgen_t* _bitgen(object rng) except NULL:
    capsule = rng.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


def signed_update(double[::1] x, double alpha, cnp.int64_t[::1] idx,
                  double[::1] w, double[::1] y):
    """x[i] += alpha * w[i] * sign(-y[i]) for each i in idx."""
    cdef Py_ssize_t j, i
    cdef double yi, s
    for j in range(idx.shape[0]):
        i = idx[j]
        yi = y[i]
        if yi > 0:
            s = -1.0
        elif yi < 0:
            s = 1.0
        else:
            s = 0.0
        x[i] = x[i] + alpha * w[i] * s


def y_update(double[::1] y, double beta, cnp.int64_t[::1] idx, double[::1] vals):
    """y[i] += beta * (vals[j] - y[i]) for each pair (j, i=idx[j])."""
    cdef Py_ssize_t j, i
    for j in range(idx.shape[0]):
        i = idx[j]
        y[i] = y[i] + beta * (vals[j] - y[i])


def batch_values_native(int kind, double[::1] q, double[::1] c, double rho,
                        double[::1] x, cnp.int64_t[::1] idx, int order,
                        double sigma, double zeta_std, bint coupled, double lam,
                        object rng, double[::1] out):
    """Directional feedback values for the separable native objectives.

    See _ops_py.batch_values_native for the value and draw-order contract.
    """
    cdef bitgen_t* bg = NULL
    cdef Py_ssize_t k = idx.shape[0]
    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t j, t, i
    cdef double g, xi, up, dn, su, sd, fd, z1, z2, noise_i
    if (order == 0 and sigma > 0) or (order != 0 and (not coupled) and zeta_std > 0):
        bg = _bitgen(rng)
    for j in range(k):
        i = idx[j]
        xi = x[i]
        if order == 0:
            if kind == 1:
                g = q[i] * xi + c[i]
            else:
                g = xi + rho * sin(2.0 * xi)
            if sigma > 0:
                noise_i = 0.0
                for t in range(d):
                    z1 = random_standard_normal(bg)
                    if t == i:
                        noise_i = z1
                g = g + sigma * noise_i
            out[j] = g
        else:
            up = xi + lam
            dn = xi - lam
            if kind == 1:
                fd = 0.5 * q[i] * (up * up - dn * dn) + c[i] * (2.0 * lam)
            else:
                su = sin(up)
                sd = sin(dn)
                fd = 0.5 * (up * up - dn * dn) + rho * (su * su - sd * sd)
            g = fd / (2.0 * lam)
            if (not coupled) and zeta_std > 0:
                z1 = random_standard_normal(bg)
                z2 = random_standard_normal(bg)
                g = g + zeta_std * (z1 - z2) / (2.0 * lam)
            out[j] = g


def native_grad_l1(int kind, double[::1] q, double[::1] c, double rho, double[::1] x):
    """l1 norm of the exact gradient of a native objective."""
    cdef Py_ssize_t i
    cdef double acc = 0.0
    cdef double g
    for i in range(x.shape[0]):
        if kind == 1:
            g = q[i] * x[i] + c[i]
        else:
            g = x[i] + rho * sin(2.0 * x[i])
        acc += fabs(g)
    return acc
