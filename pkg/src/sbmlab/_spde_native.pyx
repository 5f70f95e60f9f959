# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping loop for the density SPDE.

Mirrors ``sbmlab._spde_py.integrate`` operation for operation so that both
backends consume the bit generator in the same order and, for the sqrt and
log-normal schemes, produce bitwise-identical trajectories.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport pow, sqrt, NAN
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_poisson,
    random_standard_gamma,
    random_standard_normal,
)

cdef enum:
    SCHEME_BRANCHING = 0
    SCHEME_LOGNORMAL = 1
    SCHEME_MOMENT = 2
    SCHEME_EULER = 3


cdef bitgen_t* _bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid BitGenerator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


def integrate(double[::1] u, int scheme, double r, double gamma, double a,
              double theta, double sqdt, double h, object bit_generator,
              double[:, ::1] factor, double[:, ::1] zeta, double[:, ::1] eta,
              Py_ssize_t[::1] snap_steps, double[:, ::1] snaps,
              Py_ssize_t[::1] probes, double[:, ::1] probe_vals,
              double[::1] mass,
              double[:, ::1] forcing, double[:, ::1] white_std):
    """Advance ``u`` in place for ``mass.shape[0] - 1`` steps.

    Returns ``(boundary_loss, extinction_step)``; the latter is -1 when the
    state never reaches zero mass.
    """
    cdef Py_ssize_t J = u.shape[0]
    cdef Py_ssize_t steps = mass.shape[0] - 1
    cdef Py_ssize_t P = probes.shape[0]
    cdef Py_ssize_t S = snap_steps.shape[0]
    cdef bint use_factor = factor.shape[0] > 0
    cdef bint keep_forcing = forcing.shape[0] > 0
    cdef bint keep_white = white_std.shape[0] > 0
    cdef double c_bl = r * h
    cdef double boundary_loss = 0.0
    cdef Py_ssize_t extinct = -1
    cdef Py_ssize_t m, j, p, k, si = 0
    cdef double left, right, s, total, y, vj, p0, z
    cdef double[::1] v = u.copy()
    cdef double[::1] tmp = u.copy()
    cdef double[::1] unif = u.copy()
    cdef long long nj
    cdef bitgen_t* rng = NULL

    for arr in (factor, zeta, eta):
        if arr.shape[0] and (arr.shape[0] < steps or arr.shape[1] != J):
            raise ValueError("noise arrays need one row of length J per step")
    if scheme == SCHEME_EULER and (zeta.shape[0] == 0 or eta.shape[0] == 0):
        raise ValueError("euler scheme needs white and colored noise rows")

    if scheme == SCHEME_BRANCHING or scheme == SCHEME_MOMENT:
        rng = _bitgen(bit_generator)

    total = 0.0
    for j in range(J):
        total += u[j]
    mass[0] = h * total
    for p in range(P):
        probe_vals[0, p] = u[probes[p]]
    if si < S and snap_steps[si] == 0:
        snaps[si, :] = u
        si += 1

    lock = bit_generator.lock if rng != NULL else None
    if lock is not None:
        lock.acquire()
    try:
        for m in range(steps):
            boundary_loss += c_bl * (u[0] + u[J - 1])
            for j in range(J):
                left = u[j - 1] if j > 0 else 0.0
                right = u[j + 1] if j < J - 1 else 0.0
                v[j] = u[j] + r * ((left - 2.0 * u[j]) + right)

            if scheme == SCHEME_BRANCHING:
                for j in range(J):
                    unif[j] = <double> random_poisson(rng, v[j] / theta)
                for j in range(J):
                    tmp[j] = theta * random_standard_gamma(rng, unif[j])
                if keep_white:
                    for j in range(J):
                        if v[j] > 0.0:
                            white_std[m, j] = (tmp[j] - v[j]) / (a * sqrt(v[j]))
                        else:
                            white_std[m, j] = NAN
            elif scheme == SCHEME_LOGNORMAL:
                for j in range(J):
                    tmp[j] = v[j]
            elif scheme == SCHEME_MOMENT:
                for j in range(J):
                    tmp[j] = random_standard_normal(rng)
                for j in range(J):
                    unif[j] = rng.next_double(rng.state)
                for j in range(J):
                    vj = v[j]
                    z = tmp[j]
                    if vj > 0.0:
                        s = pow(vj, gamma) * a
                        if vj >= 6.0 * s:
                            y = vj + s * z
                            y = y if y > 0.0 else 0.0
                        else:
                            p0 = (s * s) / (vj * vj + s * s)
                            y = 0.0 if unif[j] < p0 else vj + (s * s) / vj
                        if keep_white:
                            white_std[m, j] = (y - vj) / s
                    else:
                        y = 0.0
                        if keep_white:
                            white_std[m, j] = NAN
                    tmp[j] = y
            else:
                for j in range(J):
                    if gamma == 0.5:
                        s = sqrt(u[j])
                    else:
                        s = pow(u[j], gamma)
                    y = v[j] + a * s * zeta[m, j] + sqdt * u[j] * eta[m, j]
                    tmp[j] = y if y > 0.0 else 0.0
                    if keep_white:
                        white_std[m, j] = zeta[m, j]

            if use_factor:
                for j in range(J):
                    tmp[j] = tmp[j] * factor[m, j]

            total = 0.0
            for j in range(J):
                if keep_forcing:
                    forcing[m, j] = tmp[j] - v[j]
                u[j] = tmp[j]
                total += u[j]
            mass[m + 1] = h * total
            for p in range(P):
                probe_vals[m + 1, p] = u[probes[p]]
            while si < S and snap_steps[si] == m + 1:
                snaps[si, :] = u
                si += 1

            if total == 0.0:
                extinct = m + 1
                for k in range(m + 2, steps + 1):
                    mass[k] = 0.0
                    for p in range(P):
                        probe_vals[k, p] = 0.0
                while si < S:
                    snaps[si, :] = 0.0
                    si += 1
                if keep_forcing:
                    forcing[m + 1:, :] = 0.0
                if keep_white:
                    white_std[m + 1:, :] = NAN
                break
    finally:
        if lock is not None:
            lock.release()
    return boundary_loss, extinct
