"""Pure numpy time-stepping loop for the density SPDE.

Reference implementation of the compiled kernel in ``_spde_native.pyx``. The
operation order (and the order in which the bit generator is consumed) is
kept identical so the two backends can be compared bit for bit.
"""
from __future__ import annotations

import numpy as np

SCHEME_BRANCHING = 0
SCHEME_LOGNORMAL = 1
SCHEME_MOMENT = 2
SCHEME_EULER = 3


def _seqsum(x: np.ndarray) -> float:
    # sequential summation, matching the C loop (np.sum is pairwise)
    return float(np.cumsum(x)[-1])


def integrate(u, scheme, r, gamma, a, theta, sqdt, h, bit_generator,
              factor, zeta, eta, snap_steps, snaps, probes, probe_vals,
              mass, forcing, white_std):
    J = u.shape[0]
    steps = mass.shape[0] - 1
    use_factor = factor.shape[0] > 0
    keep_forcing = forcing.shape[0] > 0
    keep_white = white_std.shape[0] > 0
    for arr in (factor, zeta, eta):
        if arr.shape[0] and (arr.shape[0] < steps or arr.shape[1] != J):
            raise ValueError("noise arrays need one row of length J per step")
    if scheme == SCHEME_EULER and (zeta.shape[0] == 0 or eta.shape[0] == 0):
        raise ValueError("euler scheme needs white and colored noise rows")
    rng = None
    if scheme in (SCHEME_BRANCHING, SCHEME_MOMENT):
        rng = np.random.Generator(bit_generator)
    c_bl = r * h
    boundary_loss = 0.0
    extinct = -1
    snap_steps = list(snap_steps)
    si = 0

    mass[0] = h * _seqsum(u)
    probe_vals[0, :] = u[probes]
    if si < len(snap_steps) and snap_steps[si] == 0:
        snaps[si, :] = u
        si += 1

    padded = np.zeros(J + 2)
    for m in range(steps):
        boundary_loss += c_bl * (float(u[0]) + float(u[J - 1]))
        padded[1:-1] = u
        v = u + r * ((padded[:-2] - 2.0 * padded[1:-1]) + padded[2:])

        if scheme == SCHEME_BRANCHING:
            counts = rng.poisson(v / theta)
            new = theta * rng.standard_gamma(counts)
            if keep_white:
                pos = v > 0.0
                row = np.full(J, np.nan)
                row[pos] = (new[pos] - v[pos]) / (a * np.sqrt(v[pos]))
                white_std[m, :] = row
        elif scheme == SCHEME_LOGNORMAL:
            new = v.copy()
        elif scheme == SCHEME_MOMENT:
            z = rng.standard_normal(J)
            unif = rng.random(J)
            new = np.zeros(J)
            pos = v > 0.0
            vp = v[pos]
            s = np.power(vp, gamma) * a
            gauss = vp >= 6.0 * s
            y = np.where(gauss, np.maximum(vp + s * z[pos], 0.0), 0.0)
            p0 = (s * s) / (vp * vp + s * s)
            jump = vp + (s * s) / vp
            y = np.where(gauss, y, np.where(unif[pos] < p0, 0.0, jump))
            new[pos] = y
            if keep_white:
                row = np.full(J, np.nan)
                row[pos] = (y - vp) / s
                white_std[m, :] = row
        else:
            s = np.sqrt(u) if gamma == 0.5 else np.power(u, gamma)
            y = v + a * s * zeta[m] + sqdt * u * eta[m]
            new = np.maximum(y, 0.0)
            if keep_white:
                white_std[m, :] = zeta[m]

        if use_factor:
            new = new * factor[m]
        if keep_forcing:
            forcing[m, :] = new - v
        u[:] = new
        total = _seqsum(u)
        mass[m + 1] = h * total
        probe_vals[m + 1, :] = u[probes]
        while si < len(snap_steps) and snap_steps[si] == m + 1:
            snaps[si, :] = u
            si += 1

        if total == 0.0:
            extinct = m + 1
            mass[m + 2:] = 0.0
            probe_vals[m + 2:, :] = 0.0
            snaps[si:, :] = 0.0
            if keep_forcing:
                forcing[m + 1:, :] = 0.0
            if keep_white:
                white_std[m + 1:, :] = np.nan
            break
    return boundary_loss, extinct
