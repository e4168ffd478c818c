"""Compiled inner loops for the sparse-group LASSO solvers.

Groups are passed in CSR layout: the columns of group ``g`` are
``gidx[gptr[g]:gptr[g + 1]]``. All routines work on the standardized
problem ``|r|^2 / n + 2 lam * Omega_gamma(u)`` with residual ``r``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def sg_prox_csr(v, t1, t2, gptr, gidx):
    out = np.empty_like(v)
    for j in range(v.shape[0]):
        out[j] = _soft(v[j], t1)
    for g in range(gptr.shape[0] - 1):
        nrm = 0.0
        for k in range(gptr[g], gptr[g + 1]):
            nrm += out[gidx[k]] ** 2
        nrm = np.sqrt(nrm)
        if nrm <= t2:
            for k in range(gptr[g], gptr[g + 1]):
                out[gidx[k]] = 0.0
        else:
            f = 1.0 - t2 / nrm
            for k in range(gptr[g], gptr[g + 1]):
                out[gidx[k]] *= f
    return out


@njit(cache=True)
def penalty_csr(u, gamma, gptr, gidx):
    l1 = 0.0
    l21 = 0.0
    for g in range(gptr.shape[0] - 1):
        s = 0.0
        for k in range(gptr[g], gptr[g + 1]):
            x = u[gidx[k]]
            l1 += abs(x)
            s += x * x
        l21 += np.sqrt(s)
    return gamma * l1 + (1.0 - gamma) * l21


@njit(cache=True)
def kkt_violation(c, u, lam, gamma, gptr, gidx):
    """Largest subgradient-stationarity violation given ``c = Z'r / n``."""
    worst = 0.0
    for g in range(gptr.shape[0] - 1):
        nrm = 0.0
        for k in range(gptr[g], gptr[g + 1]):
            nrm += u[gidx[k]] ** 2
        nrm = np.sqrt(nrm)
        if nrm == 0.0:
            s = 0.0
            for k in range(gptr[g], gptr[g + 1]):
                s += _soft(c[gidx[k]], lam * gamma) ** 2
            v = np.sqrt(s) - (1.0 - gamma) * lam
            if v > worst:
                worst = v
        else:
            for k in range(gptr[g], gptr[g + 1]):
                j = gidx[k]
                if u[j] != 0.0:
                    sgn = 1.0 if u[j] > 0 else -1.0
                    v = abs(c[j] - lam * gamma * sgn - lam * (1.0 - gamma) * u[j] / nrm)
                else:
                    v = abs(c[j]) - lam * gamma
                if v > worst:
                    worst = v
    return worst


@njit(cache=True)
def _update_group(Z, r, u, g, gptr, gidx, colsq, glip, lam, gamma, tol):
    n = Z.shape[0]
    start = gptr[g]
    stop = gptr[g + 1]
    if stop - start == 1:
        j = gidx[start]
        d = colsq[j]
        if d == 0.0:
            return 0.0
        rho = 0.0
        for i in range(n):
            rho += Z[i, j] * r[i]
        rho = rho / n + d * u[j]
        new = _soft(rho, lam) / d
        delta = new - u[j]
        if delta != 0.0:
            for i in range(n):
                r[i] -= Z[i, j] * delta
            u[j] = new
        return abs(delta) * np.sqrt(d)

    L = glip[g]
    if L == 0.0:
        return 0.0
    m = stop - start
    # zero test on the partial residual r + Z_g u_g
    rp = np.zeros(m)
    for k in range(m):
        j = gidx[start + k]
        s = 0.0
        for i in range(n):
            s += Z[i, j] * r[i]
        rp[k] = s / n
    for k in range(m):
        j = gidx[start + k]
        if u[j] != 0.0:
            for k2 in range(m):
                j2 = gidx[start + k2]
                s = 0.0
                for i in range(n):
                    s += Z[i, j2] * Z[i, j]
                rp[k2] += s / n * u[j]
    s = 0.0
    for k in range(m):
        s += _soft(rp[k], lam * gamma) ** 2
    total = 0.0
    if np.sqrt(s) <= (1.0 - gamma) * lam:
        for k in range(m):
            j = gidx[start + k]
            delta = -u[j]
            if delta != 0.0:
                for i in range(n):
                    r[i] -= Z[i, j] * delta
                u[j] = 0.0
                total += delta * delta
        return np.sqrt(total * L)

    v = np.empty(m)
    for it in range(10000):
        for k in range(m):
            j = gidx[start + k]
            s = 0.0
            for i in range(n):
                s += Z[i, j] * r[i]
            v[k] = _soft(u[j] + s / (n * L), lam * gamma / L)
        nrm = 0.0
        for k in range(m):
            nrm += v[k] ** 2
        nrm = np.sqrt(nrm)
        t2 = lam * (1.0 - gamma) / L
        f = 0.0 if nrm <= t2 else 1.0 - t2 / nrm
        step = 0.0
        for k in range(m):
            j = gidx[start + k]
            delta = f * v[k] - u[j]
            if delta != 0.0:
                for i in range(n):
                    r[i] -= Z[i, j] * delta
                u[j] += delta
                step += delta * delta
        total += step
        if np.sqrt(step * L) < tol:
            break
    return np.sqrt(total * L)


@njit(cache=True)
def bcd_solve(Z, r, u, gptr, gidx, colsq, glip, lam, gamma, tol, max_sweeps):
    """Cyclic block coordinate descent with an active-set inner loop.

    Updates ``u`` and ``r`` in place and returns the number of sweeps.
    """
    ng = gptr.shape[0] - 1
    sweeps = 0
    while sweeps < max_sweeps:
        dmax = 0.0
        for g in range(ng):
            d = _update_group(Z, r, u, g, gptr, gidx, colsq, glip, lam, gamma, tol)
            if d > dmax:
                dmax = d
        sweeps += 1
        if dmax < tol:
            break
        while sweeps < max_sweeps:
            dmax = 0.0
            for g in range(ng):
                nz = False
                for k in range(gptr[g], gptr[g + 1]):
                    if u[gidx[k]] != 0.0:
                        nz = True
                        break
                if nz:
                    d = _update_group(Z, r, u, g, gptr, gidx, colsq, glip, lam, gamma, tol)
                    if d > dmax:
                        dmax = d
            sweeps += 1
            if dmax < tol:
                break
    return sweeps
