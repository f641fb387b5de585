"""Compiled semi-Lagrangian step kernels.

Both kernels minimise, at every node, the one-step cost

    A * I[f](x - s dt) + W * (1/2 |s - om(x)|^2 + uc(x))

over the box |s_k| <= vmax, where I is the periodic (multi)linear
interpolant of ``f``.  On each interpolation cell the cost is a convex (1-d)
or bilinear-plus-quadratic (2-d) function of s, so the cellwise minimum has
a closed form.  Cells that cannot beat the value at s = clip(om) are skipped
using a Lipschitz lower bound; the skip never removes the true minimiser.

All coordinates are in grid units: ``h = dt / dx``.
"""

from __future__ import annotations

import math

import numba as nb

# prefer OpenMP; an outdated TBB otherwise triggers a warning on first launch
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_opts = dict(cache=True, nogil=True)
_par = dict(cache=True, nogil=True, parallel=True)


@nb.njit(**_opts)
def _clip(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@nb.njit(**_opts)
def _interp1(f, y):
    n = f.shape[0]
    j = math.floor(y)
    t = y - j
    j0 = int(j) % n
    j1 = (j0 + 1) % n
    return f[j0] + t * (f[j1] - f[j0])


@nb.njit(**_opts)
def _interp2(f, y1, y2):
    n = f.shape[0]
    a = math.floor(y1)
    b = math.floor(y2)
    p = y1 - a
    q = y2 - b
    j0 = int(a) % n
    l0 = int(b) % n
    j1 = (j0 + 1) % n
    l1 = (l0 + 1) % n
    f00 = f[j0, l0]
    f10 = f[j1, l0]
    f01 = f[j0, l1]
    f11 = f[j1, l1]
    return f00 + p * (f10 - f00) + q * (f01 - f00) + p * q * (f00 - f10 - f01 + f11)


@nb.njit(**_opts)
def prune_radius(A, W, lh, R):
    """Largest |s - om| that can still undercut the reference value."""
    if R < 0.0:
        R = 0.0
    return (A * lh + math.sqrt((A * lh) ** 2 + 2.0 * W * R)) / W


@nb.njit(**_opts)
def step1d(f, A, W, om, uc, h, vmax, out, vel):
    n = f.shape[0]
    lip = 0.0
    for i in range(n):
        d = abs(f[(i + 1) % n] - f[i])
        if d > lip:
            lip = d
    lh = lip * h
    for i in range(n):
        w = om[i]
        s0 = _clip(w, -vmax, vmax)
        best = A * _interp1(f, i - s0 * h) + W * (0.5 * (s0 - w) ** 2 + uc[i])
        bs = s0
        R = best - A * f[i] - W * uc[i] + A * lh * abs(w)
        R += 1e-12 * (1.0 + abs(best))
        sig = prune_radius(A, W, lh, R)
        s_lo = max(-vmax, w - sig)
        s_hi = min(vmax, w + sig)
        j_lo = int(math.floor(i - s_hi * h))
        j_hi = int(math.floor(i - s_lo * h))
        for j in range(j_lo, j_hi + 1):
            lo = max((i - j - 1) / h, -vmax)
            hi = min((i - j) / h, vmax)
            if lo > hi:
                continue
            fj = f[j % n]
            df = f[(j + 1) % n] - fj
            s = _clip(w + A * df * h / W, lo, hi)
            th = i - j - s * h
            val = A * (fj + th * df) + W * (0.5 * (s - w) ** 2 + uc[i])
            if val < best:
                best = val
                bs = s
        out[i] = best
        vel[i] = bs


@nb.njit(**_opts)
def _cost2(f00, f10, f01, f11, A, W, p, q, i, k, j, l, h, w1, w2, u):
    s1 = (i - j - p) / h
    s2 = (k - l - q) / h
    e = f00 - f10 - f01 + f11
    phi = f00 + p * (f10 - f00) + q * (f01 - f00) + p * q * e
    return A * phi + W * (0.5 * ((s1 - w1) ** 2 + (s2 - w2) ** 2) + u), s1, s2


@nb.njit(**_par)
def step2d(f, A, W, om1, om2, uc, h, vmax, out, vel1, vel2):
    n = f.shape[0]
    g1 = 0.0
    g2 = 0.0
    for i in range(n):
        for k in range(n):
            d1 = abs(f[(i + 1) % n, k] - f[i, k])
            d2 = abs(f[i, (k + 1) % n] - f[i, k])
            if d1 > g1:
                g1 = d1
            if d2 > g2:
                g2 = d2
    lh = math.sqrt(g1 * g1 + g2 * g2) * h
    hw = W / (h * h)
    for i in nb.prange(n):
        for k in range(n):
            w1 = om1[i, k]
            w2 = om2[i, k]
            u = uc[i, k]
            s01 = _clip(w1, -vmax, vmax)
            s02 = _clip(w2, -vmax, vmax)
            best = A * _interp2(f, i - s01 * h, k - s02 * h) + W * (
                0.5 * ((s01 - w1) ** 2 + (s02 - w2) ** 2) + u)
            b1 = s01
            b2 = s02
            R = best - A * f[i, k] - W * u + A * lh * math.sqrt(w1 * w1 + w2 * w2)
            R += 1e-12 * (1.0 + abs(best))
            sig = prune_radius(A, W, lh, R)
            j_lo = int(math.floor(i - min(vmax, w1 + sig) * h))
            j_hi = int(math.floor(i - max(-vmax, w1 - sig) * h))
            l_lo = int(math.floor(k - min(vmax, w2 + sig) * h))
            l_hi = int(math.floor(k - max(-vmax, w2 - sig) * h))
            for j in range(j_lo, j_hi + 1):
                p0 = max(0.0, i - j - vmax * h)
                p1 = min(1.0, i - j + vmax * h)
                if p0 > p1:
                    continue
                c1 = (i - j) / h - w1
                j0 = j % n
                j1 = (j + 1) % n
                for l in range(l_lo, l_hi + 1):
                    q0 = max(0.0, k - l - vmax * h)
                    q1 = min(1.0, k - l + vmax * h)
                    if q0 > q1:
                        continue
                    c2 = (k - l) / h - w2
                    l0 = l % n
                    l1 = (l + 1) % n
                    f00 = f[j0, l0]
                    f10 = f[j1, l0]
                    f01 = f[j0, l1]
                    f11 = f[j1, l1]
                    e = f00 - f10 - f01 + f11
                    r1 = W * c1 / h - A * (f10 - f00)
                    r2 = W * c2 / h - A * (f01 - f00)
                    ae = A * e
                    # the four edges: cost is a convex parabola along each
                    for side in range(4):
                        if side < 2:
                            q = q0 if side == 0 else q1
                            p = _clip((r1 - ae * q) / hw, p0, p1)
                        else:
                            p = p0 if side == 2 else p1
                            q = _clip((r2 - ae * p) / hw, q0, q1)
                        val, s1, s2 = _cost2(f00, f10, f01, f11, A, W, p, q,
                                             i, k, j, l, h, w1, w2, u)
                        if val < best:
                            best = val
                            b1 = s1
                            b2 = s2
                    det = hw * hw - ae * ae
                    if det > 0.0:
                        p = (hw * r1 - ae * r2) / det
                        q = (hw * r2 - ae * r1) / det
                        if p0 <= p <= p1 and q0 <= q <= q1:
                            val, s1, s2 = _cost2(f00, f10, f01, f11, A, W, p, q,
                                                 i, k, j, l, h, w1, w2, u)
                            if val < best:
                                best = val
                                b1 = s1
                                b2 = s2
            out[i, k] = best
            vel1[i, k] = b1
            vel2[i, k] = b2


@nb.njit(**_par)
def step1d_rows(F, A, W, om, uc, h, vmax, OUT, VEL):
    """``step1d`` applied to each row of a stack of fields (rows run in parallel)."""
    for r in nb.prange(F.shape[0]):
        step1d(F[r], A, W, om, uc, h, vmax, OUT[r], VEL[r])


@nb.njit(**_par)
def step2d_rows(F, A, W, om1, om2, uc, h, vmax, OUT, VEL1, VEL2):
    for r in nb.prange(F.shape[0]):
        step2d(F[r], A, W, om1, om2, uc, h, vmax, OUT[r], VEL1[r], VEL2[r])
