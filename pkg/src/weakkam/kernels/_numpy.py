"""Pure-numpy twins of the compiled kernels.

The per-node loops become loops over cell offsets shared by all nodes; the
offset range is the union of the per-node pruned ranges, so the minimum is
taken over a superset of the compiled kernel's candidates and the results
agree to rounding.
"""

from __future__ import annotations

import numpy as np


def _prune_radius(A, W, lh, R):
    R = np.maximum(R, 0.0)
    return (A * lh + np.sqrt((A * lh) ** 2 + 2.0 * W * R)) / W


def _interp1(f, y):
    n = f.shape[0]
    j = np.floor(y)
    t = y - j
    j0 = j.astype(np.int64) % n
    j1 = (j0 + 1) % n
    return f[j0] + t * (f[j1] - f[j0])


def _interp2(f, y1, y2):
    n = f.shape[0]
    a = np.floor(y1)
    b = np.floor(y2)
    p = y1 - a
    q = y2 - b
    j0 = a.astype(np.int64) % n
    l0 = b.astype(np.int64) % n
    j1 = (j0 + 1) % n
    l1 = (l0 + 1) % n
    f00 = f[j0, l0]
    f10 = f[j1, l0]
    f01 = f[j0, l1]
    f11 = f[j1, l1]
    return f00 + p * (f10 - f00) + q * (f01 - f00) + p * q * (f00 - f10 - f01 + f11)


def step1d(f, A, W, om, uc, h, vmax, out, vel):
    n = f.shape[0]
    i = np.arange(n)
    lh = float(np.max(np.abs(np.roll(f, -1) - f))) * h
    s0 = np.clip(om, -vmax, vmax)
    best = A * _interp1(f, i - s0 * h) + W * (0.5 * (s0 - om) ** 2 + uc)
    bs = s0.copy()
    R = best - A * f - W * uc + A * lh * np.abs(om)
    R = R + 1e-12 * (1.0 + np.abs(best))
    sig = _prune_radius(A, W, lh, R)
    j_lo = np.floor(i - np.minimum(vmax, om + sig) * h).astype(np.int64)
    j_hi = np.floor(i - np.maximum(-vmax, om - sig) * h).astype(np.int64)
    for m in range(int((j_lo - i).min()), int((j_hi - i).max()) + 1):
        j = i + m
        lo = np.maximum((i - j - 1) / h, -vmax)
        hi = np.minimum((i - j) / h, vmax)
        ok = lo <= hi
        if not ok.any():
            continue
        fj = f[j % n]
        df = f[(j + 1) % n] - fj
        s = np.minimum(np.maximum(om + A * df * h / W, lo), hi)
        th = i - j - s * h
        val = A * (fj + th * df) + W * (0.5 * (s - om) ** 2 + uc)
        better = ok & (val < best)
        best = np.where(better, val, best)
        bs = np.where(better, s, bs)
    out[:] = best
    vel[:] = bs


def _cost2(f00, f10, f01, f11, A, W, p, q, i, k, j, l, h, w1, w2, u):
    s1 = (i - j - p) / h
    s2 = (k - l - q) / h
    e = f00 - f10 - f01 + f11
    phi = f00 + p * (f10 - f00) + q * (f01 - f00) + p * q * e
    return A * phi + W * (0.5 * ((s1 - w1) ** 2 + (s2 - w2) ** 2) + u), s1, s2


def step2d(f, A, W, om1, om2, uc, h, vmax, out, vel1, vel2):
    n = f.shape[0]
    i, k = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    g1 = float(np.max(np.abs(np.roll(f, -1, axis=0) - f)))
    g2 = float(np.max(np.abs(np.roll(f, -1, axis=1) - f)))
    lh = np.sqrt(g1 * g1 + g2 * g2) * h
    hw = W / (h * h)
    s01 = np.clip(om1, -vmax, vmax)
    s02 = np.clip(om2, -vmax, vmax)
    best = A * _interp2(f, i - s01 * h, k - s02 * h) + W * (
        0.5 * ((s01 - om1) ** 2 + (s02 - om2) ** 2) + uc)
    b1 = s01.copy()
    b2 = s02.copy()
    R = best - A * f - W * uc + A * lh * np.sqrt(om1 * om1 + om2 * om2)
    R = R + 1e-12 * (1.0 + np.abs(best))
    sig = _prune_radius(A, W, lh, R)
    j_lo = np.floor(i - np.minimum(vmax, om1 + sig) * h).astype(np.int64) - i
    j_hi = np.floor(i - np.maximum(-vmax, om1 - sig) * h).astype(np.int64) - i
    l_lo = np.floor(k - np.minimum(vmax, om2 + sig) * h).astype(np.int64) - k
    l_hi = np.floor(k - np.maximum(-vmax, om2 - sig) * h).astype(np.int64) - k
    for mj in range(int(j_lo.min()), int(j_hi.max()) + 1):
        j = i + mj
        p0 = np.maximum(0.0, i - j - vmax * h)
        p1 = np.minimum(1.0, i - j + vmax * h)
        c1 = (i - j) / h - om1
        j0 = j % n
        j1 = (j + 1) % n
        for ml in range(int(l_lo.min()), int(l_hi.max()) + 1):
            l = k + ml
            q0 = np.maximum(0.0, k - l - vmax * h)
            q1 = np.minimum(1.0, k - l + vmax * h)
            ok = (p0 <= p1) & (q0 <= q1)
            if not ok.any():
                continue
            c2 = (k - l) / h - om2
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
            cands = []
            for side in range(4):
                if side < 2:
                    q = q0 if side == 0 else q1
                    p = np.minimum(np.maximum((r1 - ae * q) / hw, p0), p1)
                else:
                    p = p0 if side == 2 else p1
                    q = np.minimum(np.maximum((r2 - ae * p) / hw, q0), q1)
                cands.append((p, q, ok))
            det = hw * hw - ae * ae
            with np.errstate(divide="ignore", invalid="ignore"):
                p = (hw * r1 - ae * r2) / det
                q = (hw * r2 - ae * r1) / det
            inside = ok & (det > 0.0) & (p0 <= p) & (p <= p1) & (q0 <= q) & (q <= q1)
            cands.append((np.where(inside, p, p0), np.where(inside, q, q0), inside))
            for p, q, m in cands:
                val, s1, s2 = _cost2(f00, f10, f01, f11, A, W, p, q,
                                     i, k, j, l, h, om1, om2, uc)
                better = m & (val < best)
                best = np.where(better, val, best)
                b1 = np.where(better, s1, b1)
                b2 = np.where(better, s2, b2)
    out[...] = best
    vel1[...] = b1
    vel2[...] = b2


def step1d_rows(F, A, W, om, uc, h, vmax, OUT, VEL):
    for r in range(F.shape[0]):
        step1d(F[r], A, W, om, uc, h, vmax, OUT[r], VEL[r])


def step2d_rows(F, A, W, om1, om2, uc, h, vmax, OUT, VEL1, VEL2):
    for r in range(F.shape[0]):
        step2d(F[r], A, W, om1, om2, uc, h, vmax, OUT[r], VEL1[r], VEL2[r])
