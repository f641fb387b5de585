"""Dense two-phase revised simplex with Bland's rule.

Solves ``min c.x  s.t.  A x = b,  x >= 0``.  The basis inverse is kept
explicitly and updated by elementary row operations, with a fresh inverse
every ``refactor`` pivots.  Rows that turn out to be redundant keep their
artificial variable in the basis at level zero; such artificials are never
allowed to become positive in phase two.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    basis: np.ndarray
    iterations: int
    status: str = "optimal"


class _Tableau:
    def __init__(self, A, b, basis, refactor):
        self.A = A
        self.b = b
        self.basis = np.array(basis, dtype=np.int64)
        self.refactor = refactor
        self.since = 0
        self.reinvert()

    def reinvert(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xb = self.Binv @ self.b
        self.since = 0

    def pivot(self, r, q, d):
        """Entering column ``q`` with direction ``d = Binv A_q`` replaces row ``r``."""
        piv = d[r]
        theta = self.xb[r] / piv
        self.xb -= theta * d
        self.xb[r] = theta
        row = self.Binv[r] / piv
        self.Binv -= np.outer(d, row)
        self.Binv[r] = row
        self.basis[r] = q
        self.since += 1
        if self.since >= self.refactor:
            self.reinvert()


def _run(tab: _Tableau, cost: np.ndarray, allowed: np.ndarray, pinned: np.ndarray,
         tol: float, max_iter: int) -> int:
    """Bland-rule pivoting until no allowed column prices out negative."""
    it = 0
    while True:
        if it >= max_iter:
            raise LPError(f"iteration limit {max_iter} reached")
        y = cost[tab.basis] @ tab.Binv
        red = cost - y @ tab.A
        red[~allowed] = 0.0
        red[tab.basis] = 0.0
        cand = np.flatnonzero(red < -tol)
        if cand.size == 0:
            return it
        q = int(cand[0])
        d = tab.Binv @ tab.A[:, q]
        ratio = np.full(len(d), np.inf)
        pos = d > tol
        ratio[pos] = np.maximum(tab.xb[pos], 0.0) / d[pos]
        # zero-level artificials block any movement in either direction
        pin = pinned[tab.basis] & (np.abs(d) > tol)
        ratio[pin] = 0.0
        if not np.isfinite(ratio).any():
            raise Unbounded(f"column {q} has no blocking row")
        best = ratio.min()
        rows = np.flatnonzero(ratio <= best + tol * (1.0 + best))
        r = int(rows[np.argmin(tab.basis[rows])])
        tab.pivot(r, q, d)
        it += 1


def solve(c, A, b, tol: float = 1e-9, max_iter: int = 100000, refactor: int = 64) -> LPResult:
    """Minimise ``c.x`` subject to ``A x = b`` and ``x >= 0``."""
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("inconsistent LP dimensions")
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    Aa = np.hstack([A, np.eye(m)])
    art = np.zeros(n + m, dtype=bool)
    art[n:] = True
    tab = _Tableau(Aa, b, np.arange(n, n + m), refactor)

    cost1 = art.astype(float)
    allowed = np.ones(n + m, dtype=bool)
    it1 = _run(tab, cost1, allowed, np.zeros(n + m, dtype=bool), tol, max_iter)
    infeas = float(np.sum(tab.xb[art[tab.basis]]))
    if infeas > 1e-7 * (1.0 + np.abs(b).max()):
        raise Infeasible(f"phase one ended with infeasibility {infeas:.3e}")

    # drive zero-level artificials out of the basis where a structural column allows it
    for r in range(m):
        if not art[tab.basis[r]]:
            continue
        row = tab.Binv[r] @ A
        row[tab.basis[tab.basis < n]] = 0.0
        j = np.flatnonzero(np.abs(row) > 1e-7)
        if j.size:
            q = int(j[0])
            tab.pivot(r, q, tab.Binv @ Aa[:, q])
    tab.reinvert()

    cost2 = np.concatenate([c, np.zeros(m)])
    allowed = ~art
    it2 = _run(tab, cost2, allowed, art, tol, max_iter)
    tab.reinvert()
    x = np.zeros(n + m)
    x[tab.basis] = np.maximum(tab.xb, 0.0)
    value = float(c @ x[:n])
    log.debug("simplex: %d + %d pivots, value %.10g", it1, it2, value)
    return LPResult(x[:n], value, tab.basis.copy(), it1 + it2)
