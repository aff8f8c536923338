"""Direct solves for systems bordered by one dense constraint row and column.

The pressure mean constraint adds a dense row and column, which ruins the
fill-reducing ordering of a sparse LU. The factorizations here only factor
the sparse core, made nonsingular by a diagonal shift on one pinned entry,
and then recover the exact bordered solution from two extra solves and a
2x2 system.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import SolverError


class BorderedFactor:
    """Solver for ``[[K0, c], [r^T, 0]]`` whose core ``K0`` has a one dimensional kernel.

    ``pin`` must be an index where the kernel vector of ``K0`` is nonzero
    (any pressure index for the saddle point systems of this package).
    """

    def __init__(self, K, pin: int):
        K = sp.csc_matrix(K)
        n = K.shape[0] - 1
        self.n = n
        self.pin = int(pin)
        K0 = K[:n, :n]
        self.c = K[:n, n].toarray().ravel()
        self.r = np.asarray(K[n, :n].todense()).ravel()
        self.corner = float(K[n, n])
        diag = np.abs(K0.diagonal())
        self.alpha = float(diag.max()) if diag.size and diag.max() > 0 else 1.0
        shift = sp.csc_matrix(([self.alpha], ([self.pin], [self.pin])), shape=(n, n))
        try:
            self.lu = splu((K0 + shift).tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        e = np.zeros(n)
        e[self.pin] = 1.0
        self.y1 = self.lu.solve(e)
        self.y2 = self.lu.solve(self.c)
        self.shape = K.shape
        self.nnz = self.lu.nnz

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        n, p, a = self.n, self.pin, self.alpha
        y0 = self.lu.solve(b[:n])
        # x = y0 + a*mu*y1 - lam*y2 with mu = x[p] and r.x + corner*lam = b[n]
        mat = np.array([[a * self.y1[p] - 1.0, -self.y2[p]],
                        [a * (self.r @ self.y1), self.corner - self.r @ self.y2]])
        rhs = np.array([-y0[p], b[n] - self.r @ y0])
        try:
            mu, lam = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError("bordered system is singular") from exc
        x = np.empty(n + 1)
        x[:n] = y0 + a * mu * self.y1 - lam * self.y2
        x[n] = lam
        return x
