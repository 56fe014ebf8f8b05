"""Banded SPD linear solves for block-tridiagonal Gauss-Newton systems.

Features couple at most three consecutive configurations, so J^T J has
scalar bandwidth at most 3d - 1.  Factor and solve cost O(N d^3).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

Array = np.ndarray


class FactorizationError(RuntimeError):
    """The banded Cholesky factorization hit a non-positive pivot."""


def matrix_bandwidth(H) -> int:
    if sp.issparse(H):
        coo = H.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.abs(coo.row - coo.col).max())
    H = np.asarray(H)
    rows, cols = np.nonzero(H)
    return int(np.abs(rows - cols).max()) if rows.size else 0


def to_banded_upper(H, bandwidth: int) -> Array:
    """LAPACK upper banded storage: ab[u + i - j, j] = H[i, j]."""
    n = H.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    sparse = sp.issparse(H)
    for k in range(bandwidth + 1):
        diag = H.diagonal(k) if sparse else np.diagonal(H, k)
        ab[bandwidth - k, k:] = diag
    return ab


def banded_cholesky_solve(H, rhs: Array, bandwidth: int | None = None) -> Array:
    """Solve H x = rhs for SPD banded H (dense array or scipy sparse).

    Raises FactorizationError when H is not numerically positive definite.
    """
    rhs = np.asarray(rhs, dtype=float)
    if H.shape[0] != H.shape[1] or rhs.shape[0] != H.shape[0]:
        raise ValueError(f"shape mismatch: H {H.shape}, rhs {rhs.shape}")
    u = matrix_bandwidth(H) if bandwidth is None else int(bandwidth)
    ab = to_banded_upper(H, u)
    try:
        cb = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(str(exc)) from exc
    return scipy.linalg.cho_solve_banded((cb, False), rhs, check_finite=False)
