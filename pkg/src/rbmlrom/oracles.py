"""Independent reference computations used by the tests and ``selftest``.

They avoid every shortcut of the production code: residuals are formed in the
full space, greedy selection re-solves the interpolation from scratch, and
statistics are computed in two passes.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as la

from . import kernels
from .fom import FomModel
from .rb import ReducedModel


def dense_residual_dual_norms(fom: FomModel, rm: ReducedModel, mu, coeffs) -> np.ndarray:
    """``||r^k||_{V_h'}`` by lifting to nodal values and a dense ``G`` solve."""
    mu = np.asarray(mu, dtype=float)
    B = fom.n_blocks
    U = np.asarray(coeffs, dtype=float) @ rm.basis.V.T
    A = sum(mu[b] * fom.A_blocks[b].toarray() for b in range(B))
    M = fom.M.toarray()
    f = mu[B:B + fom.n_sources] @ fom.l_vecs
    G = la.cho_factor(fom.G.toarray())
    out = []
    for k in range(1, U.shape[0]):
        r = f - M @ (U[k] - U[k - 1]) / fom.dt - A @ U[k]
        out.append(np.sqrt(max(r @ la.cho_solve(G, r), 0.0)))
    return np.array(out)


def brute_force_greedy(X, Y, kernel: kernels.KernelConfig, n_select: int) -> list:
    """f-greedy selection order, re-interpolating from scratch at every step."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    chosen = []
    for _ in range(min(n_select, X.shape[0])):
        if chosen:
            K = kernels.gram(kernel, X[chosen], X[chosen])
            coef = la.solve(K, Y[chosen], assume_a="pos")
            res = Y - kernels.gram(kernel, X, X[chosen]) @ coef
        else:
            res = Y
        score = np.einsum("ij,ij->i", res, res)
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
    return chosen


def two_pass_mean_var(values) -> tuple:
    """Mean and sample variance (``None`` for fewer than two values)."""
    v = np.asarray(values, dtype=float)
    mean = float(np.sum(v) / v.size)
    if v.size < 2:
        return mean, None
    d = v - mean
    return mean, float(np.sum(d * d) / (v.size - 1))
