"""Reduced basis tier.

The basis is orthonormal in the energy product ``G = sum_b A_b``. The residual
of arbitrary reduced coefficients is a linear combination of the fixed
vectors ``{l_q} u {M v_i} u {A_b v_i}``, so its dual norm only needs the Gram
matrix of their Riesz representors, which is precomputed offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .fom import FomModel, Trajectory


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    V: np.ndarray  # (N_h, N_RB)

    @property
    def size(self) -> int:
        return self.V.shape[1]

    @classmethod
    def empty(cls, n_dofs: int) -> "ReducedBasis":
        return cls(np.zeros((n_dofs, 0)))


@dataclass(frozen=True, eq=False)
class ReducedTrajectory:
    coeffs: np.ndarray  # (K + 1, N_RB)
    mu: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ReducedModel:
    basis: ReducedBasis
    M_r: np.ndarray
    A_r: np.ndarray  # (B, N_RB, N_RB)
    l_r: np.ndarray  # (Q, N_RB)
    s_r: np.ndarray
    s_dual_norm: float
    R_gram: np.ndarray  # (D, D), D = Q + N_RB * (1 + B)
    dt: float
    num_steps: int

    @property
    def size(self) -> int:
        return self.basis.size

    @property
    def n_blocks(self) -> int:
        return self.A_r.shape[0]

    @property
    def n_sources(self) -> int:
        return self.l_r.shape[0]

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "rbmlrom.reduced_model",
            "version": 1,
            "N_RB": self.size,
            "B": self.n_blocks,
            "Q": self.n_sources,
            "K": self.num_steps,
            "dt": self.dt,
            "V": self.basis.V.tolist(),
            "M_r": self.M_r.tolist(),
            "A_r": self.A_r.tolist(),
            "l_r": self.l_r.tolist(),
            "s_r": self.s_r.tolist(),
            "s_dual_norm": self.s_dual_norm,
            "R_gram": self.R_gram.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReducedModel":
        if d.get("format") != "rbmlrom.reduced_model" or d.get("version") != 1:
            raise ValueError("not a version-1 reduced model document")
        n, B, Q = d["N_RB"], d["B"], d["Q"]

        def arr(key, shape):
            a = np.array(d[key], dtype=float)
            return a.reshape(shape)

        V = np.array(d["V"], dtype=float).reshape(len(d["V"]), n)
        D = Q + n * (1 + B)
        return cls(
            basis=ReducedBasis(V),
            M_r=arr("M_r", (n, n)),
            A_r=arr("A_r", (B, n, n)),
            l_r=arr("l_r", (Q, n)),
            s_r=arr("s_r", (n,)),
            s_dual_norm=float(d["s_dual_norm"]),
            R_gram=arr("R_gram", (D, D)),
            dt=float(d["dt"]),
            num_steps=int(d["K"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ReducedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _g_orthonormalize(V: np.ndarray, W: np.ndarray, G, drop_tol: float = 1e-10):
    """Gram-Schmidt (twice) of the columns of W against V and each other in G."""
    out = []
    basis = V
    for w in W.T:
        w0 = np.sqrt(max(w @ (G @ w), 0.0))
        if w0 == 0.0:
            continue
        for _ in range(2):
            if basis.shape[1]:
                w = w - basis @ (basis.T @ (G @ w))
        nrm = np.sqrt(max(w @ (G @ w), 0.0))
        if nrm <= drop_tol * w0:
            continue
        w = w / nrm
        out.append(w)
        basis = np.column_stack([basis, w])
    if not out:
        return np.zeros((V.shape[0], 0))
    return np.column_stack(out)


def extend_basis_hapod(
    basis: ReducedBasis, traj: Trajectory, fom: FomModel, tol_pod: float
) -> ReducedBasis:
    """Append POD modes of the part of ``traj`` not captured by ``basis``.

    Enough modes are appended so that the relative time-discrete projection
    error of the trajectory onto the extended basis, measured in the
    ``G``-norm, is at most ``tol_pod``. Old columns are kept as they are.
    """
    if tol_pod <= 0:
        raise ValueError("tol_pod must be positive")
    U = np.asarray(traj.coeffs, dtype=float)
    if U.ndim != 2 or U.shape[1] != fom.n_dofs:
        raise ValueError("trajectory does not match the FOM dimension")
    S = U[1:].T  # initial state is zero and carries no information
    G = fom.G
    GS = G @ S
    total = float(np.einsum("ij,ij->", S, GS))
    if total <= 0.0:
        return basis

    V = basis.V
    R = S
    for _ in range(2):
        if V.shape[1]:
            R = R - V @ (V.T @ (G @ R))
    C = R.T @ (G @ R)
    C = 0.5 * (C + C.T)
    lam, vecs = la.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vecs = vecs[:, order]

    budget = tol_pod**2 * total
    tail = np.cumsum(lam[::-1])[::-1]  # tail[i] = sum_{j >= i} lam[j]
    if tail[0] <= budget:
        return basis
    r = int(np.argmax(np.r_[tail[1:], 0.0] <= budget)) + 1
    keep = lam[:r] > 1e-14 * lam[0]
    lam, vecs = lam[:r][keep], vecs[:, :r][:, keep]
    modes = (R @ vecs) / np.sqrt(lam)
    new = _g_orthonormalize(V, modes, G)
    if new.shape[1] == 0:
        return basis
    return ReducedBasis(np.column_stack([V, new]))


def _components(fom: FomModel, V: np.ndarray) -> np.ndarray:
    """Residual component vectors as columns: l_q, then M v_i, then A_b v_i."""
    cols = [fom.l_vecs.T, fom.M @ V]
    cols += [Ab @ V for Ab in fom.A_blocks]
    return np.column_stack(cols)


def project_operators(fom: FomModel, basis: ReducedBasis) -> ReducedModel:
    """Galerkin projection and estimator Gram matrix for the given basis."""
    V = basis.V
    C = _components(fom, V)
    riesz = fom.solve_G(C) if C.shape[1] else np.zeros_like(C)
    R = C.T @ riesz
    R = 0.5 * (R + R.T)
    s_dual = float(np.sqrt(max(fom.s_vec @ fom.solve_G(fom.s_vec), 0.0)))
    M_r = V.T @ (fom.M @ V)
    A_r = np.stack([V.T @ (Ab @ V) for Ab in fom.A_blocks])
    return ReducedModel(
        basis=basis,
        M_r=0.5 * (M_r + M_r.T),
        A_r=0.5 * (A_r + A_r.transpose(0, 2, 1)),
        l_r=fom.l_vecs @ V,
        s_r=V.T @ fom.s_vec,
        s_dual_norm=s_dual,
        R_gram=R,
        dt=fom.dt,
        num_steps=fom.num_steps,
    )


def solve_reduced(rm: ReducedModel, mu) -> ReducedTrajectory:
    mu = np.asarray(mu, dtype=float)
    B, Q, n, K = rm.n_blocks, rm.n_sources, rm.size, rm.num_steps
    c = np.zeros((K + 1, n))
    if n == 0:
        return ReducedTrajectory(c, mu.copy())
    A = np.tensordot(mu[:B], rm.A_r, axes=1)
    f = rm.dt * (mu[B:B + Q] @ rm.l_r)
    fac = la.cho_factor(rm.M_r + rm.dt * A)
    for k in range(1, K + 1):
        c[k] = la.cho_solve(fac, rm.M_r @ c[k - 1] + f)
    return ReducedTrajectory(c, mu.copy())


def coercivity_lower_bound(mu, n_blocks: int) -> float:
    """Min-theta bound of ``a(.,.;mu)`` relative to ``G``."""
    return float(np.min(np.asarray(mu, dtype=float)[:n_blocks]))


def residual_weights(rm: ReducedModel, mu, coeffs: np.ndarray) -> np.ndarray:
    """Per-step weights of the residual components, shape ``(K, D)``."""
    mu = np.asarray(mu, dtype=float)
    B, Q = rm.n_blocks, rm.n_sources
    c = np.asarray(coeffs, dtype=float)
    K = c.shape[0] - 1
    W = [np.broadcast_to(mu[B:B + Q], (K, Q)), -(c[1:] - c[:-1]) / rm.dt]
    W += [-mu[b] * c[1:] for b in range(B)]
    return np.hstack(W)


def residual_dual_norms(rm: ReducedModel, mu, coeffs: np.ndarray) -> np.ndarray:
    """``||r^k||_{V_h'}`` for ``k = 1..K`` from the offline Gram matrix."""
    W = residual_weights(rm, mu, coeffs)
    sq = np.einsum("kd,kd->k", W @ rm.R_gram, W)
    return np.sqrt(np.clip(sq, 0.0, None))


def estimate_error(rm: ReducedModel, mu, coeffs) -> float:
    """Upper bound for the discrete ``L2(0,T; V_h)`` state error.

    ``coeffs`` may be any reduced trajectory, not necessarily a reduced
    solve. Returns ``sqrt(dt * sum_k ||r^k||^2) / alpha_LB(mu)``.
    """
    c = coeffs.coeffs if isinstance(coeffs, ReducedTrajectory) else np.asarray(coeffs)
    if c.ndim != 2 or c.shape != (rm.num_steps + 1, rm.size):
        raise ValueError(
            f"coefficients of shape {c.shape}, expected {(rm.num_steps + 1, rm.size)}"
        )
    alpha = coercivity_lower_bound(mu, rm.n_blocks)
    if not alpha > 0:
        raise ValueError("coercivity lower bound must be positive")
    r = residual_dual_norms(rm, mu, c)
    return float(np.sqrt(rm.dt * np.sum(r * r)) / alpha)


def output_bound(rm: ReducedModel, E: float) -> float:
    if E < 0:
        raise ValueError("error estimate must be non-negative")
    return rm.s_dual_norm * E


def reduced_output(rm: ReducedModel, coeffs) -> np.ndarray:
    c = coeffs.coeffs if isinstance(coeffs, ReducedTrajectory) else np.asarray(coeffs)
    if c.ndim != 2 or c.shape[1] != rm.size:
        raise ValueError("coefficient dimension does not match the reduced model")
    return c @ rm.s_r


def lift(rm: ReducedModel, coeffs) -> np.ndarray:
    """Reduced coefficients to nodal values, shape ``(K + 1, N_h)``."""
    c = coeffs.coeffs if isinstance(coeffs, ReducedTrajectory) else np.asarray(coeffs)
    return c @ rm.basis.V.T
