"""Vectorial kernel orthogonal greedy regression and its two-layered variant.

``fit`` runs f-greedy selection on a Newton basis: every step adds the data
point with the largest residual norm, orthonormalizes its kernel translate
against the previous ones in the native space, and updates residuals and the
power function on the full training set. Cost per step is O(N n).

``optimize_two_layer`` learns the inner matrix ``A`` of ``k_A`` by Adam on a
mini-batch leave-one-out loss before the greedy run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from . import kernels
from .kernels import KernelConfig
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

POWER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class VkogaModel:
    kernel: KernelConfig
    centers: np.ndarray  # (n, d)
    coef: np.ndarray  # (n, b)
    input_dim: int
    output_dim: int
    trace: tuple = ()
    power_trace: tuple = ()

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    def predict(self, x) -> np.ndarray:
        return predict(self, x)

    def to_dict(self) -> dict:
        return {
            "type": "vkoga",
            "kernel": self.kernel.to_dict(),
            "centers": self.centers.tolist(),
            "coef": self.coef.tolist(),
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "trace": list(self.trace),
            "power_trace": list(self.power_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VkogaModel":
        d_in, d_out = int(d["input_dim"]), int(d["output_dim"])
        return cls(
            kernel=KernelConfig.from_dict(d["kernel"]),
            centers=np.array(d["centers"], dtype=float).reshape(-1, d_in),
            coef=np.array(d["coef"], dtype=float).reshape(-1, d_out),
            input_dim=d_in,
            output_dim=d_out,
            trace=tuple(int(i) for i in d.get("trace", ())),
            power_trace=tuple(float(p) for p in d.get("power_trace", ())),
        )


@dataclass
class TwoLayerTrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 5e-3
    reg: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2 or self.learning_rate <= 0 or self.reg <= 0:
            raise ValueError("invalid two-layer training configuration")


def empty_model(kernel: KernelConfig, input_dim: int, output_dim: int) -> VkogaModel:
    return VkogaModel(kernel, np.zeros((0, input_dim)), np.zeros((0, output_dim)),
                      input_dim, output_dim)


def fit(X, Y, kernel: KernelConfig, max_centers: int = 500, greedy_tol: float = 1e-10) -> VkogaModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, d = X.shape
    if N == 0 or Y.shape[0] != N:
        raise ValueError("need a non-empty data set with matching X and Y rows")
    b = Y.shape[1]
    n_max = min(max_centers, N)

    V = np.zeros((N, n_max))  # Newton basis values on the data
    beta = np.zeros((n_max, n_max))  # Newton basis -> kernel translates
    c = np.zeros((n_max, b))
    res = Y.copy()
    res_sq = np.einsum("ij,ij->i", res, res)
    p2 = np.ones(N)  # k(x, x) = phi(0) = 1
    selected = np.zeros(N, dtype=bool)
    trace, powers = [], []

    n = 0
    while n < n_max:
        cand = np.where(selected, -np.inf, res_sq)
        i = int(np.argmax(cand))
        if np.sqrt(max(cand[i], 0.0)) <= greedy_tol:
            break
        p = np.sqrt(max(p2[i], 0.0))
        if p < POWER_TOL:
            break
        k_col = kernels.gram(kernel, X, X[i:i + 1])[:, 0]
        v = (k_col - V[:, :n] @ V[i, :n]) / p
        beta[:, n] = -(beta[:, :n] @ V[i, :n]) / p
        beta[n, n] = 1.0 / p
        V[:, n] = v
        c[n] = res[i] / p
        res -= np.outer(v, c[n])
        res[i] = 0.0
        res_sq = np.einsum("ij,ij->i", res, res)
        p2 -= v * v
        p2[i] = 0.0
        selected[i] = True
        trace.append(i)
        powers.append(p)
        n += 1

    alpha = beta[:n, :n] @ c[:n]
    return VkogaModel(kernel, X[trace].copy(), alpha, d, b, tuple(trace), tuple(powers))


def predict(model: VkogaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise ValueError("input dimension mismatch")
    if model.n_centers == 0:
        out = np.zeros((X.shape[0], model.output_dim))
    else:
        out = kernels.gram(model.kernel, X, model.centers) @ model.coef
    return out[0] if single else out


def power_function(kernel: KernelConfig, centers, x) -> np.ndarray:
    """Power function of the interpolation on ``centers`` at the rows of ``x``."""
    centers = np.atleast_2d(centers)
    X = np.atleast_2d(x)
    kxx = np.ones(X.shape[0])
    if centers.shape[0] == 0:
        return np.sqrt(kxx)
    Kc = kernels.gram(kernel, centers, centers)
    Kx = kernels.gram(kernel, X, centers)
    L = la.cholesky(Kc, lower=True)
    W = la.solve_triangular(L, Kx.T, lower=True)
    return np.sqrt(np.clip(kxx - np.einsum("ij,ij->j", W, W), 0.0, None))


# -- two-layered kernel optimization ----------------------------------------

def loo_loss_and_grad(A, X, Y, family: str, reg: float = 1e-8, with_grad: bool = True):
    """Leave-one-out loss of kernel interpolation with ``k_A`` and its A-gradient.

    The residuals ``e_i = (K^{-1} Y)_i / (K^{-1})_{ii}`` are the exact
    leave-one-out errors; the loss is the batch mean of ``||e_i||^2``.
    """
    A = np.asarray(A, dtype=float)
    X = np.atleast_2d(X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    m = X.shape[0]
    XA = X @ A.T
    diff = XA[:, None, :] - XA[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    K = kernels.phi(family, r) + reg * np.eye(m)
    cf = la.cho_factor(K)
    Kinv = la.cho_solve(cf, np.eye(m))
    Z = Kinv @ Y
    dg = np.diag(Kinv)
    E = Z / dg[:, None]
    loss = float(np.sum(E * E) / m)
    if not with_grad:
        return loss, None
    P = E / dg[:, None]
    q = np.einsum("ic,ic->i", E, Z) / dg**2
    dK = (2.0 / m) * (-(Kinv @ P) @ Z.T + (Kinv * q) @ Kinv)
    dK = 0.5 * (dK + dK.T)
    Wt = dK * kernels.phi_prime_over_r(family, r)
    rs = Wt.sum(axis=1)
    S = 2.0 * (X.T @ (X * rs[:, None]) - X.T @ Wt @ X)
    return loss, A @ S


def optimize_two_layer(X, Y, base: KernelConfig, cfg: TwoLayerTrainConfig | None = None,
                       seed: int = 0, history: list | None = None) -> np.ndarray:
    """Adam on the mini-batch LOO loss; returns the learned inner matrix."""
    cfg = cfg or TwoLayerTrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, d = X.shape
    A = base.inner_matrix(d).copy()
    state = AdamState.zeros_like([A], learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(seed)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            try:
                loss, grad = loo_loss_and_grad(A, X[idx], Y[idx], base.family, cfg.reg)
            except la.LinAlgError:
                log.warning("epoch %d: singular batch Gram, batch skipped", epoch)
                continue
            if history is not None:
                history.append(loss)
            (A,), state = adam_step(state, [A], [grad])
    return A


def two_layer_fit(X, Y, base: KernelConfig, cfg: TwoLayerTrainConfig | None = None,
                  max_centers: int = 500, greedy_tol: float = 1e-10, seed: int = 0) -> VkogaModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = optimize_two_layer(X, Y, base, cfg, seed)
    return fit(X, Y, base.with_matrix(A), max_centers, greedy_tol)
