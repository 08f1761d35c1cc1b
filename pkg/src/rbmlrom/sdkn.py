"""Structured deep kernel network.

Linear layers (the expansion of a matrix-valued linear kernel collapses to a
weight matrix) alternate with single-dimensional kernel layers, where every
channel is a 1-D Gaussian expansion over frozen centers with trainable
coefficients::

    x -> W_1 x -> k-layer -> W_2 . -> k-layer -> ... -> W_L .

There are no biases. Kernel channels are initialized to approximate the
identity on the range of the propagated training inputs.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .kernels import gauss_1d, gauss_1d_dt
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class SdknArchitecture:
    layer_dims: list
    n_centers: int = 64
    seed: int = 0

    def __post_init__(self):
        self.layer_dims = [int(w) for w in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError("layer_dims needs at least input and output width >= 1")
        if self.n_centers < 1:
            raise ValueError("n_centers must be >= 1")

    @classmethod
    def default(cls, d_in: int, d_out: int, width: int = 128, **kw):
        return cls([d_in, width, width, width, d_out], **kw)


@dataclass
class SdknTrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid SDKN training configuration")


@dataclass
class KernelLayer:
    centers: np.ndarray  # (w, M), frozen
    eps: np.ndarray  # (w,), frozen
    coef: np.ndarray  # (w, M), trainable


@dataclass
class SdknModel:
    arch: SdknArchitecture
    weights: list  # W_l, shape (d_out, d_in)
    kernel_layers: list
    info: dict = field(default_factory=dict)

    def trainables(self) -> list:
        return list(self.weights) + [kl.coef for kl in self.kernel_layers]

    def with_trainables(self, params) -> "SdknModel":
        nw = len(self.weights)
        layers = [KernelLayer(kl.centers, kl.eps, np.array(c)) for kl, c in
                  zip(self.kernel_layers, params[nw:])]
        return SdknModel(self.arch, [np.array(w) for w in params[:nw]], layers, dict(self.info))

    def predict(self, x):
        return forward(self, x)

    @property
    def input_dim(self) -> int:
        return self.arch.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.arch.layer_dims[-1]

    def to_dict(self) -> dict:
        return {
            "type": "sdkn",
            "layer_dims": self.arch.layer_dims,
            "n_centers": self.arch.n_centers,
            "seed": self.arch.seed,
            "weights": [w.tolist() for w in self.weights],
            "kernel_layers": [
                {"centers": kl.centers.tolist(), "eps": kl.eps.tolist(), "coef": kl.coef.tolist()}
                for kl in self.kernel_layers
            ],
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, bool, str))},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdknModel":
        arch = SdknArchitecture(d["layer_dims"], d["n_centers"], d["seed"])
        dims = arch.layer_dims
        weights = [np.array(w, dtype=float).reshape(dims[i + 1], dims[i])
                   for i, w in enumerate(d["weights"])]
        layers = []
        for i, kl in enumerate(d["kernel_layers"]):
            w = dims[i + 1]
            layers.append(KernelLayer(
                np.array(kl["centers"], dtype=float).reshape(w, -1),
                np.array(kl["eps"], dtype=float).reshape(w),
                np.array(kl["coef"], dtype=float).reshape(w, -1),
            ))
        return cls(arch, weights, layers, dict(d.get("info", {})))


def _identity_channel(lo: float, hi: float, M: int, ridge: float = 1e-8):
    if M == 1:
        z = np.array([0.5 * (lo + hi)])
        eps = 1.0 / (hi - lo)
    else:
        z = np.linspace(lo, hi, M)
        eps = (M - 1) / (hi - lo)
    Kc = gauss_1d(z[:, None], z[None, :], eps)
    coef = np.linalg.solve(Kc.T @ Kc + ridge * np.eye(M), Kc.T @ z)
    return z, eps, coef


def init(arch: SdknArchitecture, X_sample) -> SdknModel:
    X = np.atleast_2d(np.asarray(X_sample, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("need a non-empty input sample")
    if X.shape[1] != arch.layer_dims[0]:
        raise ValueError("sample dimension does not match the architecture")
    rng = np.random.default_rng(arch.seed)
    dims = arch.layer_dims
    weights, layers = [], []
    H = X
    for i in range(len(dims) - 1):
        W = rng.normal(0.0, 1.0 / np.sqrt(dims[i]), size=(dims[i + 1], dims[i]))
        weights.append(W)
        H = H @ W.T
        if i == len(dims) - 2:
            break
        lo, hi = H.min(axis=0), H.max(axis=0)
        pad = 0.1 * (hi - lo) + 1e-3
        lo, hi = lo - pad, hi + pad
        Z = np.empty((dims[i + 1], arch.n_centers))
        C = np.empty_like(Z)
        E = np.empty(dims[i + 1])
        for ch in range(dims[i + 1]):
            Z[ch], E[ch], C[ch] = _identity_channel(lo[ch], hi[ch], arch.n_centers)
        kl = KernelLayer(Z, E, C)
        layers.append(kl)
        H = _kernel_forward(kl, H)[0]
    return SdknModel(arch, weights, layers)


def _kernel_forward(kl: KernelLayer, H):
    Gm = gauss_1d(H[:, :, None], kl.centers[None], kl.eps[None, :, None])
    return np.einsum("nwm,wm->nw", Gm, kl.coef), Gm


def _forward_cache(model: SdknModel, X):
    cache = []
    H = X
    for i, W in enumerate(model.weights):
        cache.append(("lin", H))
        H = H @ W.T
        if i < len(model.kernel_layers):
            kl = model.kernel_layers[i]
            out, Gm = _kernel_forward(kl, H)
            cache.append(("ker", H, Gm))
            H = out
    return H, cache


def forward(model: SdknModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise ValueError("input dimension mismatch")
    out = _forward_cache(model, X)[0]
    return out[0] if single else out


def mse(model: SdknModel, X, Y) -> float:
    P = forward(model, np.atleast_2d(X))
    return float(np.mean((P - np.asarray(Y).reshape(P.shape)) ** 2))


def backward(model: SdknModel, X, Y):
    """Loss and exact gradients of the MSE w.r.t. ``trainables()`` order.

    Returns ``(loss, grads)`` with ``grads = [dW_1, ..., dW_L, dC_1, ...]``.
    Frozen centers and shape parameters get no gradient.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    P, cache = _forward_cache(model, X)
    R = P - Y
    loss = float(np.mean(R * R))
    dH = 2.0 * R / R.size
    dW = [None] * len(model.weights)
    dC = [None] * len(model.kernel_layers)
    li, ki = len(model.weights) - 1, len(model.kernel_layers) - 1
    for entry in reversed(cache):
        if entry[0] == "ker":
            _, H_in, Gm = entry
            kl = model.kernel_layers[ki]
            dC[ki] = np.einsum("nw,nwm->wm", dH, Gm)
            dG = gauss_1d_dt(H_in[:, :, None], kl.centers[None], kl.eps[None, :, None])
            dH = dH * np.einsum("nwm,wm->nw", dG, kl.coef)
            ki -= 1
        else:
            _, H_in = entry
            W = model.weights[li]
            dW[li] = dH.T @ H_in
            dH = dH @ W
            li -= 1
    return loss, dW + dC


def train(model: SdknModel, X, Y, cfg: SdknTrainConfig | None = None, seed: int = 0) -> SdknModel:
    """Mini-batch Adam; returns the parameters with the best validation MSE."""
    cfg = cfg or SdknTrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    N = X.shape[0]
    if N == 0:
        raise ValueError("need at least one training sample")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(N)
    n_val = int(round(cfg.val_fraction * N)) if N >= 10 else 0
    val, tr = perm[:n_val], perm[n_val:]
    Xv, Yv = (X[val], Y[val]) if n_val else (X, Y)

    params = [p.copy() for p in model.trainables()]
    state = AdamState.zeros_like(params, learning_rate=cfg.learning_rate)
    best = copy.deepcopy(model)
    best_val = mse(model, Xv, Yv)
    history = [best_val]
    aborted = False
    current = model
    for epoch in range(cfg.epochs):
        order = tr[rng.permutation(tr.size)]
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(invalid="ignore", over="ignore"):  # handled below
                loss, grads = backward(current, X[idx], Y[idx])
            if not np.isfinite(loss):
                aborted = True
                break
            params, state = adam_step(state, params, grads)
            current = current.with_trainables(params)
        if aborted:
            log.warning("non-finite loss in epoch %d, training aborted", epoch)
            break
        v = mse(current, Xv, Yv)
        history.append(v)
        if not np.isfinite(v):
            aborted = True
            log.warning("non-finite validation loss in epoch %d, training aborted", epoch)
            break
        if v < best_val:
            best_val, best = v, current
    out = best.with_trainables(best.trainables())
    out.info = {"val_mse": best_val, "aborted": aborted, "epochs_run": len(history) - 1,
                "history": history}
    return out
