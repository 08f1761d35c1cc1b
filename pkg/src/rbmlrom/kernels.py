"""Radial kernels, the two-layered kernel k_A and the SDKN building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

RBF_FAMILIES = ("gaussian", "quadratic_matern")
FAMILIES = RBF_FAMILIES + ("linear_matrix", "single_dim")


def phi(family: str, r):
    """Radial profile with ``phi(0) = 1``."""
    r = np.asarray(r, dtype=float)
    if family == "gaussian":
        return np.exp(-r * r)
    if family == "quadratic_matern":
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    raise ValueError(f"no radial profile for family {family!r}")


def phi_prime_over_r(family: str, r):
    """``phi'(r) / r``, finite at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    if family == "gaussian":
        return -2.0 * np.exp(-r * r)
    if family == "quadratic_matern":
        return -(1.0 + r) * np.exp(-r) / 3.0
    raise ValueError(f"no radial profile for family {family!r}")


@dataclass(frozen=True, eq=False)
class KernelConfig:
    """Scalar kernel ``phi(eps * ||x - z||)`` or ``phi(||A (x - z)||)``.

    When ``A`` is given the shape parameter is already folded into it and
    ``epsilon`` is ignored during evaluation.
    """

    family: str = "gaussian"
    epsilon: float = 1.0
    A: np.ndarray | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.A is not None:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if A.shape[0] != A.shape[1]:
                raise ValueError("inner matrix A must be square")
            if self.dim is not None and A.shape[0] != self.dim:
                raise ValueError("inner matrix A does not match dim")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "dim", A.shape[0])

    def with_matrix(self, A) -> "KernelConfig":
        return KernelConfig(self.family, self.epsilon, np.array(A, dtype=float))

    def inner_matrix(self, d: int) -> np.ndarray:
        """The effective first-layer matrix (``eps * I`` without ``A``)."""
        if self.A is not None:
            return self.A
        return self.epsilon * np.eye(d)

    def to_dict(self) -> dict:
        out = {"family": self.family, "epsilon": self.epsilon}
        if self.A is not None:
            out["A"] = self.A.tolist()
        if self.dim is not None:
            out["dim"] = self.dim
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelConfig":
        A = d.get("A")
        return cls(d["family"], float(d["epsilon"]), None if A is None else np.array(A), d.get("dim"))


def _check_dims(cfg: KernelConfig, d: int):
    if cfg.dim is not None and d != cfg.dim:
        raise ValueError(f"input dimension {d} does not match kernel dimension {cfg.dim}")


def distances(cfg: KernelConfig, X, Z) -> np.ndarray:
    """Scaled pairwise distances ``||A (x - z)||`` (or ``eps ||x - z||``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise ValueError("X and Z have different dimensions")
    _check_dims(cfg, X.shape[1])
    if cfg.A is not None:
        return cdist(X @ cfg.A.T, Z @ cfg.A.T)
    return cfg.epsilon * cdist(X, Z)


def gram(cfg: KernelConfig, X, Z) -> np.ndarray:
    if cfg.family not in RBF_FAMILIES:
        raise ValueError("gram is only defined for scalar radial families")
    return phi(cfg.family, distances(cfg, X, Z))


def eval(cfg: KernelConfig, x, z) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if x.shape != z.shape:
        raise ValueError("x and z must have the same dimension")
    return float(gram(cfg, x[None, :], z[None, :])[0, 0])


def eval_linear_matrix(x, z, out_dim: int) -> np.ndarray:
    """Matrix-valued linear kernel ``<x, z> I``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError("x and z must have the same dimension")
    return float(x @ z) * np.eye(out_dim)


def gauss_1d(t, z, eps=1.0):
    """Componentwise 1-D Gaussian ``exp(-eps^2 (t - z)^2)`` (broadcasting)."""
    d = np.asarray(t, dtype=float) - np.asarray(z, dtype=float)
    return np.exp(-(eps * d) ** 2)


def gauss_1d_dt(t, z, eps=1.0):
    """Derivative of :func:`gauss_1d` with respect to ``t``."""
    d = np.asarray(t, dtype=float) - np.asarray(z, dtype=float)
    return -2.0 * eps**2 * d * np.exp(-(eps * d) ** 2)


def eval_single_dim(x, z, base=None) -> np.ndarray:
    """Diagonal matrix of componentwise scalar kernel values.

    ``base`` is a scalar function of two reals; defaults to the unit-shape
    1-D Gaussian.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if x.shape != z.shape:
        raise ValueError("x and z must have the same dimension")
    if base is None:
        vals = gauss_1d(x, z)
    elif isinstance(base, KernelConfig):
        vals = np.array([eval(KernelConfig(base.family, base.epsilon), a, b) for a, b in zip(x, z)])
    else:
        vals = np.array([base(a, b) for a, b in zip(x, z)])
    return np.diag(vals)
