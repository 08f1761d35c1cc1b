"""Parameter box, sampling density and the affine normalization used as ML input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParameterDomain:
    """Axis-aligned box of admissible parameters with a sampling density.

    The default desk-scale layout has ``n_blocks`` diffusivities followed by
    ``n_heaters`` heater intensities.
    """

    lower: np.ndarray
    upper: np.ndarray
    density: str = "uniform"

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length >= 1")
        if np.any(lower > upper):
            raise ValueError("lower must not exceed upper")
        if self.density != "uniform":
            raise ValueError(f"unsupported density {self.density!r}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, mu, atol: float = 0.0) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(
            mu.shape == self.lower.shape
            and np.all(mu >= self.lower - atol)
            and np.all(mu <= self.upper + atol)
        )

    def to_dict(self) -> dict:
        return {
            "param_dim": self.dim,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "density": self.density,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterDomain":
        if "lower" not in d or "upper" not in d:
            return default_domain()
        dom = cls(d["lower"], d["upper"], d.get("density", "uniform"))
        if "param_dim" in d and int(d["param_dim"]) != dom.dim:
            raise ValueError(
                f"param_dim={d['param_dim']} does not match len(lower)={dom.dim}"
            )
        return dom


DIFFUSIVITY_RANGE = (0.5, 2.0)


def default_domain(n_blocks: int = 4, n_heaters: int = 2,
                   diffusivity_range: tuple = DIFFUSIVITY_RANGE) -> ParameterDomain:
    """Diffusivities in ``diffusivity_range`` and heater intensities in [0, 1]."""
    lo, hi = diffusivity_range
    lower = np.r_[np.full(n_blocks, float(lo)), np.zeros(n_heaters)]
    upper = np.r_[np.full(n_blocks, float(hi)), np.ones(n_heaters)]
    return ParameterDomain(lower, upper)


def sample(domain: ParameterDomain, seed: int, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. parameters from the domain density, shape ``(n, p)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, domain.dim))
    return domain.lower + u * (domain.upper - domain.lower)


def _half_widths(domain: ParameterDomain):
    center = 0.5 * (domain.lower + domain.upper)
    half = 0.5 * (domain.upper - domain.lower)
    return center, half


def normalize(domain: ParameterDomain, mu) -> np.ndarray:
    """Map ``lower -> -1`` and ``upper -> +1`` per coordinate.

    Works on a single parameter or on rows of a 2-D array. Degenerate
    coordinates (``lower == upper``) map to 0.
    """
    mu = np.asarray(mu, dtype=float)
    center, half = _half_widths(domain)
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, (mu - center) / safe, 0.0)


def denormalize(domain: ParameterDomain, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    center, half = _half_widths(domain)
    return center + z * half
