"""Full order model: parametrized heat equation on the unit square.

5-point finite differences with lumped mass ``M = h^2 I`` and homogeneous
Dirichlet boundary. The unit square is split into ``B`` equal blocks, each
with its own diffusivity; ``Q`` heater regions act as sources. Everything is
affine in the parameter::

    A(mu) = sum_b mu[b] A_b,        l(mu) = sum_q mu[B + q] l_q

Time integration is implicit Euler with a fixed step and zero initial data.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConfigurationError(ValueError):
    pass


TRAJECTORY_MAGIC = b"CRTRJ1"


@dataclass(frozen=True)
class FomSpec:
    """Discretization and layout of the desk-scale thermal model.

    ``heater_regions`` are boxes ``(x0, x1, y0, y1)`` in the unit square. If
    ``None``, ``heaters`` squares of side 0.25 are placed along the line
    ``y = 0.25``. The output is the mean temperature of block
    ``output_block``. ``source_scale`` multiplies every heater load; it sets
    the output magnitude relative to an absolute tolerance.
    """

    grid_n: int = 32
    blocks: int = 4
    heaters: int = 2
    T: float = 1.0
    num_steps: int = 100
    output_block: int = 3
    heater_regions: tuple | None = None
    source_scale: float = 30.0

    def __post_init__(self):
        if self.grid_n < 1:
            raise ConfigurationError("grid_n must be >= 1")
        nb = math.isqrt(self.blocks)
        if self.blocks < 1 or nb * nb != self.blocks:
            raise ConfigurationError("blocks must be a perfect square")
        if self.num_steps < 1:
            raise ConfigurationError("num_steps must be >= 1")
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if not 0 <= self.output_block < self.blocks:
            raise ConfigurationError("output_block out of range")
        if self.heaters < 0:
            raise ConfigurationError("heaters must be >= 0")
        if self.heater_regions is not None:
            regions = tuple(tuple(float(v) for v in r) for r in self.heater_regions)
            if len(regions) != self.heaters:
                raise ConfigurationError("need one region per heater")
            object.__setattr__(self, "heater_regions", regions)

    @property
    def h(self) -> float:
        return 1.0 / (self.grid_n + 1)

    @property
    def dt(self) -> float:
        return self.T / self.num_steps

    def regions(self) -> tuple:
        if self.heater_regions is not None:
            return self.heater_regions
        half = 0.125
        return tuple(
            ((q + 1) / (self.heaters + 1) - half, (q + 1) / (self.heaters + 1) + half,
             0.25 - half, 0.25 + half)
            for q in range(self.heaters)
        )

    def to_dict(self) -> dict:
        d = {
            "grid_n": self.grid_n,
            "blocks": self.blocks,
            "heaters": self.heaters,
            "T": self.T,
            "num_steps": self.num_steps,
            "output_block": self.output_block,
            "source_scale": self.source_scale,
        }
        if self.heater_regions is not None:
            d["heater_regions"] = [list(r) for r in self.heater_regions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FomSpec":
        keys = ("grid_n", "blocks", "heaters", "T", "num_steps", "output_block", "source_scale")
        kw = {k: d[k] for k in keys if k in d}
        if d.get("heater_regions") is not None:
            kw["heater_regions"] = tuple(tuple(r) for r in d["heater_regions"])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class FomModel:
    spec: FomSpec
    M: sp.csc_matrix
    A_blocks: tuple
    l_vecs: np.ndarray  # (Q, N_h)
    s_vec: np.ndarray
    G: sp.csc_matrix
    node_block: np.ndarray
    _G_lu: object = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return self.M.shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.A_blocks)

    @property
    def n_sources(self) -> int:
        return self.l_vecs.shape[0]

    @property
    def dt(self) -> float:
        return self.spec.dt

    @property
    def num_steps(self) -> int:
        return self.spec.num_steps

    @property
    def param_dim(self) -> int:
        return self.n_blocks + self.n_sources

    def solve_G(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``G^{-1}`` (Riesz map of the energy inner product)."""
        return self._G_lu.solve(np.asarray(rhs, dtype=float))

    def stiffness(self, mu) -> sp.csc_matrix:
        mu = np.asarray(mu, dtype=float)
        A = mu[0] * self.A_blocks[0]
        for b in range(1, self.n_blocks):
            A = A + mu[b] * self.A_blocks[b]
        return A.tocsc()

    def source(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return mu[self.n_blocks:self.param_dim] @ self.l_vecs


@dataclass(frozen=True, eq=False)
class Trajectory:
    coeffs: np.ndarray  # (K + 1, N_h)
    mu: np.ndarray


def _block_of(x, y, nb):
    col = np.minimum((x * nb).astype(int), nb - 1)
    row = np.minimum((y * nb).astype(int), nb - 1)
    return row * nb + col


def _in_box(x, y, box):
    x0, x1, y0, y1 = box
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def assemble(spec: FomSpec) -> FomModel:
    """Build mass, per-block stiffness, sources and output functional."""
    n, B = spec.grid_n, spec.blocks
    nb = math.isqrt(B)
    h = spec.h
    N = n * n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()  # dof k = j * n + i
    x, y = (ii + 1) * h, (jj + 1) * h
    node_block = _block_of(x, y, nb)

    rows = [[] for _ in range(B)]
    cols = [[] for _ in range(B)]
    vals = [[] for _ in range(B)]

    def add(b, r, c, v):
        rows[b].append(r)
        cols[b].append(c)
        vals[b].append(v)

    idx = np.arange(N)
    # interior edges: unit weight split evenly between the blocks of both ends
    for a_mask, shift in (((ii < n - 1), 1), ((jj < n - 1), n)):
        a = idx[a_mask]
        c = a + shift
        for end in (a, c):
            blk = node_block[end]
            for b in range(B):
                sel = blk == b
                ea, ec = a[sel], c[sel]
                add(b, ea, ea, np.full(ea.size, 0.5))
                add(b, ec, ec, np.full(ec.size, 0.5))
                add(b, ea, ec, np.full(ea.size, -0.5))
                add(b, ec, ea, np.full(ea.size, -0.5))
    # boundary edges: full weight to the block of the interior node
    n_bdry = (ii == 0).astype(float) + (ii == n - 1) + (jj == 0) + (jj == n - 1)
    for b in range(B):
        sel = (node_block == b) & (n_bdry > 0)
        add(b, idx[sel], idx[sel], n_bdry[sel])

    A_blocks = []
    for b in range(B):
        if rows[b]:
            r, c, v = (np.concatenate(z) for z in (rows[b], cols[b], vals[b]))
        else:
            r = c = np.zeros(0, dtype=int)
            v = np.zeros(0)
        A_blocks.append(sp.csc_matrix((v, (r, c)), shape=(N, N)))
    A_blocks = tuple(A_blocks)

    M = sp.identity(N, format="csc") * (h * h)
    m_diag = np.full(N, h * h)

    l_vecs = np.zeros((spec.heaters, N))
    for q, box in enumerate(spec.regions()):
        ind = _in_box(x, y, box).astype(float)
        if not ind.any():
            raise ConfigurationError(
                f"grid_n={n} too coarse: heater region {q} contains no nodes"
            )
        l_vecs[q] = spec.source_scale * m_diag * ind

    out = (node_block == spec.output_block).astype(float)
    if not out.any():
        raise ConfigurationError(f"output block {spec.output_block} contains no nodes")
    s_vec = m_diag * out / (m_diag @ out)

    G = A_blocks[0]
    for Ab in A_blocks[1:]:
        G = G + Ab
    G = G.tocsc()
    return FomModel(
        spec=spec, M=M, A_blocks=A_blocks, l_vecs=l_vecs, s_vec=s_vec, G=G,
        node_block=node_block, _G_lu=spla.splu(G),
    )


def laplacian(n: int) -> sp.csc_matrix:
    """Unsplit 5-point stiffness (diag 4, off-diagonal -1) on an n x n grid."""
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    I = sp.identity(n)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsc()


def solve(model: FomModel, mu, u0: np.ndarray | None = None) -> Trajectory:
    """Implicit Euler: ``(M + dt A(mu)) u^k = M u^{k-1} + dt l(mu)``."""
    mu = np.asarray(mu, dtype=float)
    K, dt = model.num_steps, model.dt
    N = model.n_dofs
    lu = spla.splu((model.M + dt * model.stiffness(mu)).tocsc())
    f = dt * model.source(mu)
    U = np.zeros((K + 1, N))
    if u0 is not None:
        U[0] = u0
    for k in range(1, K + 1):
        U[k] = lu.solve(model.M @ U[k - 1] + f)
    return Trajectory(coeffs=U, mu=mu.copy())


def output(model: FomModel, traj: Trajectory) -> np.ndarray:
    U = np.asarray(traj.coeffs)
    if U.ndim != 2 or U.shape[1] != model.n_dofs:
        raise ValueError(
            f"trajectory has shape {U.shape}, expected (*, {model.n_dofs})"
        )
    return U @ model.s_vec


def time_average(series, T: float = 1.0) -> float:
    """Trapezoidal mean over a uniform grid spanning ``[0, T]``."""
    series = np.asarray(series, dtype=float)
    if series.size == 1:
        return float(series[0])
    dt = T / (series.size - 1)
    integral = dt * (series.sum() - 0.5 * (series[0] + series[-1]))
    return float(integral / T)


def save_trajectory(path, traj: Trajectory) -> None:
    U = np.ascontiguousarray(traj.coeffs, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<QQ", U.shape[0], U.shape[1]))
        fh.write(U.tobytes())


def load_trajectory(path, mu=None) -> Trajectory:
    data = Path(path).read_bytes()
    if data[:6] != TRAJECTORY_MAGIC:
        raise ValueError(f"{path}: not a trajectory file (bad magic)")
    rows, cols = struct.unpack("<QQ", data[6:22])
    body = data[22:]
    if len(body) != 8 * rows * cols:
        raise ValueError(f"{path}: truncated trajectory payload")
    U = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)
    return Trajectory(coeffs=U, mu=None if mu is None else np.asarray(mu, dtype=float))
