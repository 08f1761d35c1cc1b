"""Certified adaptive FOM / RB-ROM / ML-ROM hierarchy.

A query tries the ML-ROM first, then the RB-ROM, and falls back to the FOM.
ML and RB answers are only returned if the RB output error bound is below the
tolerance. FOM solves enrich the reduced basis; certified RB solves become
training data for the ML-ROM, which is retrained every ``retrain_batch`` new
samples until it answers a ``stop_ratio`` share of queries.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fom as fom_mod
from . import rb, sdkn, vkoga
from .kernels import KernelConfig
from .param_space import ParameterDomain, normalize

log = logging.getLogger(__name__)

BACKENDS = ("vkoga", "vkoga2l", "sdkn", "none")
TIME_MODES = ("time_vectorized", "random_access")
PROVENANCES = ("FOM", "RB", "ML")


@dataclass
class HierarchyConfig:
    tolerance: float = 5e-2
    ml_backend: str = "vkoga2l"
    retrain_batch: int | None = None
    stop_ratio: float = 0.6
    time_mode: str = "random_access"
    tol_pod: float | None = None
    kernel_family: str = "quadratic_matern"
    kernel_epsilon: float = 1.0
    max_centers: int = 500
    two_layer: vkoga.TwoLayerTrainConfig = field(default_factory=vkoga.TwoLayerTrainConfig)
    sdkn_width: int = 128
    sdkn_centers: int = 64
    sdkn_train: sdkn.SdknTrainConfig = field(default_factory=sdkn.SdknTrainConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.ml_backend not in BACKENDS:
            raise ValueError(f"unknown ML backend {self.ml_backend!r}")
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"unknown time mode {self.time_mode!r}")
        if not 0 < self.stop_ratio <= 1:
            raise ValueError("stop_ratio must lie in (0, 1]")
        if self.retrain_batch is None:
            self.retrain_batch = 200 if self.ml_backend == "sdkn" else 40
        if self.retrain_batch < 1:
            raise ValueError("retrain_batch must be >= 1")

    @property
    def pod_tolerance(self) -> float:
        return self.tol_pod if self.tol_pod is not None else self.tolerance / 10

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "ml_backend": self.ml_backend,
            "retrain_batch": self.retrain_batch,
            "stop_ratio": self.stop_ratio,
            "time_mode": self.time_mode,
            "tol_pod": self.tol_pod,
            "kernel_family": self.kernel_family,
            "kernel_epsilon": self.kernel_epsilon,
            "max_centers": self.max_centers,
            "two_layer": vars(self.two_layer).copy(),
            "sdkn_width": self.sdkn_width,
            "sdkn_centers": self.sdkn_centers,
            "sdkn_train": vars(self.sdkn_train).copy(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchyConfig":
        kw = {k: d[k] for k in (
            "tolerance", "ml_backend", "retrain_batch", "stop_ratio", "time_mode", "tol_pod",
            "kernel_family", "kernel_epsilon", "max_centers", "sdkn_width", "sdkn_centers", "seed",
        ) if k in d}
        if "two_layer" in d:
            kw["two_layer"] = vkoga.TwoLayerTrainConfig(**d["two_layer"])
        if "sdkn_train" in d:
            kw["sdkn_train"] = sdkn.SdknTrainConfig(**d["sdkn_train"])
        return cls(**kw)


@dataclass
class QueryRecord:
    index: int
    mu: np.ndarray
    provenance: str
    estimated_bound: float | None
    wall_time: float
    output: np.ndarray
    f_bar: float
    ml_time: float = 0.0
    rb_time: float = 0.0
    fom_time: float = 0.0
    build_time: float = 0.0
    n_rb: int = 0


class MlRom:
    """Learned map from normalized parameters to reduced coefficient trajectories."""

    def __init__(self, model, time_mode: str, num_steps: int, n_rb: int,
                 y_mean: np.ndarray, y_scale: np.ndarray):
        self.model = model
        self.time_mode = time_mode
        self.num_steps = num_steps
        self.n_rb = n_rb
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.y_scale = np.asarray(y_scale, dtype=float)

    def predict_coeffs(self, z: np.ndarray) -> np.ndarray:
        K = self.num_steps
        if self.time_mode == "time_vectorized":
            y = self.model.predict(z[None, :])[0]
            c = (y * self.y_scale + self.y_mean).reshape(K, self.n_rb)
        else:
            Z = np.column_stack([np.repeat(z[None, :], K, axis=0), time_inputs(K)])
            c = self.model.predict(Z) * self.y_scale + self.y_mean
        return np.vstack([np.zeros((1, self.n_rb)), c])

    def to_dict(self) -> dict:
        return {
            "time_mode": self.time_mode,
            "num_steps": self.num_steps,
            "n_rb": self.n_rb,
            "y_mean": self.y_mean.tolist(),
            "y_scale": self.y_scale.tolist(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlRom":
        md = d["model"]
        if md["type"] == "vkoga":
            model = vkoga.VkogaModel.from_dict(md)
        elif md["type"] == "sdkn":
            model = sdkn.SdknModel.from_dict(md)
        else:
            raise ValueError(f"unknown ML model type {md['type']!r}")
        return cls(model, d["time_mode"], d["num_steps"], d["n_rb"], d["y_mean"], d["y_scale"])


def time_inputs(K: int) -> np.ndarray:
    """Normalized time coordinate of steps ``1..K`` in ``[-1, 1]``."""
    return -1.0 + 2.0 * np.arange(1, K + 1) / K


def training_arrays(train_X, train_Y, time_mode: str, num_steps: int, n_rb: int):
    """Stack the buffer into ML inputs and targets for the chosen time mode."""
    X = np.asarray(train_X, dtype=float)
    C = np.asarray(train_Y, dtype=float).reshape(len(train_Y), num_steps, n_rb)
    if time_mode == "time_vectorized":
        return X, C.reshape(len(train_Y), -1)
    t = time_inputs(num_steps)
    Xr = np.column_stack([np.repeat(X, num_steps, axis=0), np.tile(t, X.shape[0])])
    return Xr, C.reshape(-1, n_rb)


def standardize(Y: np.ndarray):
    """Center per dimension, divide by one global scale.

    A single scale keeps the training loss proportional to the energy-norm
    error of the lifted state (the basis is G-orthonormal).
    """
    mean = Y.mean(axis=0)
    s = float(np.sqrt(np.mean((Y - mean) ** 2))) if Y.size else 0.0
    s = s if s > 0 else 1.0
    scale = np.full(Y.shape[1], s)
    return (Y - mean) / scale, mean, scale


def train_backend(cfg: HierarchyConfig, X: np.ndarray, Y: np.ndarray, seed: int):
    """Fit the configured ML backend on standardized targets."""
    base = KernelConfig(cfg.kernel_family, cfg.kernel_epsilon)
    if cfg.ml_backend == "vkoga":
        return vkoga.fit(X, Y, base, cfg.max_centers)
    if cfg.ml_backend == "vkoga2l":
        return vkoga.two_layer_fit(X, Y, base, cfg.two_layer, cfg.max_centers, seed=seed)
    if cfg.ml_backend == "sdkn":
        arch = sdkn.SdknArchitecture.default(X.shape[1], Y.shape[1], cfg.sdkn_width,
                                             n_centers=cfg.sdkn_centers, seed=seed)
        model = sdkn.init(arch, X)
        return sdkn.train(model, X, Y, cfg.sdkn_train, seed=seed)
    raise ValueError(f"backend {cfg.ml_backend!r} cannot be trained")


@dataclass
class HierarchyState:
    fom: fom_mod.FomModel
    domain: ParameterDomain
    config: HierarchyConfig
    rm: rb.ReducedModel | None = None
    ml: MlRom | None = None
    train_X: list = field(default_factory=list)
    train_Y: list = field(default_factory=list)
    new_since_training: int = 0
    queries_since_training: int = 0
    ml_since_training: int = 0
    retraining_frozen: bool = False
    n_trainings: int = 0
    trainings: list = field(default_factory=list)
    log: list = field(default_factory=list)
    audit_dir: Path | None = None

    @property
    def n_rb(self) -> int:
        return 0 if self.rm is None else self.rm.size

    def ml_ratio_since_training(self) -> float:
        if self.queries_since_training == 0:
            return 0.0
        return self.ml_since_training / self.queries_since_training


def new_state(fom: fom_mod.FomModel, domain: ParameterDomain, config: HierarchyConfig,
              audit_dir=None) -> HierarchyState:
    if domain.dim != fom.param_dim:
        raise ValueError(
            f"parameter dimension {domain.dim} does not match the FOM ({fom.param_dim})"
        )
    return HierarchyState(fom, domain, config, audit_dir=None if audit_dir is None else Path(audit_dir))


def _certify(rm: rb.ReducedModel, mu, coeffs) -> float:
    return rb.output_bound(rm, rb.estimate_error(rm, mu, coeffs))


def query(state: HierarchyState, mu) -> QueryRecord:
    """Answer one parameter query; updates ``state`` in place."""
    mu = np.asarray(mu, dtype=float)
    cfg = state.config
    eps = cfg.tolerance
    T = state.fom.spec.T
    index = len(state.log)
    t_start = time.perf_counter()
    ml_time = rb_time = fom_time = build_time = 0.0
    rec = None

    if state.rm is not None and state.ml is not None:
        t0 = time.perf_counter()
        try:
            c = state.ml.predict_coeffs(normalize(state.domain, mu))
            bound = _certify(state.rm, mu, c)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("query %d: ML certification failed (%s)", index, exc)
            bound = np.inf
        ml_time = time.perf_counter() - t0
        if np.isfinite(bound) and bound <= eps:
            out = rb.reduced_output(state.rm, c)
            rec = QueryRecord(index, mu.copy(), "ML", bound, 0.0, out,
                              fom_mod.time_average(out, T), ml_time=ml_time)

    rb_coeffs = None
    if rec is None and state.rm is not None:
        t0 = time.perf_counter()
        rt = rb.solve_reduced(state.rm, mu)
        bound = _certify(state.rm, mu, rt)
        rb_time = time.perf_counter() - t0
        if bound <= eps:
            out = rb.reduced_output(state.rm, rt)
            rec = QueryRecord(index, mu.copy(), "RB", bound, 0.0, out,
                              fom_mod.time_average(out, T), ml_time=ml_time, rb_time=rb_time)
            rb_coeffs = rt.coeffs

    traj = None
    if rec is None:
        t0 = time.perf_counter()
        traj = fom_mod.solve(state.fom, mu)
        out = fom_mod.output(state.fom, traj)
        fom_time = time.perf_counter() - t0
        rec = QueryRecord(index, mu.copy(), "FOM", None, 0.0, out,
                          fom_mod.time_average(out, T), ml_time=ml_time, rb_time=rb_time,
                          fom_time=fom_time)
    rec.wall_time = time.perf_counter() - t_start

    if state.ml is not None:
        state.queries_since_training += 1
        if rec.provenance == "ML":
            state.ml_since_training += 1

    t0 = time.perf_counter()
    if rb_coeffs is not None:
        state.train_X.append(normalize(state.domain, mu))
        state.train_Y.append(rb_coeffs[1:].ravel().copy())
        state.new_since_training += 1
    if traj is not None:
        ingest_fom(state, mu, traj)
    maybe_retrain(state)
    build_time = time.perf_counter() - t0
    rec.build_time = build_time
    rec.n_rb = state.n_rb
    state.log.append(rec)
    return rec


def ingest_fom(state: HierarchyState, mu, traj: fom_mod.Trajectory) -> HierarchyState:
    """Enrich the basis with a FOM trajectory.

    The POD tolerance is tightened until the reduced solve at ``mu`` itself is
    certified, or until the trajectory is exhausted.
    """
    mu = np.asarray(mu, dtype=float)
    fom = state.fom
    old = state.rm.basis if state.rm is not None else rb.ReducedBasis.empty(fom.n_dofs)
    tol = state.config.pod_tolerance
    basis = rb.extend_basis_hapod(old, traj, fom, tol)
    rm = rb.project_operators(fom, basis) if basis.size != old.size else state.rm
    while rm is not None and tol > 1e-10:
        if _certify(rm, mu, rb.solve_reduced(rm, mu)) <= state.config.tolerance:
            break
        tol /= 10
        finer = rb.extend_basis_hapod(basis, traj, fom, tol)
        if finer.size != basis.size:
            basis = finer
            rm = rb.project_operators(fom, basis)

    if state.audit_dir is not None:
        state.audit_dir.mkdir(parents=True, exist_ok=True)
        fom_mod.save_trajectory(state.audit_dir / f"fom_{len(state.log):06d}.trj", traj)

    if basis.size != old.size:
        state.rm = rm
        state.ml = None
        state.train_X.clear()
        state.train_Y.clear()
        state.new_since_training = 0
        state.queries_since_training = 0
        state.ml_since_training = 0
        state.retraining_frozen = False
    return state


def maybe_retrain(state: HierarchyState) -> HierarchyState:
    cfg = state.config
    if cfg.ml_backend == "none" or state.retraining_frozen or state.rm is None:
        return state
    if state.ml is not None and state.queries_since_training >= cfg.retrain_batch:
        if state.ml_ratio_since_training() >= cfg.stop_ratio:
            state.retraining_frozen = True
            log.info("ML ratio %.3f reached, retraining frozen", state.ml_ratio_since_training())
            return state
    if state.new_since_training < cfg.retrain_batch:
        return state

    rm = state.rm
    X, Y = training_arrays(state.train_X, state.train_Y, cfg.time_mode, rm.num_steps, rm.size)
    Ys, mean, scale = standardize(Y)
    seed = cfg.seed + 7919 * (state.n_trainings + 1)
    t0 = time.perf_counter()
    try:
        model = train_backend(cfg, X, Ys, seed)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("ML training failed, keeping previous model: %s", exc)
        return state
    duration = time.perf_counter() - t0
    state.ml = MlRom(model, cfg.time_mode, rm.num_steps, rm.size, mean, scale)
    state.trainings.append({
        "query_index": len(state.log),
        "n_samples": len(state.train_X),
        "n_rb": rm.size,
        "duration_s": duration,
    })
    state.n_trainings += 1
    state.new_since_training = 0
    state.queries_since_training = 0
    state.ml_since_training = 0
    return state
