"""Monte Carlo driver: configuration, the query loop, statistics and persistence."""

from __future__ import annotations

import csv
import json
import logging
import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fom as fom_mod
from . import hierarchy, rb
from .hierarchy import HierarchyConfig, HierarchyState, MlRom, QueryRecord
from .param_space import ParameterDomain, default_domain, sample

log = logging.getLogger(__name__)

CSV_VERSION = 1
CSV_HEADER_COMMENT = f"# rbmlrom query log v{CSV_VERSION}"
TIMING_COLUMNS = ("wall_time_s", "ml_time_s", "rb_time_s", "fom_time_s", "build_time_s")
STATE_MAGIC = "RBMLROM-STATE"
STATE_VERSION = 1
RUN_MODES = ("hierarchy", "fom")

_FOM_KEYS = ("grid_n", "blocks", "heaters", "T", "num_steps", "output_block", "source_scale",
             "heater_regions")
_HIER_KEYS = ("tolerance", "ml_backend", "retrain_batch", "stop_ratio", "time_mode", "tol_pod",
              "kernel_family", "kernel_epsilon", "max_centers", "two_layer", "sdkn_width",
              "sdkn_centers", "sdkn_train")


class StateLoadError(ValueError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass
class RunConfig:
    fom: fom_mod.FomSpec = field(default_factory=fom_mod.FomSpec)
    domain: ParameterDomain | None = None
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    n_mc: int = 500
    seed: int = 0
    out_dir: str = "run_out"
    mode: str = "hierarchy"

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        if self.mode not in RUN_MODES:
            raise ValueError(f"unknown run mode {self.mode!r}")
        if self.domain is None:
            self.domain = default_domain(self.fom.blocks, self.fom.heaters)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Build from a flat JSON object; unknown keys are an error."""
        known = set(_FOM_KEYS) | set(_HIER_KEYS) | {
            "param_dim", "lower", "upper", "density", "seed", "n_mc", "out_dir", "mode"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {unknown}")
        spec = fom_mod.FomSpec.from_dict({k: d[k] for k in _FOM_KEYS if k in d})
        if "lower" in d or "upper" in d:
            domain = ParameterDomain.from_dict(d)
        else:
            domain = default_domain(spec.blocks, spec.heaters)
            if "param_dim" in d and int(d["param_dim"]) != domain.dim:
                raise ValueError(f"param_dim={d['param_dim']} does not match the default domain")
        seed = int(d.get("seed", 0))
        hd = {k: d[k] for k in _HIER_KEYS if k in d}
        hd["seed"] = seed
        return cls(spec, domain, HierarchyConfig.from_dict(hd), int(d.get("n_mc", 500)), seed,
                   str(d.get("out_dir", "run_out")), str(d.get("mode", "hierarchy")))

    def to_dict(self) -> dict:
        out = self.fom.to_dict()
        out.update(self.domain.to_dict())
        h = self.hierarchy.to_dict()
        h.pop("seed")
        out.update(h)
        out.update(seed=self.seed, n_mc=self.n_mc, out_dir=self.out_dir, mode=self.mode)
        return out

    def with_overrides(self, seed=None, backend=None, out_dir=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), hierarchy=replace(cfg.hierarchy, seed=int(seed)))
        if backend is not None:
            hd = cfg.hierarchy.to_dict()
            hd["ml_backend"] = backend
            if backend != self.hierarchy.ml_backend:
                hd.pop("retrain_batch")  # re-derive the per-backend default
            cfg = replace(cfg, hierarchy=HierarchyConfig.from_dict(hd))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


# -- Monte Carlo statistics ----------------------------------------------------

@dataclass(frozen=True)
class McAccumulator:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    rejected: int = 0

    @property
    def variance(self) -> float | None:
        """Sample variance, ``None`` below two values."""
        return self.m2 / (self.n - 1) if self.n >= 2 else None


def welford_update(acc: McAccumulator, value) -> McAccumulator:
    v = float(value)
    if not math.isfinite(v):
        return replace(acc, rejected=acc.rejected + 1)
    n = acc.n + 1
    delta = v - acc.mean
    mean = acc.mean + delta / n
    return McAccumulator(n, mean, acc.m2 + delta * (v - mean), acc.rejected)


# -- query log -----------------------------------------------------------------

def csv_columns(param_dim: int) -> list:
    return (["index"] + [f"mu_{i}" for i in range(param_dim)]
            + ["provenance", "estimated_bound", "wall_time_s", "f_bar",
               "ml_time_s", "rb_time_s", "fom_time_s", "build_time_s", "n_rb"])


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_row(rec: QueryRecord) -> list:
    bound = "" if rec.estimated_bound is None else _fmt(rec.estimated_bound)
    return ([rec.index] + [_fmt(m) for m in rec.mu]
            + [rec.provenance, bound, _fmt(rec.wall_time), _fmt(rec.f_bar),
               _fmt(rec.ml_time), _fmt(rec.rb_time), _fmt(rec.fom_time), _fmt(rec.build_time),
               rec.n_rb])


class QueryLogWriter:
    """Append-only CSV writer, flushed after every record."""

    def __init__(self, path, param_dim: int, append: bool = False):
        self.path = Path(path)
        fresh = not (append and self.path.exists())
        self._fh = self.path.open("w" if fresh else "a", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._fh.write(CSV_HEADER_COMMENT + "\n")
            self._w.writerow(csv_columns(param_dim))
            self._fh.flush()

    def write(self, rec: QueryRecord):
        self._w.writerow(csv_row(rec))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_query_log(path) -> tuple:
    """Return ``(columns, rows)`` of a query log, checking its version line."""
    with Path(path).open(newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != CSV_HEADER_COMMENT:
            raise ValueError(f"{path}: not a version-{CSV_VERSION} query log")
        reader = csv.reader(fh)
        cols = next(reader)
        rows = [dict(zip(cols, r)) for r in reader]
    return cols, rows


def deterministic_view(path) -> list:
    """Query-log rows without the timing columns, for run-to-run comparison."""
    cols, rows = read_query_log(path)
    keep = [c for c in cols if c not in TIMING_COLUMNS]
    return [[r[c] for c in keep] for r in rows]


def summarize_log(rows: list) -> dict:
    """Table-shaped summary from query-log rows (dicts of strings)."""
    acc = McAccumulator()
    counts = {p: 0 for p in hierarchy.PROVENANCES}
    times = {p: 0.0 for p in hierarchy.PROVENANCES}
    for r in rows:
        acc = welford_update(acc, float(r["f_bar"]))
        counts[r["provenance"]] += 1
        times[r["provenance"]] += float(r["wall_time_s"])
    avg = {p: (times[p] / counts[p] if counts[p] else None) for p in counts}
    return {
        "n_queries": len(rows),
        "mean": acc.mean if acc.n else None,
        "variance": acc.variance,
        "n_rejected": acc.rejected,
        "counts": counts,
        "avg_time_s": avg,
    }


def format_report(summary: dict) -> str:
    lines = [f"{'tier':<6}{'evals':>8}{'avg time (s)':>16}"]
    for p in hierarchy.PROVENANCES:
        t = summary["avg_time_s"][p]
        lines.append(f"{p:<6}{summary['counts'][p]:>8}{'-' if t is None else f'{t:.3e}':>16}")
    var = summary["variance"]
    lines.append(f"E[f_bar] = {summary['mean']!r}")
    lines.append(f"Var[f_bar] = {'n/a' if var is None else repr(var)}")
    return "\n".join(lines)


# -- running -------------------------------------------------------------------

def build_state(cfg: RunConfig, audit_dir=None) -> HierarchyState:
    fom = fom_mod.assemble(cfg.fom)
    return hierarchy.new_state(fom, cfg.domain, cfg.hierarchy, audit_dir=audit_dir)


def fom_query(state: HierarchyState, mu) -> QueryRecord:
    """Exact FOM answer recorded like a hierarchy query."""
    mu = np.asarray(mu, dtype=float)
    t0 = time.perf_counter()
    traj = fom_mod.solve(state.fom, mu)
    out = fom_mod.output(state.fom, traj)
    dt = time.perf_counter() - t0
    rec = QueryRecord(len(state.log), mu.copy(), "FOM", None, dt, out,
                      fom_mod.time_average(out, state.fom.spec.T), fom_time=dt)
    state.log.append(rec)
    return rec


def run_queries(state: HierarchyState, mus, writer: QueryLogWriter | None = None,
                acc: McAccumulator | None = None, mode: str = "hierarchy") -> McAccumulator:
    acc = acc or McAccumulator()
    step = hierarchy.query if mode == "hierarchy" else fom_query
    for mu in mus:
        rec = step(state, mu)
        if writer is not None:
            writer.write(rec)
        acc = welford_update(acc, rec.f_bar)
    return acc


def summary(state: HierarchyState, acc: McAccumulator, cfg: RunConfig) -> dict:
    counts = {p: 0 for p in hierarchy.PROVENANCES}
    times = {p: 0.0 for p in hierarchy.PROVENANCES}
    for rec in state.log:
        counts[rec.provenance] += 1
        times[rec.provenance] += rec.wall_time
    return {
        "n_mc": len(state.log),
        "mean": acc.mean if acc.n else None,
        "variance": acc.variance,
        "n_rejected": acc.rejected,
        "counts": counts,
        "avg_time_s": {p: (times[p] / counts[p] if counts[p] else None) for p in counts},
        "trainings": list(state.trainings),
        "n_rb": state.n_rb,
        "config": cfg.to_dict(),
    }


def run_monte_carlo(cfg: RunConfig, out_dir=None) -> dict:
    """Full MC experiment; writes ``queries.csv``, ``summary.json`` and ``state/``."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = build_state(cfg, audit_dir=out / "trajectories")
    mus = sample(cfg.domain, cfg.seed, cfg.n_mc)
    with QueryLogWriter(out / "queries.csv", cfg.domain.dim) as w:
        acc = run_queries(state, mus, w, mode=cfg.mode)
    rep = summary(state, acc, cfg)
    (out / "summary.json").write_text(json.dumps(rep, indent=2))
    save_state(state, out / "state")
    return rep


def train_offline(state: HierarchyState, backend: str | None = None) -> MlRom:
    """Fit an ML-ROM on the state's training buffer."""
    if state.rm is None or not state.train_X:
        raise ValueError("state has no reduced model or an empty training buffer")
    cfg = state.config
    if backend is not None:
        hd = cfg.to_dict()
        hd.update(ml_backend=backend)
        cfg = HierarchyConfig.from_dict(hd)
    if cfg.ml_backend == "none":
        raise ValueError("backend 'none' cannot be trained")
    rm = state.rm
    X, Y = hierarchy.training_arrays(state.train_X, state.train_Y, cfg.time_mode,
                                     rm.num_steps, rm.size)
    Ys, mean, scale = hierarchy.standardize(Y)
    model = hierarchy.train_backend(cfg, X, Ys, cfg.seed)
    return MlRom(model, cfg.time_mode, rm.num_steps, rm.size, mean, scale)


# -- persistence ---------------------------------------------------------------

def _record_to_dict(r: QueryRecord) -> dict:
    return {
        "index": r.index, "mu": r.mu.tolist(), "provenance": r.provenance,
        "estimated_bound": r.estimated_bound, "wall_time": r.wall_time,
        "output": np.asarray(r.output).tolist(), "f_bar": r.f_bar, "ml_time": r.ml_time,
        "rb_time": r.rb_time, "fom_time": r.fom_time, "build_time": r.build_time,
        "n_rb": r.n_rb,
    }


def _record_from_dict(d: dict) -> QueryRecord:
    kw = dict(d)
    kw["mu"] = np.array(d["mu"], dtype=float)
    kw["output"] = np.array(d["output"], dtype=float)
    return QueryRecord(**kw)


def save_state(state: HierarchyState, directory) -> Path:
    """Write the state atomically: files go to a temp dir that is renamed."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".state-", dir=directory.parent))
    try:
        manifest = {
            "magic": STATE_MAGIC,
            "version": STATE_VERSION,
            "fom_spec": state.fom.spec.to_dict(),
            "domain": state.domain.to_dict(),
            "config": state.config.to_dict(),
            "new_since_training": state.new_since_training,
            "queries_since_training": state.queries_since_training,
            "ml_since_training": state.ml_since_training,
            "retraining_frozen": state.retraining_frozen,
            "n_trainings": state.n_trainings,
            "trainings": state.trainings,
            "audit_dir": None if state.audit_dir is None else str(state.audit_dir),
            "has_rm": state.rm is not None,
            "has_ml": state.ml is not None,
            "n_train": len(state.train_X),
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
        if state.rm is not None:
            state.rm.save(tmp / "reduced_model.json")
        if state.ml is not None:
            (tmp / "ml_rom.json").write_text(json.dumps(state.ml.to_dict()))
        y_width = 0 if state.rm is None else state.rm.num_steps * state.rm.size
        np.savez(tmp / "buffer.npz",
                 X=np.array(state.train_X, dtype=float).reshape(len(state.train_X), state.domain.dim),
                 Y=np.array(state.train_Y, dtype=float).reshape(len(state.train_Y), y_width))
        (tmp / "log.json").write_text(json.dumps([_record_to_dict(r) for r in state.log]))
        if directory.exists():
            shutil.rmtree(directory)
        tmp.rename(directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def load_state(directory) -> HierarchyState:
    """Inverse of :func:`save_state`. Raises :class:`StateLoadError` and
    returns nothing on any inconsistency."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StateLoadError(f"cannot read state manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("magic") != STATE_MAGIC:
        raise StateLoadError("state manifest has a wrong magic header")
    if manifest.get("version") != STATE_VERSION:
        raise StateLoadError(f"unsupported state version {manifest.get('version')!r}")
    try:
        spec = fom_mod.FomSpec.from_dict(manifest["fom_spec"])
        domain = ParameterDomain.from_dict(manifest["domain"])
        config = HierarchyConfig.from_dict(manifest["config"])
        rm = rb.ReducedModel.load(directory / "reduced_model.json") if manifest["has_rm"] else None
        ml = None
        if manifest["has_ml"]:
            ml = MlRom.from_dict(json.loads((directory / "ml_rom.json").read_text()))
        with np.load(directory / "buffer.npz") as buf:
            X, Y = buf["X"], buf["Y"]
        if X.shape[0] != manifest["n_train"] or Y.shape[0] != X.shape[0]:
            raise StateLoadError("training buffer does not match the manifest")
        records = [_record_from_dict(d) for d in json.loads((directory / "log.json").read_text())]
        fom = fom_mod.assemble(spec)
        state = hierarchy.new_state(fom, domain, config, audit_dir=manifest["audit_dir"])
    except StateLoadError:
        raise
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise StateLoadError(f"corrupt state: {exc}") from exc
    state.rm = rm
    state.ml = ml
    state.train_X = [x.copy() for x in X]
    state.train_Y = [y.copy() for y in Y]
    state.new_since_training = int(manifest["new_since_training"])
    state.queries_since_training = int(manifest["queries_since_training"])
    state.ml_since_training = int(manifest["ml_since_training"])
    state.retraining_frozen = bool(manifest["retraining_frozen"])
    state.n_trainings = int(manifest["n_trainings"])
    state.trainings = list(manifest["trainings"])
    state.log = records
    return state
