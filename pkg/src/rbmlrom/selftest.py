"""Oracle-backed self checks.

Every ``check_*`` function returns a dict with a boolean ``passed`` and the
measured quantities. Sizes are arguments so that the quick ``selftest`` run
and the full acceptance suite share one implementation.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as la

from . import fom as fom_mod
from . import kernels, oracles, rb, sdkn, vkoga
from .driver import McAccumulator, welford_update
from .optim import fd_gradient
from .param_space import default_domain, sample


def _rel(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _training_basis(fom, domain, n_train: int, tol: float, seed: int) -> rb.ReducedModel:
    basis = rb.ReducedBasis.empty(fom.n_dofs)
    for mu in sample(domain, seed, n_train):
        basis = rb.extend_basis_hapod(basis, fom_mod.solve(fom, mu), fom, tol)
    return rb.project_operators(fom, basis)


def check_estimator_rigor(grid_n=32, n_mu=50, n_train=4, tol_pod=1e-2, seed=11) -> dict:
    """Output bound of the RB solve versus the true error against the FOM."""
    fom = fom_mod.assemble(fom_mod.FomSpec(grid_n=grid_n))
    domain = default_domain()
    rm = _training_basis(fom, domain, n_train, tol_pod, seed)
    eff = []
    violations = 0
    for mu in sample(domain, seed + 1, n_mu):
        rt = rb.solve_reduced(rm, mu)
        bound = rb.output_bound(rm, rb.estimate_error(rm, mu, rt))
        f_h = fom_mod.output(fom, fom_mod.solve(fom, mu))
        err = float(np.sqrt(fom.dt * np.sum((f_h[1:] - rb.reduced_output(rm, rt)[1:]) ** 2)))
        violations += bound < err
        eff.append(bound / err if err > 0 else np.inf)
    eff = np.array(eff)
    finite = eff[np.isfinite(eff)]
    return {"passed": violations == 0, "violations": int(violations), "n_rb": rm.size,
            "effectivity_min": float(finite.min()) if finite.size else None,
            "effectivity_max": float(finite.max()) if finite.size else None}


def check_full_rank(grid_n=6, n_mu=5, seed=3, tol=1e-8) -> dict:
    fom = fom_mod.assemble(fom_mod.FomSpec(grid_n=grid_n))
    L = la.cholesky(fom.G.toarray(), lower=True)
    V = la.solve_triangular(L, np.eye(fom.n_dofs), lower=True, trans="T")
    rm = rb.project_operators(fom, rb.ReducedBasis(V))
    errs = []
    for mu in sample(default_domain(), seed, n_mu):
        u = fom_mod.solve(fom, mu).coeffs
        errs.append(_rel(rb.lift(rm, rb.solve_reduced(rm, mu)), u))
    return {"passed": max(errs) <= tol, "max_rel_error": max(errs)}


def check_offline_online(grid_n=32, n_pairs=10, seed=5, tol=1e-9) -> dict:
    """Gram-based residual dual norms versus the dense full-space oracle."""
    fom = fom_mod.assemble(fom_mod.FomSpec(grid_n=grid_n))
    domain = default_domain()
    rm = _training_basis(fom, domain, 2, 1e-2, seed)
    rng = np.random.default_rng(seed)
    errs = []
    for mu in sample(domain, seed + 1, n_pairs):
        c = rng.normal(size=(rm.num_steps + 1, rm.size))
        c[0] = 0.0
        errs.append(_rel(rb.residual_dual_norms(rm, mu, c),
                         oracles.dense_residual_dual_norms(fom, rm, mu, c)))
    return {"passed": max(errs) <= tol, "max_rel_error": max(errs), "n_rb": rm.size}


def check_loo_gradient(seeds=range(20), tol=1e-5) -> dict:
    errs = []
    for s in seeds:
        rng = np.random.default_rng(s)
        d, m, b = 3, 8, 2
        X, Y = rng.random((m, d)), rng.normal(size=(m, b))
        A = np.eye(d) + 0.3 * rng.normal(size=(d, d))
        family = kernels.RBF_FAMILIES[s % 2]
        _, g = vkoga.loo_loss_and_grad(A, X, Y, family, reg=1e-6)
        fd = fd_gradient(lambda a: vkoga.loo_loss_and_grad(a, X, Y, family, 1e-6, False)[0], A)
        errs.append(_rel(g, fd))
    return {"passed": max(errs) <= tol, "max_rel_error": max(errs)}


def check_sdkn_gradient(seeds=range(20), tol=1e-5) -> dict:
    errs = []
    for s in seeds:
        rng = np.random.default_rng(s)
        X, Y = rng.random((6, 2)), rng.normal(size=(6, 2))
        model = sdkn.init(sdkn.SdknArchitecture([2, 4, 3, 2], n_centers=5, seed=s), X)
        params = model.trainables()
        _, grads = sdkn.backward(model, X, Y)
        for i, p in enumerate(params):
            def f(v, i=i):
                q = list(params)
                q[i] = v
                return sdkn.mse(model.with_trainables(q), X, Y)
            errs.append(_rel(grads[i], fd_gradient(f, p)))
    return {"passed": max(errs) <= tol, "max_rel_error": max(errs)}


def check_vkoga(seeds=range(10), n_points=30, tol=1e-8) -> dict:
    worst_interp, traces_equal, first_ok = 0.0, True, True
    for s in seeds:
        rng = np.random.default_rng(s)
        X = rng.random((n_points, 2))
        Y = np.column_stack([np.sin(3 * X[:, 0]) + X[:, 1], np.cos(2 * X @ [1.0, 0.5])])
        Y += 0.05 * rng.normal(size=Y.shape)
        kern = kernels.KernelConfig("quadratic_matern", 2.0)
        model = vkoga.fit(X, Y, kern, max_centers=n_points)
        worst_interp = max(worst_interp,
                           float(np.abs(model.predict(model.centers) - Y[list(model.trace)]).max()))
        first_ok &= model.trace[0] == int(np.argmax(np.linalg.norm(Y, axis=1)))
        traces_equal &= list(model.trace) == oracles.brute_force_greedy(X, Y, kern, len(model.trace))
    return {"passed": bool(worst_interp <= tol and traces_equal and first_ok),
            "max_interp_residual": worst_interp, "traces_equal": bool(traces_equal),
            "first_center_ok": bool(first_ok)}


def anisotropy_ratio(seed: int, n=640, d=6, family="gaussian") -> float:
    """sigma_1 / sigma_2 of the learned A on a target that only depends on x_1."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, d))
    Y = np.sin(4 * X[:, :1])
    A = vkoga.optimize_two_layer(X, Y, kernels.KernelConfig(family, 1.0), seed=seed)
    s = np.linalg.svd(A, compute_uv=False)
    return float(s[0] / s[1])


def check_anisotropy(seeds=(0, 1, 2), threshold=3.0) -> dict:
    ratios = [anisotropy_ratio(s) for s in seeds]
    return {"passed": min(ratios) > threshold, "ratios": ratios}


def check_welford(n=10**6, seed=0, tol=1e-10) -> dict:
    rng = np.random.default_rng(seed)
    values = 1e3 + 1e-3 * rng.normal(size=n)
    acc = McAccumulator()
    for v in values:
        acc = welford_update(acc, v)
    mean, var = oracles.two_pass_mean_var(values)
    rel_mean, rel_var = abs(acc.mean - mean) / abs(mean), abs(acc.variance - var) / var
    return {"passed": max(rel_mean, rel_var) <= tol, "rel_mean": rel_mean, "rel_var": rel_var}


QUICK = {
    "estimator_rigor": lambda: check_estimator_rigor(grid_n=12, n_mu=10),
    "full_rank": check_full_rank,
    "offline_online": lambda: check_offline_online(grid_n=12, n_pairs=3),
    "loo_gradient": lambda: check_loo_gradient(range(4)),
    "sdkn_gradient": lambda: check_sdkn_gradient(range(4)),
    "vkoga_greedy": lambda: check_vkoga(range(3)),
    "welford": lambda: check_welford(n=10**4),
}


def run(names=None) -> dict:
    """Run the quick oracle suite; returns ``{name: result}``."""
    out = {}
    for name in names or QUICK:
        try:
            out[name] = QUICK[name]()
        except Exception as exc:  # report, do not crash the suite
            out[name] = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
    return out
