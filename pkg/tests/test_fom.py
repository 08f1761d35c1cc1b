import tempfile
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmlrom import fom as fom_mod
from rbmlrom.fom import ConfigurationError, FomSpec


def one_dof(scale=1.0):
    return fom_mod.assemble(FomSpec(grid_n=1, blocks=1, heaters=1, num_steps=1, output_block=0,
                                    heater_regions=((0.0, 1.0, 0.0, 1.0),), source_scale=scale))


def test_one_dof_matrices():
    m = one_dof()
    assert m.n_dofs == 1
    assert m.A_blocks[0].toarray()[0, 0] == 4.0
    assert m.M.toarray()[0, 0] == 0.25


def test_one_dof_step():
    m = one_dof(scale=3.0)
    a, g, dt = 2.0, 0.7, m.dt
    u = fom_mod.solve(m, [a, g]).coeffs
    assert u[1, 0] == pytest.approx(dt * g * 3.0 * 0.25 / (0.25 + dt * a * 4.0), rel=1e-14)


@pytest.mark.parametrize("n,B", [(4, 1), (7, 4), (9, 9), (32, 4)])
def test_blocks_sum_to_laplacian(n, B):
    heaters = 1 if n >= 7 else 0
    m = fom_mod.assemble(FomSpec(grid_n=n, blocks=B, heaters=heaters, output_block=0))
    diff = (m.G - fom_mod.laplacian(n)).toarray()
    assert np.abs(diff).max() <= 1e-12


def test_matrix_properties():
    m = fom_mod.assemble(FomSpec(grid_n=8))
    for A in m.A_blocks:
        Ad = A.toarray()
        np.testing.assert_array_equal(Ad, Ad.T)
        assert np.linalg.eigvalsh(Ad).min() > -1e-12
    assert np.linalg.eigvalsh(m.G.toarray()).min() > 0
    assert m.s_vec @ np.ones(m.n_dofs) == pytest.approx(1.0, abs=1e-14)


def test_zero_heaters_give_zero_trajectory():
    m = fom_mod.assemble(FomSpec(grid_n=8, num_steps=10))
    u = fom_mod.solve(m, [1.0, 2.0, 0.5, 1.5, 0.0, 0.0]).coeffs
    assert not u.any()


def test_free_decay_is_monotone_and_faster_for_larger_diffusion():
    m = fom_mod.assemble(FomSpec(grid_n=10, num_steps=30))
    u0 = np.random.default_rng(0).random(m.n_dofs)
    mu = np.array([0.5, 1.0, 1.5, 2.0, 0.0, 0.0])
    norms = []
    for scale in (1.0, 2.0):
        U = fom_mod.solve(m, mu * np.r_[np.full(4, scale), 1.0, 1.0], u0=u0).coeffs
        norms.append(np.sqrt(np.einsum("ki,ki->k", U, (m.M @ U.T).T)))
    for nrm in norms:
        assert np.all(np.diff(nrm) <= 1e-14)
    assert np.all(norms[1][1:] < norms[0][1:])


def test_output_examples():
    m = fom_mod.assemble(FomSpec(grid_n=8, num_steps=5))
    zero = fom_mod.Trajectory(np.zeros((6, m.n_dofs)), None)
    np.testing.assert_array_equal(fom_mod.output(m, zero), 0.0)
    ones = fom_mod.Trajectory(np.ones((6, m.n_dofs)), None)
    np.testing.assert_allclose(fom_mod.output(m, ones), 1.0, rtol=1e-14)
    traj = fom_mod.solve(m, [1.0, 0.7, 1.3, 0.9, 0.4, 0.8])
    dense = np.array([sum(m.s_vec[i] * u[i] for i in range(m.n_dofs)) for u in traj.coeffs])
    np.testing.assert_allclose(fom_mod.output(m, traj), dense, rtol=1e-12)
    with pytest.raises(ValueError):
        fom_mod.output(m, fom_mod.Trajectory(np.zeros((6, 3)), None))


def test_time_average_examples():
    assert fom_mod.time_average(np.full(11, 2.5)) == pytest.approx(2.5)
    assert fom_mod.time_average([0.0, 1.0]) == 0.5
    K = 7
    assert fom_mod.time_average(np.arange(K + 1.0)) == pytest.approx(K / 2)
    assert fom_mod.time_average([3.0, 3.0], T=4.0) == pytest.approx(3.0)


def test_solve_is_bit_stable():
    m = fom_mod.assemble(FomSpec(grid_n=8, num_steps=10))
    mu = [0.8, 1.2, 1.9, 0.6, 0.3, 0.9]
    assert np.array_equal(fom_mod.solve(m, mu).coeffs, fom_mod.solve(m, mu).coeffs)


def test_implicit_euler_recursion():
    m = fom_mod.assemble(FomSpec(grid_n=6, num_steps=4))
    mu = np.array([1.1, 0.6, 1.7, 0.9, 0.5, 0.2])
    U = fom_mod.solve(m, mu).coeffs
    A, M = m.stiffness(mu).toarray(), m.M.toarray()
    f = m.source(mu)
    for k in range(1, 5):
        r = (M + m.dt * A) @ U[k] - M @ U[k - 1] - m.dt * f
        assert np.abs(r).max() < 1e-14


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        FomSpec(blocks=3)
    with pytest.raises(ConfigurationError):
        FomSpec(num_steps=0)
    with pytest.raises(ConfigurationError):
        FomSpec(T=0.0)
    with pytest.raises(ConfigurationError):
        fom_mod.assemble(FomSpec(grid_n=1))  # the single node misses both heaters


def test_spec_roundtrip():
    spec = FomSpec(grid_n=12, heaters=1, heater_regions=((0.1, 0.4, 0.1, 0.4),))
    assert FomSpec.from_dict(spec.to_dict()) == spec


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_trajectory_file_roundtrip(k, n, seed):
    U = np.random.default_rng(seed).normal(size=(k, n))
    path = Path(tempfile.mkdtemp()) / "t.trj"
    fom_mod.save_trajectory(path, fom_mod.Trajectory(U, None))
    assert np.array_equal(fom_mod.load_trajectory(path).coeffs, U)
    raw = path.read_bytes()
    assert raw[:6] == b"CRTRJ1"
    assert int.from_bytes(raw[6:14], "little") == k and int.from_bytes(raw[14:22], "little") == n


def test_trajectory_file_errors(tmp_path):
    p = tmp_path / "bad.trj"
    p.write_bytes(b"XXXXXX" + bytes(16))
    with pytest.raises(ValueError):
        fom_mod.load_trajectory(p)
    fom_mod.save_trajectory(p, fom_mod.Trajectory(np.ones((2, 2)), None))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        fom_mod.load_trajectory(p)


def test_matrices_are_sparse():
    m = fom_mod.assemble(FomSpec())
    assert sp.issparse(m.G) and m.G.nnz <= 5 * m.n_dofs
