import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmlrom import cli, driver, oracles
from rbmlrom import hierarchy as H
from rbmlrom.driver import McAccumulator, RunConfig, welford_update
from rbmlrom.param_space import sample


def small_cfg(tmp_path, **kw):
    d = {"grid_n": 10, "num_steps": 20, "n_mc": 60, "seed": 2, "out_dir": str(tmp_path / "run")}
    d.update(kw)
    return RunConfig.from_dict(d)


def test_welford_small_examples():
    acc = McAccumulator()
    for v in (1.0, 2.0, 3.0):
        acc = welford_update(acc, v)
    assert acc.mean == 2.0 and acc.variance == 1.0
    one = welford_update(McAccumulator(), 4.5)
    assert one.mean == 4.5 and one.m2 == 0.0 and one.variance is None


def test_welford_rejects_non_finite():
    acc = welford_update(welford_update(McAccumulator(), 1.0), np.nan)
    acc = welford_update(acc, np.inf)
    assert acc.n == 1 and acc.rejected == 2 and acc.mean == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200))
def test_welford_matches_two_pass(values):
    acc = McAccumulator()
    for v in values:
        acc = welford_update(acc, v)
    mean, var = oracles.two_pass_mean_var(values)
    scale = max(np.abs(values).max(), 1.0)
    assert acc.mean == pytest.approx(mean, abs=1e-12 * scale)
    assert acc.variance == pytest.approx(var, rel=1e-10, abs=1e-12 * scale**2)


def test_welford_stable_on_offset_data():
    vals = 1e3 + 1e-3 * np.random.default_rng(0).normal(size=10**5)
    acc = McAccumulator()
    for v in vals:
        acc = welford_update(acc, v)
    mean, var = oracles.two_pass_mean_var(vals)
    assert abs(acc.variance - var) <= 1e-10 * var


def test_single_sample_run(tmp_path):
    rep = driver.run_monte_carlo(small_cfg(tmp_path, n_mc=1))
    assert rep["variance"] is None
    _, rows = driver.read_query_log(tmp_path / "run" / "queries.csv")
    assert rep["mean"] == float(rows[0]["f_bar"])


def test_exact_fom_run_matches_two_pass(tmp_path):
    cfg = small_cfg(tmp_path, n_mc=100, mode="fom")
    rep = driver.run_monte_carlo(cfg)
    _, rows = driver.read_query_log(tmp_path / "run" / "queries.csv")
    assert {r["provenance"] for r in rows} == {"FOM"}
    mean, var = oracles.two_pass_mean_var([float(r["f_bar"]) for r in rows])
    assert rep["mean"] == pytest.approx(mean, rel=1e-12)
    assert rep["variance"] == pytest.approx(var, rel=1e-12)


def test_summary_reconciles_with_log(tmp_path):
    rep = driver.run_monte_carlo(small_cfg(tmp_path))
    cols, rows = driver.read_query_log(tmp_path / "run" / "queries.csv")
    assert sum(rep["counts"].values()) == rep["n_mc"] == len(rows) == 60
    for p in H.PROVENANCES:
        assert rep["counts"][p] == sum(r["provenance"] == p for r in rows)
    assert cols[:2] == ["index", "mu_0"] and "f_bar" in cols and "estimated_bound" in cols
    first = (tmp_path / "run" / "queries.csv").read_text().splitlines()[0]
    assert first == driver.CSV_HEADER_COMMENT
    assert json.loads((tmp_path / "run" / "summary.json").read_text())["counts"] == rep["counts"]
    assert (tmp_path / "run" / "state" / "manifest.json").exists()
    assert driver.summarize_log(rows)["counts"] == rep["counts"]


def test_run_is_deterministic(tmp_path):
    driver.run_monte_carlo(small_cfg(tmp_path, out_dir=str(tmp_path / "a")))
    driver.run_monte_carlo(small_cfg(tmp_path, out_dir=str(tmp_path / "b")))
    a = driver.deterministic_view(tmp_path / "a" / "queries.csv")
    b = driver.deterministic_view(tmp_path / "b" / "queries.csv")
    assert a == b and len(a) == 60


def test_empty_state_roundtrip(tmp_path):
    cfg = small_cfg(tmp_path)
    st0 = driver.build_state(cfg)
    driver.save_state(st0, tmp_path / "s")
    st1 = driver.load_state(tmp_path / "s")
    assert st1.rm is None and st1.ml is None and not st1.log and not st1.train_X
    assert st1.config.to_dict() == st0.config.to_dict()
    assert st1.fom.spec == st0.fom.spec


def test_replay_after_reload(tmp_path):
    cfg = small_cfg(tmp_path, ml_backend="vkoga")
    mus = sample(cfg.domain, cfg.seed, 120)
    ref = driver.build_state(cfg)
    driver.run_queries(ref, mus)
    part = driver.build_state(cfg)
    driver.run_queries(part, mus[:60])
    driver.save_state(part, tmp_path / "s")
    resumed = driver.load_state(tmp_path / "s")
    driver.run_queries(resumed, mus[60:])
    assert ref.n_trainings >= 1
    for a, b in zip(ref.log, resumed.log):
        assert (a.provenance, a.estimated_bound, a.f_bar, a.n_rb) == (
            b.provenance, b.estimated_bound, b.f_bar, b.n_rb)
        assert np.array_equal(a.output, b.output)


def test_wrong_magic_raises_without_state(tmp_path):
    st0 = driver.build_state(small_cfg(tmp_path))
    d = driver.save_state(st0, tmp_path / "s")
    man = json.loads((d / "manifest.json").read_text())
    man["magic"] = "NOPE"
    (d / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(driver.StateLoadError):
        driver.load_state(d)
    man["magic"], man["version"] = driver.STATE_MAGIC, 99
    (d / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(driver.StateLoadError):
        driver.load_state(d)


def test_corrupt_state_files(tmp_path):
    st0 = driver.build_state(small_cfg(tmp_path))
    d = driver.save_state(st0, tmp_path / "s")
    (d / "log.json").write_text("{not json")
    with pytest.raises(driver.StateLoadError):
        driver.load_state(d)
    with pytest.raises(driver.StateLoadError):
        driver.load_state(tmp_path / "missing")


def test_config_parsing(tmp_path):
    cfg = RunConfig.from_dict({"param_dim": 6, "lower": [0.5] * 4 + [0, 0],
                               "upper": [2] * 4 + [1, 1], "seed": 9, "ml_backend": "sdkn"})
    assert cfg.seed == 9 and cfg.hierarchy.seed == 9 and cfg.hierarchy.retrain_batch == 200
    back = RunConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        RunConfig.from_dict({"n_mc": 0})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"typo": 1})
    with pytest.raises(ValueError):
        RunConfig.from_dict({"param_dim": 5})
    over = cfg.with_overrides(seed=3, backend="vkoga")
    assert over.seed == 3 and over.hierarchy.ml_backend == "vkoga"
    assert over.hierarchy.retrain_batch == 40


def test_bad_query_log(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("index,f_bar\n0,1.0\n")
    with pytest.raises(ValueError):
        driver.read_query_log(p)


# -- CLI -----------------------------------------------------------------------

def run_cli(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid_n": 10, "num_steps": 20, "n_mc": 30}))
    code, out, _ = run_cli(["run", "--config", str(cfg), "--out", str(tmp_path / "r"),
                            "--seed", "4", "--backend", "vkoga"], capsys)
    assert code == 0
    res = json.loads(out)
    assert sum(res["counts"].values()) == 30
    summ = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summ["config"]["seed"] == 4 and summ["config"]["ml_backend"] == "vkoga"
    code, out, err = run_cli(["report", str(tmp_path / "r")], capsys)
    assert code == 0 and json.loads(out)["counts"] == res["counts"]
    assert "FOM" in err


def test_cli_fom_solve(tmp_path, capsys):
    code, out, _ = run_cli(["fom-solve", "--out", str(tmp_path), "--mu", "1,1,1,1,0.5,0.5"],
                           capsys)
    assert code == 0
    from rbmlrom.fom import load_trajectory
    traj = load_trajectory(json.loads(out)["trajectory"])
    assert traj.coeffs.shape == (101, 32 * 32)


def test_cli_train_ml(tmp_path, capsys):
    cfg = small_cfg(tmp_path, n_mc=60)
    driver.run_monte_carlo(cfg)
    state_dir = tmp_path / "run" / "state"
    n_buffer = len(driver.load_state(state_dir).train_X)
    assert n_buffer > 0
    code, out, _ = run_cli(["train-ml", "--state", str(state_dir),
                            "--out", str(tmp_path / "ml"), "--backend", "vkoga"], capsys)
    assert code == 0 and json.loads(out)["n_samples"] == n_buffer
    doc = json.loads((tmp_path / "ml" / "ml_rom.json").read_text())
    assert H.MlRom.from_dict(doc).model.n_centers >= 1


def test_cli_errors_are_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    code, _, err = run_cli(["run", "--config", str(bad)], capsys)
    assert code == 1
    assert json.loads(err)["type"] == "ValueError"
    code, _, err = run_cli(["fom-solve", "--mu", "1,2"], capsys)
    assert code == 1 and "error" in json.loads(err)
    code, _, err = run_cli(["train-ml"], capsys)
    assert code == 1 and "error" in json.loads(err)


def test_cli_selftest(capsys):
    code, out, _ = run_cli(["selftest"], capsys)
    assert code == 0
    assert all(v["passed"] for v in json.loads(out).values())
