import csv
import io

import numpy as np
import pytest

from cholupdate import ExperimentConfig, Impl, PanelParams, Precision, Sigma, chol_factor, gen_instance, run_trial
from cholupdate.harness import TrialError, run_sweep, splitmix64, uniform


def test_splitmix_reference_sequence():
    # published SplitMix64 outputs for seed 1234567
    assert splitmix64(1234567, 4).tolist() == [
        6457827717110365317, 3203168211198807973, 9817491932198370423, 4593380528125082431,
    ]
    assert splitmix64(0, 1).tolist() == [0xE220A8397B1DCDAF]


def test_splitmix_offsets_continue_stream():
    full = splitmix64(7, 10)
    assert np.array_equal(splitmix64(7, 4, start=6), full[6:])


def test_uniform_range_and_resolution():
    d = uniform(3, 10000, Precision.DOUBLE)
    f = uniform(3, 10000, Precision.SINGLE)
    assert d.dtype == np.float64 and f.dtype == np.float32
    assert (d >= 0).all() and (d < 1).all() and (f >= 0).all() and (f < 1).all()
    assert np.all(d * 2.0**53 == np.floor(d * 2.0**53))
    assert np.all(f.astype(np.float64) * 2.0**24 == np.floor(f.astype(np.float64) * 2.0**24))
    # both come from the same top bits
    np.testing.assert_array_equal(np.floor(d * 2**24), f.astype(np.float64) * 2**24)


def test_instance_deterministic():
    cfg = ExperimentConfig(20, 3, seed=11)
    a, b = gen_instance(cfg), gen_instance(cfg)
    assert a.A == b.A and a.L == b.L and a.V == b.V and a.A_target == b.A_target


def test_instance_stream_order():
    n, k = 4, 2
    inst = gen_instance(ExperimentConfig(n, k, seed=5))
    u = uniform(5, n * n + n * k, Precision.DOUBLE)
    b = u[: n * n].reshape(n, n, order="F")
    np.testing.assert_array_equal(inst.V.to_array(), u[n * n:].reshape(n, k, order="F"))
    g = b.T @ b + np.eye(n)
    np.testing.assert_allclose(inst.A.to_array(), g, rtol=1e-15)


def test_downdate_instance_construction():
    up = gen_instance(ExperimentConfig(16, 4, direction=Sigma.UPDATE, seed=2))
    down = gen_instance(ExperimentConfig(16, 4, direction=Sigma.DOWNDATE, seed=2))
    assert down.A_target == up.A
    assert down.A == up.A_target
    assert down.V == up.V


@pytest.mark.parametrize("precision", list(Precision))
def test_instance_spd(precision):
    inst = gen_instance(ExperimentConfig(64, 2, precision=precision, seed=8))
    a = inst.A.to_array()
    assert np.array_equal(a, a.T)
    L = chol_factor(inst.A_target)
    assert (L.diagonal() > 0).all()
    # A >= I, so every pivot is at least 1 up to rounding
    assert inst.L.diagonal().min() > 1 - 64 * np.finfo(precision.dtype).eps


def test_trial_2x2():
    res = run_trial(ExperimentConfig(2, 1, seed=42, impl=Impl.SERIAL_B))
    assert res.error_maxabs <= 4 * np.finfo(float).eps * 4


def test_panelled_matches_rank_k():
    base = dict(n=60, k=5, seed=9, params=PanelParams(2, 4, 2, 2))
    a = run_trial(ExperimentConfig(impl=Impl.RANK_K, **base))
    b = run_trial(ExperimentConfig(impl=Impl.PANELLED, **base))
    assert a.error_maxabs == b.error_maxabs
    assert a.op_counts.computes == b.op_counts.computes and a.op_counts.applies == b.op_counts.applies
    assert a.factor == b.factor


def test_all_impls_same_error():
    errs = {impl: run_trial(ExperimentConfig(33, 3, seed=4, impl=impl, params=PanelParams(1, 5, 2, 2))).error_maxabs
            for impl in Impl}
    assert len(set(errs.values())) == 1


def test_repetitions():
    res = run_trial(ExperimentConfig(16, 2, repetitions=3))
    assert len(res.wall_times) == 3 and all(t > 0 for t in res.wall_times)


def test_trial_error_context():
    cfg = ExperimentConfig(8, 1, direction=Sigma.DOWNDATE, seed=1)
    inst = gen_instance(cfg)
    inst.V.data[:] *= 50
    with pytest.raises(TrialError, match="seed=1"):
        run_trial(cfg, inst)


def test_sweep_single_cell():
    text = run_sweep(ExperimentConfig(2, 1), [2], [Impl.RANK_K])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 1
    assert rows[0]["error"] == ""
    assert text.splitlines()[0] == "n,k,precision,direction,impl,median_time_s,error_maxabs,applies,bytes_L_written,error"


def test_sweep_records_errors_and_continues():
    base = ExperimentConfig(4, 1, params=PanelParams(1, 1, 1, 1))
    rows = list(csv.DictReader(io.StringIO(run_sweep(base, [4, 6], [Impl.RANK_K, Impl.SERIAL_A]))))
    assert [(int(r["n"]), r["impl"]) for r in rows] == [(4, "rank-k"), (4, "serial-a"), (6, "rank-k"), (6, "serial-a")]
    assert all(r["error"] == "" for r in rows)


def test_sweep_float_digits():
    d = list(csv.DictReader(io.StringIO(run_sweep(ExperimentConfig(10, 2, seed=3), [10], [Impl.RANK_K]))))[0]
    f = list(csv.DictReader(io.StringIO(run_sweep(
        ExperimentConfig(10, 2, precision=Precision.SINGLE, seed=3), [10], [Impl.RANK_K]))))[0]
    assert float(d["error_maxabs"]) == float(f"{float(d['error_maxabs']):.17g}")
    assert len(f["error_maxabs"].replace(".", "").replace("e-", "").lstrip("0")) <= 12


def test_sweep_rejects_empty():
    with pytest.raises(ValueError):
        run_sweep(ExperimentConfig(2, 1), [], [Impl.RANK_K])


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(4, 1, repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(0, 1)
