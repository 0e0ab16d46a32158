import json

import numpy as np
import pytest

from streamqif.bench import TABLES, MethodRun, run_benchmark, run_cell, run_methods, summarize, table_cells
from streamqif.model import ModelSpec
from streamqif.simulate import SimConfig


def _stats(res):
    return [(lab, {k: (m.a_bias, m.ase, m.ese, m.cp, m.used_fraction) for k, m in ms.items()}) for lab, ms in res.cells]


def test_summarize_hand_values():
    est = np.array([[1.1, 2.0], [0.9, 2.2]])
    se = np.array([[0.1, 0.1], [0.1, 0.1]])
    m = summarize(est, se, [1.0, 2.0])
    assert abs(m.a_bias - (0.1 + 0.0 + 0.1 + 0.2) / 4) < 1e-15
    assert abs(m.ase - 0.1) < 1e-15
    assert abs(m.ese - np.mean([np.std([1.1, 0.9], ddof=1), np.std([2.0, 2.2], ddof=1)])) < 1e-15
    assert m.cp == 0.75
    one = summarize(est, se, [1.0, 2.0], coef=1, used=[90, 100], total=[100, 100])
    assert one.cp == 0.5 and one.used_fraction == 0.95


def test_reps_one_is_deterministic():
    a = run_benchmark("linear-fixed-N", reps=1, scale="smoke", seed=3)
    b = run_benchmark("linear-fixed-N", reps=1, scale="smoke", seed=3)
    assert _stats(a) == _stats(b)
    assert [lab for lab, _ in a.cells] == ["B=2", "B=5", "B=10"]


def test_parallel_matches_serial():
    cell = table_cells("linear-growing-B", "smoke")[0]
    serial = run_cell(cell, 3, seed=1, workers=1)["metrics"]
    par = run_cell(cell, 3, seed=1, workers=2)["metrics"]
    for k in serial:
        assert (serial[k].a_bias, serial[k].cp) == (par[k].a_bias, par[k].cp)


@pytest.mark.parametrize("table", TABLES)
def test_smoke_tables_run(tmp_path, table):
    res = run_benchmark(table, reps=1, scale="smoke", out_dir=tmp_path)
    assert (tmp_path / f"{table}.json").exists()
    data = json.loads((tmp_path / f"{table}.json").read_text())
    assert data["table"] == table and data["cells"]
    text = res.to_text()
    assert "A.bias*1e3" in text and "CP" in text
    traces = list(tmp_path.glob("trace_*.csv"))
    assert traces
    if table == "monitoring-grid":
        assert all(m.used_fraction is not None for lab, ms in res.cells if "alpha" in lab for m in ms.values())


def test_run_methods_reports_all_methods_and_times():
    sim = SimConfig("gaussian", n_b=50, B=4, seed=5)
    runs = run_methods(sim, ModelSpec("gaussian-identity", 5), check_states=True)
    assert set(runs) == {"offline GEE", "RenewGEE", "offline QIF", "RenewQIF"}
    for r in runs.values():
        assert isinstance(r, MethodRun) and r.r_time >= r.c_time > 0 and r.used == 200
    assert runs["RenewQIF"].bad_variances == 0
    assert len(runs["RenewQIF"].iterations) == 4


def test_unknown_table():
    with pytest.raises(ValueError):
        table_cells("nope")
    with pytest.raises(ValueError):
        run_benchmark("linear-fixed-N", reps=0)
