import io

import numpy as np
import pytest

from doml.metrics import (
    bitmap,
    cumulative_error,
    mean_sparsity,
    records_from_stream,
    render_bitmap,
    sparsity_trace,
    write_metrics_csv,
    write_trace_csv,
)


def test_cumulative_error_examples():
    curves = cumulative_error([0] * 10, [1, 0, 0, 1, 0, 0, 1, 0, 0, 0], 1)
    assert curves.final() == pytest.approx(0.3)
    assert not cumulative_error([0, 1] * 5, [0] * 10, 2).macro().any()
    alt = cumulative_error([0] * 1000, [i % 2 for i in range(1000)], 1)
    assert alt.final() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cumulative_error([], [], 1)


def test_macro_is_mean_of_tasks():
    rng = np.random.default_rng(0)
    tasks = rng.integers(0, 5, size=2000)
    mistakes = rng.integers(0, 2, size=2000)
    c = cumulative_error(tasks, mistakes, 5)
    e = c.epochs
    for t in range(5):
        m = mistakes[tasks == t][:e]
        assert np.allclose(c.per_task[t][:e], np.cumsum(m) / np.arange(1, e + 1))
    assert np.allclose(c.macro(), np.mean([p[:e] for p in c.per_task], axis=0))


def test_records_and_csv():
    tasks = [0, 1] * 25
    mistakes = [1, 0] * 25
    recs = records_from_stream(tasks, mistakes, 2, 10)
    assert [r.epoch for r in recs] == [10, 20, 25]
    assert recs[-1].macro_error == pytest.approx(0.5)
    buf = io.StringIO()
    write_metrics_csv(recs, buf, 2)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "epoch,macro_error,task_1,task_2"
    assert lines[1] == "10,0.5,1.0,0.0"


def test_sparsity_trace_and_bitmap():
    log = [
        {"round": 1, "worker": 0, "blocks": [0, 3]},
        {"round": 2, "worker": 1, "blocks": [1]},
        {"round": 3, "worker": 0, "blocks": [0, 1, 2, 3]},
    ]
    rows = sparsity_trace(log, first_n=2)
    assert [r["round"] for r in rows] == [1, 2]
    assert [r["round"] for r in sparsity_trace(log, worker=0)] == [1, 3]
    bits = bitmap(sparsity_trace(log), 4)
    assert render_bitmap(bits) == "#..#\n.#..\n####"
    assert mean_sparsity(log, 4) == pytest.approx(7 / 12)
    buf = io.StringIO()
    write_trace_csv(rows, buf)
    assert buf.getvalue().splitlines()[1] == "1,1,0,2,1;4"
