import json

import numpy as np

from multiphase_qpe import records
from multiphase_qpe.protocol import RunConfig, run_estimation


def test_round_trip_exact(tmp_path):
    results = [run_estimation(RunConfig(d=2, epsilon=0.05, k_max=4, seed=s)) for s in range(3)]
    path = tmp_path / "r.jsonl"
    records.write_records(path, results, {"note": "x"})
    header, runs = records.read_records(path)
    assert header["meta"] == {"note": "x"}
    for i, res in enumerate(results):
        back = runs[i]
        assert back.config == res.config
        assert np.array_equal(back.theta_true, res.theta_true)
        for a, b in zip(back.records, res.records):
            assert a.outcomes == b.outcomes
            assert np.array_equal(a.covariance, b.covariance)
            assert np.array_equal(a.estimate, b.estimate)


def test_field_order_and_truncation(tmp_path):
    res = run_estimation(RunConfig(d=1, epsilon=0.1, k_max=2, seed=0))
    path = tmp_path / "r.jsonl"
    records.write_records(path, [res, res], {})
    lines = path.read_text().splitlines()
    assert tuple(json.loads(lines[1])) == records.ROUND_FIELDS
    assert tuple(json.loads(lines[3])) == records.RUN_FIELDS
    # chop the file in the middle of the second run
    path.write_text("\n".join(lines[:5]) + "\n" + lines[5][:10])
    _, runs = records.read_records(path)
    assert list(runs) == [0]
