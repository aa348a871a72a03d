import json

import numpy as np
import pytest

from qlbm.errors import DegenerateProjectionError, QLBMError
from qlbm.io import (
    OutputError, emit_outputs, read_field_blob, read_field_csv, read_table, write_field_blob, write_field_csv,
    write_json,
)
from qlbm.pipeline import (
    MetricsReport, butterfly_model, final_fidelity_means, is_unimodal, map_points, run_pipeline, sweep_fwht, sweep_mps,
    worker_count,
)
from qlbm.scenario import parse_scenario, scenario_from_dict


def small(**kw):
    doc = {"model": "D2Q5", "L": 8, "T": 4, "velocity": {"preset": "swirl", "amplitude": 0.2}}
    doc.update(kw)
    return scenario_from_dict(doc)


def test_csv_and_blob_roundtrip(tmp_path, rng):
    for shape in [(4, 4), (4, 2, 8)]:
        f = rng.standard_normal(shape) * 10.0 ** rng.integers(-20, 20, size=shape)
        back = read_field_csv(write_field_csv(tmp_path / "f.csv", f), d=len(shape))
        assert back.shape == f.shape and np.max(np.abs(back - f)) <= 1e-15 * np.max(np.abs(f))
        path, side = write_field_blob(tmp_path / "f.bin", f)
        assert np.array_equal(read_field_blob(path), f)
        assert path.stat().st_size == 8 * f.size
        meta = json.loads(side.read_text())
        assert meta["shape"] == list(shape) and meta["dtype"] == "<f8" and meta["order"] == "F"


def test_csv_rows_are_x_fastest(tmp_path):
    f = np.arange(6.0).reshape(3, 2, order="F")
    lines = write_field_csv(tmp_path / "f.csv", f).read_text().splitlines()
    assert lines[0] == "x,y,z,value"
    assert lines[1:4] == ["0,0,0,0.0", "1,0,0,1.0", "2,0,0,2.0"]


def test_empty_trajectory_writes_metrics_only(tmp_path):
    report = MetricsReport(scenario={"model": "D2Q5"}, method="none")
    written = emit_outputs(report, {"quantum": [], "classical": []}, tmp_path / "out")
    assert [p.name for p in written] == ["metrics.json"]
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["metrics.json"]


def test_unwritable_directory_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match=str(blocker)):
        write_json(blocker / "metrics.json", {})


def test_exact_chain_matches_truth(tmp_path):
    scn = small(T=6)
    report, fields = run_pipeline(scn, tmp_path, figures=False)
    assert report.final_fidelity >= 1 - 1e-10
    for q, c in zip(fields["quantum"], fields["classical"]):
        assert np.max(np.abs(q - c)) <= 1e-10 * np.max(c)
    for s in report.steps:
        assert 0 <= s["fidelity"] <= 1 + 1e-12 and 0 <= s["p_success"] <= 1
        assert s["accepted"] == s["rejected"] == 0
    assert len(fields["quantum"]) == scn.T + 1


def test_artifacts_written(tmp_path):
    scn = small(cross_sections=[{"axis": "y", "at": 3}])
    run_pipeline(scn, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrics.json", "timing.json", "fidelity_vs_time.csv", "fidelity_vs_time.png", "density_final.png",
            "cross_section_y3_t000.csv", "cross_section_y3_t004.csv", "cross_section_y3.png", "fields"} <= names
    rows = read_table(tmp_path / "fidelity_vs_time.csv")
    assert [int(r["t"]) for r in rows] == [1, 2, 3, 4]
    q = read_field_blob(tmp_path / "fields" / "quantum_t004.bin")
    c = read_field_csv(tmp_path / "fields" / "classical_t004.csv", d=2)
    assert np.max(np.abs(q - c)) < 1e-10
    cs = read_table(tmp_path / "cross_section_y3_t004.csv")
    assert list(cs[0]) == ["x", "quantum", "classical"] and len(cs) == 8
    assert np.isclose(float(cs[5]["classical"]), c[5, 3], rtol=1e-15)


def test_metrics_byte_identical_for_same_seed(tmp_path):
    for method in ("kde+mps", "shadow"):
        kw = dict(T=2, readout={"method": method, "shots": 2000, "settings": 5, "chi": 2,
                                "fit": {"epochs": 30, "cold_epochs": 50}})
        run_pipeline(small(seed=3, **kw), tmp_path / "a", figures=False)
        run_pipeline(small(seed=3, **kw), tmp_path / "b", figures=False)
        run_pipeline(small(seed=4, **kw), tmp_path / "c", figures=False)
        a, b, c = ((tmp_path / d / "metrics.json").read_bytes() for d in "abc")
        assert a == b and a != c


def test_readout_period_and_counts():
    scn = small(T=4, readout={"method": "raw", "period": 2, "shots": 3000})
    report, _ = run_pipeline(scn)
    assert [s["accepted"] + s["rejected"] for s in report.steps] == [0, 3000, 0, 3000]
    assert all(s["accepted"] > 0 for s in report.steps[1::2])
    assert 0.9 < report.final_fidelity < 1


def test_noise_rejections_counted():
    scn = small(T=1, readout={"method": "raw", "shots": 20000, "noise_p": 0.05})
    s = run_pipeline(scn)[0].steps[0]
    assert s["rejected"] > 0 and np.isclose(s["p_estimate"], s["accepted"] / 20000)


def test_cube_in_pipe_matches_wall_reference(tmp_path):
    scn = parse_scenario("cube_in_pipe")
    assert scn.T == 24
    report, fields = run_pipeline(scn, tmp_path, figures=False)
    for q, c in zip(fields["quantum"], fields["classical"]):
        assert np.max(np.abs(q - c)) <= 1e-8
    assert max(s["wall_leakage"] for s in report.steps) <= 1e-14
    assert (tmp_path / "cross_section_y10_t024.csv").exists()
    assert len(read_table(tmp_path / "cross_section_y10_t024.csv")) == 16 * 16


def test_errors_carry_step_index(monkeypatch):
    import qlbm.pipeline as pl

    def boom(*a, **k):
        raise DegenerateProjectionError("no shots")

    monkeypatch.setattr(pl, "measure_histogram", boom)
    with pytest.raises(DegenerateProjectionError, match="step 2: no shots") as e:
        run_pipeline(small(T=3, readout={"method": "raw", "period": 2}))
    assert e.value.step == 2


def test_zero_accepted_shots_is_degenerate():
    # every shot flipped out of the accepted sector at p = 1
    scn = small(T=1, readout={"method": "raw", "shots": 100, "noise_p": 1.0})
    with pytest.raises(QLBMError, match="step 1"):
        run_pipeline(scn)


def test_mps_sweep_table_columns(tmp_path):
    # 12 qubits: bond 64 is exact
    rows, peaks = sweep_mps([16], [1, 64], workers=1)
    assert set(rows[0]) == {"grid", "chi", "t", "infidelity"}
    assert {r["chi"] for r in rows} == {1, 64} and all(r["grid"] == 16 for r in rows)
    assert sorted({r["t"] for r in rows}) == list(range(0, 97))
    pk = {p["chi"]: p["peak_infidelity"] for p in peaks}
    assert pk[64] < 1e-12 < pk[1]


def test_fwht_sweep_rows():
    rows = sweep_fwht([8], [2, 4, 8, 16], workers=1)
    assert {(r["K"], r["method"]) for r in rows} == {(k, m) for k in (2, 4, 8)
                                                     for m in ("interpolated", "coarse", "dense")}
    interp = [r for r in rows if r["method"] == "interpolated"]
    assert interp[-1]["rel_error"] < 1e-12
    assert butterfly_model(16, 2) == 8 * 1 * 11


def test_unimodal():
    assert is_unimodal([0, 1, 3, 2, 2, 0]) and is_unimodal([3, 2, 1]) and not is_unimodal([0, 2, 1, 2])


def test_final_means():
    rows = [{"method": "a", "shots": 1, "t": t, "fidelity": f} for t, f in ((1, 0.2), (2, 0.5), (2, 0.7))]
    assert final_fidelity_means(rows) == {("a", 1): pytest.approx(0.6)}


def _square(x):
    return x * x


def test_worker_pool_order(monkeypatch):
    assert map_points(_square, range(6), workers=3) == [0, 1, 4, 9, 16, 25]
    monkeypatch.setenv("QLBM_THREADS", "2")
    assert worker_count() == 2
    for bad in ("zero", "0"):
        monkeypatch.setenv("QLBM_THREADS", bad)
        with pytest.raises(QLBMError, match="QLBM_THREADS"):
            worker_count()
