"""Pipeline model tests: hand-computed cycle counts and model properties."""

import numpy as np
import pytest

import splatsim.perfmodel as pm


def test_sort_cycles_exact():
    assert pm.sort_cycles(0) == (0, 0)
    assert pm.sort_cycles(1) == (1, 1)
    # 512 bytes over 38.4 B/cycle is 13.33 -> 14
    assert pm.sort_cycles(256) == (1, 14)
    # 192 bytes is exactly 5 cycles: Fraction arithmetic, no float fuzz
    assert pm.sort_cycles(96) == (1, 5)
    assert pm.sort_cycles(96 * 1000) == (375, 5000)


def test_raster_cycles():
    assert pm.raster_cycles(0) == 0
    assert pm.raster_cycles(5) == 9
    assert pm.raster_cycles(512) == 516


def test_single_tile_example_543():
    # one tile, 512 Gaussians: sort max(2, 27) = 27, raster 516, total 543
    nv = pm.simulate_naive_pipeline([512])
    assert nv.sort_compute == 2
    assert nv.sort_fetch == 27
    assert nv.sort_phase == 27
    assert nv.raster_total == 516
    assert nv.total_cycles == 543
    il = pm.simulate_interleaved_pipeline([512])
    assert il.total_cycles == 543  # one subtile degenerates to the naive total


def test_single_subtile_equality():
    for n in (1, 17, 100, 1023, 1024):
        nv = pm.simulate_naive_pipeline([n])
        il = pm.simulate_interleaved_pipeline([n])
        assert il.total_cycles == nv.total_cycles


def test_two_tile_overlap_wins():
    counts = [1024, 1024]
    nv = pm.simulate_naive_pipeline(counts)
    # D = 2048: compute 8, fetch ceil(4096/38.4) = 107; raster 2 * 1028
    assert nv.sort_phase == 107
    assert nv.raster_total == 2056
    assert nv.total_cycles == 2163
    il = pm.simulate_interleaved_pipeline(counts)
    # per subtile: fetch ceil(2048/38.4) = 54 dominates compute 4; r = 1028
    # t1 = 54, t2 = 1082; t1 = 108, t2 = max(1082, 108) + 1028 = 2110
    assert il.total_cycles == 2110
    assert il.total_cycles < nv.total_cycles
    seg = il.trace.segments
    assert [s.size for s in seg] == [1024, 1024]
    assert seg[0].raster_start == 54 and seg[1].raster_start == 1082


def test_split_balanced():
    assert pm.split_balanced(0, 1024) == []
    assert pm.split_balanced(1024, 1024) == [1024]
    assert pm.split_balanced(1025, 1024) == [513, 512]
    assert pm.split_balanced(2500, 1024) == [834, 833, 833]
    assert sum(pm.split_balanced(99999, 1024)) == 99999
    assert max(pm.split_balanced(99999, 1024)) <= 1024


def test_trace_consistency_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        counts = rng.integers(0, 3000, size=rng.integers(1, 40)).tolist()
        il = pm.simulate_interleaved_pipeline(counts)
        il.trace.validate(il.total_cycles)  # raises on any bookkeeping slip
        tiles = [s.tile_index for s in il.trace.segments]
        assert tiles == sorted(tiles)
        assert il.n_subtiles == len(il.trace.segments)
        assert il.n_entries == sum(int(c) for c in counts)


def test_empty_frame():
    for counts in ([], [0, 0, 0]):
        nv = pm.simulate_naive_pipeline(counts)
        il = pm.simulate_interleaved_pipeline(counts)
        assert nv.total_cycles == 0 and il.total_cycles == 0
        assert nv.sort_utilization == 0.0
        il.trace.validate(0)


def test_interleaved_never_slower_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        counts = rng.integers(0, 2500, size=rng.integers(1, 64)).tolist()
        cmpd = pm.compare_pipelines(counts)
        assert cmpd["interleaved"].total_cycles <= cmpd["naive"].total_cycles
        assert cmpd["speedup"] >= 1.0


def test_sort_phase_utilization_floor():
    # fetch bound: utilization approaches 19.2/256 = 7.5% from above
    nv = pm.simulate_naive_pipeline([100000])
    assert nv.sort_compute == 391
    assert nv.sort_fetch == 5209
    assert 0.074 < nv.sort_utilization < 0.08


def test_roofline_points():
    rep = pm.roofline_report()
    raster, sort = rep["points"]
    assert raster["bound"] == "compute"
    assert raster["attainable_macs_per_cycle"] == 1536
    assert raster["intensity_macs_per_byte"] == pytest.approx(1536 / 18)
    assert sort["bound"] == "memory"
    assert sort["attainable_macs_per_cycle"] == pytest.approx(115.2)
    assert sort["intensity_macs_per_byte"] == 3.0
    assert rep["intensity_ratio"] == pytest.approx(28.4444444444, abs=1e-9)


def test_exports(tmp_path):
    il = pm.simulate_interleaved_pipeline([100, 2000, 0, 300])
    p = tmp_path / "pipe.json"
    pm.save_pipeline_json(il, p)
    import json
    d = json.loads(p.read_text())
    assert d["schedule"] == "interleaved"
    assert d["total_cycles"] == il.total_cycles
    c = tmp_path / "trace.csv"
    pm.save_trace_csv(il.trace, c)
    lines = c.read_text().strip().splitlines()
    assert lines[0] == "tile,size,sort_start,sort_end,raster_start,raster_end"
    assert len(lines) == 1 + il.n_subtiles


def test_config_validation():
    with pytest.raises(ValueError):
        pm.HwConfig(subtile_capacity=0)
    cfg = pm.HwConfig(bytes_per_cycle="19.2")
    assert pm.sort_cycles(96, cfg) == (1, 10)
