import numpy as np
import pytest

from flowmark.core import (
    Dataset,
    DegenerateTraceError,
    Fingerprint,
    FlowTrace,
    MalformedTraceError,
    TraceFormatError,
    ipds_from_timestamps,
    load_traces,
    save_traces,
    timestamps_from_ipds,
    window_flow,
)


def test_differencing_direct():
    trace = FlowTrace("f", [0.0, 10.0, 30.0])
    assert ipds_from_timestamps(trace).tolist() == [10.0, 20.0]


def test_simultaneous_packets_give_zero_ipds():
    trace = FlowTrace("f", [5.0, 5.0, 5.0])
    assert ipds_from_timestamps(trace).tolist() == [0.0, 0.0]


def test_1201_timestamps_give_1200_ipds():
    ts = np.cumsum(np.full(1201, 7.0)) - 7.0
    assert ipds_from_timestamps(FlowTrace("f", ts)).size == 1200


def test_degenerate_trace_rejected():
    with pytest.raises(DegenerateTraceError):
        ipds_from_timestamps(FlowTrace("f", [1.0]))


def test_decreasing_timestamps_rejected_at_construction():
    with pytest.raises(MalformedTraceError):
        FlowTrace("f", [10.0, 5.0])


def test_cumsum_direct():
    trace = timestamps_from_ipds(0.0, [10.0, 20.0])
    assert trace.timestamps.tolist() == [0.0, 10.0, 30.0]


def test_empty_ipds_single_timestamp():
    trace = timestamps_from_ipds(100.0, [])
    assert trace.timestamps.tolist() == [100.0]


def test_negative_ipd_rejected():
    with pytest.raises(MalformedTraceError):
        timestamps_from_ipds(0.0, [5.0, -1.0])


def test_roundtrip_exact_random():
    # IPDs on a dyadic clock grid (sub-microsecond) round-trip bit-exactly
    rng = np.random.default_rng(7)
    grid = 2.0 ** -10
    for _ in range(25):
        ipds = np.round(rng.uniform(0.0, 120.0, size=50) / grid) * grid
        trace = timestamps_from_ipds(rng.integers(0, 1000), ipds)
        back = ipds_from_timestamps(trace)
        assert np.array_equal(back, ipds)


def test_roundtrip_near_exact_full_mantissa():
    # arbitrary float64 IPDs round-trip to within one ULP of the running sum
    rng = np.random.default_rng(8)
    ipds = rng.uniform(0.0, 120.0, size=200)
    trace = timestamps_from_ipds(0.0, ipds)
    back = ipds_from_timestamps(trace)
    assert np.max(np.abs(back - ipds)) < np.spacing(trace.timestamps[-1]) * 2


def test_window_exact_division():
    assert window_flow(np.arange(1200.0), 100).shape == (12, 100)


def test_window_remainder_dropped():
    windows = window_flow(np.arange(105.0), 50)
    assert windows.shape == (2, 50)
    assert np.array_equal(windows.ravel(), np.arange(100.0))


@pytest.mark.parametrize("n", [50, 100, 150, 200])
def test_window_model_sizes(n):
    windows = window_flow(np.ones(1000), n)
    assert windows.shape == (1000 // n, n)


def test_fingerprint_views_mutually_inverse():
    for ident in [0, 1, 7, 511, 1023]:
        fp = Fingerprint(ident)
        assert Fingerprint.from_one_hot(fp.one_hot()) == fp
        assert Fingerprint.from_bits(fp.to_bits()) == fp
        assert fp.to_bits().size == 10


def test_fingerprint_bounds():
    with pytest.raises(ValueError):
        Fingerprint(1024)
    with pytest.raises(ValueError):
        Fingerprint(0, m=1000)  # not a power of two


def test_dataset_split_disjoint():
    data = Dataset.split(np.zeros((100, 4)), seed=3)
    assert data.train_idx.size == 80 and data.test_idx.size == 20
    assert np.intersect1d(data.train_idx, data.test_idx).size == 0


def test_dataset_save_load_roundtrip(tmp_path):
    data = Dataset.split(np.random.default_rng(0).uniform(size=(40, 5)), seed=1)
    data.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    assert np.array_equal(back.windows, data.windows)
    assert np.array_equal(back.train_idx, data.train_idx)
    assert back.sha256() == data.sha256()


def test_csv_two_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("flow_id,timestamp_ms\nflow1,0.0\nflow1,12.5\n")
    traces = load_traces(p)
    assert len(traces) == 1
    assert traces[0].timestamps.tolist() == [0.0, 12.5]


def test_csv_roundtrip_500_flows(tmp_path):
    rng = np.random.default_rng(11)
    flows = []
    for i in range(500):
        ipds = rng.uniform(0, 90, size=10)
        flows.append(timestamps_from_ipds(0.0, ipds, flow_id=f"f{i}"))
    p = tmp_path / "flows.csv"
    save_traces(p, flows)
    back = load_traces(p)
    assert len(back) == 500
    for orig, got in zip(flows, back):
        assert got.flow_id == orig.flow_id
        # lossless at microsecond precision
        assert np.max(np.abs(got.timestamps - orig.timestamps)) < 1e-3


def test_csv_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert load_traces(p) == []
    p.write_text("flow_id,timestamp_ms\n")
    assert load_traces(p) == []


def test_csv_parse_error_carries_line_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("flow_id,timestamp_ms\nf1,0.0\nf1,xyz\n")
    with pytest.raises(TraceFormatError) as exc:
        load_traces(p)
    assert exc.value.line_no == 3


def test_csv_unsorted_flow_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("flow_id,timestamp_ms\nf1,10.0\nf1,5.0\n")
    with pytest.raises(TraceFormatError):
        load_traces(p)
