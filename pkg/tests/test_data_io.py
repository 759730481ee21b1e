"""Data ingestion, RNG streams, and trace round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minsummax.data_io import (
    ConvergenceRecord,
    Dataset,
    RngSpec,
    gen_exponential_demand,
    parse_sparse_regression_text,
    read_trace_csv,
    serialize_sparse_regression_text,
    standard_scale_fit_transform,
    trace_to_text,
    train_test_split,
    write_trace_csv,
)
from minsummax.errors import DomainError, ParseError


# --- RNG streams -----------------------------------------------------------


def test_stream_reproducible_and_order_free():
    streams = RngSpec(root_seed=123)
    a1 = streams.stream("term", 4, 9).standard_normal(5)
    # drawing from unrelated streams in between must not disturb anything
    streams.stream("init").standard_normal(100)
    streams.stream("term", 4, 8).standard_normal(3)
    a2 = streams.stream("term", 4, 9).standard_normal(5)
    assert np.array_equal(a1, a2)


def test_streams_distinct_across_keys():
    streams = RngSpec(root_seed=0)
    draws = {
        ("init",): streams.stream("init").standard_normal(4),
        ("term", 0): streams.stream("term", 0).standard_normal(4),
        ("term", 1): streams.stream("term", 1).standard_normal(4),
        ("inner", 0): streams.stream("inner", 0).standard_normal(4),
    }
    keys = list(draws)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            assert not np.allclose(draws[keys[i]], draws[keys[j]])


def test_streams_distinct_across_seeds():
    a = RngSpec(root_seed=1).stream("init").standard_normal(4)
    b = RngSpec(root_seed=2).stream("init").standard_normal(4)
    assert not np.allclose(a, b)


def test_demand_generator_deterministic():
    d1 = gen_exponential_demand(50, 2.0, seed=7)
    d2 = gen_exponential_demand(50, 2.0, seed=7)
    assert np.array_equal(d1, d2)
    assert np.all(d1 >= 0)
    # the rate scales the mean like 1/rate
    slow = gen_exponential_demand(20_000, 0.5, seed=7)
    fast = gen_exponential_demand(20_000, 4.0, seed=7)
    assert slow.mean() == pytest.approx(2.0, rel=0.05)
    assert fast.mean() == pytest.approx(0.25, rel=0.05)
    with pytest.raises(DomainError):
        gen_exponential_demand(0, 1.0, seed=0)
    with pytest.raises(DomainError):
        gen_exponential_demand(5, 0.0, seed=0)


# --- sparse regression text ---------------------------------------------------


def test_parse_basic_document():
    ds = parse_sparse_regression_text("1.5 1:2.0 3:-4.5\n-0.5 2:1.0\n")
    assert ds.n == 2
    assert ds.features.shape == (2, 3)
    assert np.array_equal(ds.features[0], [2.0, 0.0, -4.5])
    assert np.array_equal(ds.features[1], [0.0, 1.0, 0.0])
    assert np.array_equal(ds.targets, [1.5, -0.5])


def test_parse_skips_blank_lines_and_crlf():
    ds = parse_sparse_regression_text("\n1.0 1:1.0\r\n\n2.0 1:3.0\r\n")
    assert ds.n == 2
    assert np.array_equal(ds.targets, [1.0, 2.0])


@pytest.mark.parametrize(
    "doc,line",
    [
        ("1.0 junk\n", 1),
        ("1.0 1:2.0\nx 1:1.0\n", 2),
        ("1.0 0:2.0\n", 1),
        ("1.0 2:1.0 1:1.0\n", 1),  # indices must increase
        ("1.0 1:1.0 1:2.0\n", 1),  # duplicates are not increasing either
        ("1.0 a:1.0\n", 1),
        ("1.0 1:\n", 1),
        ("", 1),
    ],
)
def test_parse_rejections_carry_position(doc, line):
    with pytest.raises(ParseError) as err:
        parse_sparse_regression_text(doc)
    assert err.value.line == line
    assert err.value.column >= 1


def test_parse_rejects_oversized_index():
    with pytest.raises(ParseError):
        parse_sparse_regression_text("1.0 999999999:1.0\n")


def test_parse_rejects_bad_utf8():
    with pytest.raises(ParseError):
        parse_sparse_regression_text(b"1.0 1:2.0\n\xff\xfe 1:1.0\n")


def test_serialize_parse_round_trip():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((6, 4))
    feats[rng.random((6, 4)) < 0.4] = 0.0
    feats[0, 3] = 1e-17  # tiny but nonzero survives the trip exactly
    ds = Dataset(features=feats, targets=rng.standard_normal(6))
    back = parse_sparse_regression_text(serialize_sparse_regression_text(ds))
    assert back.features.shape[1] <= 4  # trailing all-zero columns may drop
    assert np.array_equal(back.features, ds.features[:, : back.features.shape[1]])
    assert np.array_equal(back.targets, ds.targets)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(-1e6, 1e6, allow_nan=False),
            st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=5),
        ),
        min_size=1,
        max_size=8,
    )
)
def test_round_trip_hypothesis(rows):
    width = max(len(feats) for _, feats in rows)
    feats = np.zeros((len(rows), width))
    targs = np.zeros(len(rows))
    for i, (t, row) in enumerate(rows):
        targs[i] = t
        feats[i, : len(row)] = row
    ds = Dataset(features=feats, targets=targs)
    back = parse_sparse_regression_text(serialize_sparse_regression_text(ds))
    assert np.array_equal(back.targets, ds.targets)
    assert np.array_equal(back.features, ds.features[:, : back.features.shape[1]])
    assert not ds.features[:, back.features.shape[1]:].any()


# --- splitting and scaling --------------------------------------------------


def test_split_is_seeded_partition():
    ds = Dataset(features=np.arange(20.0).reshape(10, 2), targets=np.arange(10.0))
    tr1, te1 = train_test_split(ds, 0.3, seed=5)
    tr2, te2 = train_test_split(ds, 0.3, seed=5)
    assert np.array_equal(tr1.targets, tr2.targets)
    assert np.array_equal(te1.targets, te2.targets)
    assert tr1.n == 7 and te1.n == 3
    together = np.sort(np.concatenate([tr1.targets, te1.targets]))
    assert np.array_equal(together, np.arange(10.0))
    tr3, _ = train_test_split(ds, 0.3, seed=6)
    assert not np.array_equal(tr1.targets, tr3.targets)


def test_scaling_uses_train_statistics():
    rng = np.random.default_rng(1)
    tr = Dataset(features=rng.standard_normal((50, 3)) * 4 + 2, targets=np.zeros(50))
    te = Dataset(features=rng.standard_normal((20, 3)) * 4 + 2, targets=np.zeros(20))
    str_, ste, stats = standard_scale_fit_transform(tr, te, mode="train")
    assert np.allclose(str_.features.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(str_.features.std(axis=0), 1.0, atol=1e-12)
    # the test split is scaled by the train statistics, not its own
    manual = (te.features - stats.mean) / stats.std
    assert np.allclose(ste.features, manual)


def test_scaling_passes_constant_columns_through():
    feats = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    tr = Dataset(features=feats, targets=np.zeros(5))
    te = Dataset(features=feats.copy(), targets=np.zeros(5))
    out, _, stats = standard_scale_fit_transform(tr, te)
    assert np.array_equal(out.features[:, 0], feats[:, 0])
    assert bool(stats.constant[0]) and not bool(stats.constant[1])


# --- trace persistence -------------------------------------------------------


def _records():
    return [
        ConvergenceRecord(iter=0, mu=0.7310585786300049, alpha=0.1,
                          obj_smoothed=-1.2345678901234567e-05,
                          obj_primal_est=None, lambda_value=7.0,
                          stationarity_sq=None, wallclock_ms=0.0),
        ConvergenceRecord(iter=1, mu=0.5, alpha=0.09999999999999999,
                          obj_smoothed=3.141592653589793,
                          obj_primal_est=2.718281828459045, lambda_value=None,
                          stationarity_sq=1e-300, wallclock_ms=0.0),
    ]


def test_trace_header_and_lambda_column():
    text = trace_to_text(_records())
    header = text.split("\n", 1)[0]
    assert header == "iter,mu,alpha,obj_smoothed,obj_primal_est,lambda,stationarity_sq,wallclock_ms"


def test_trace_round_trip_exact(tmp_path):
    path = tmp_path / "trace.csv"
    recs = _records()
    write_trace_csv(path, recs)
    back = read_trace_csv(path)
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert a == b  # dataclass equality: every float must survive exactly


def test_trace_write_is_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace_csv(p1, _records())
    write_trace_csv(p2, _records())
    assert p1.read_bytes() == p2.read_bytes()


def test_trace_read_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n1,2,3\n")
    with pytest.raises(ParseError):
        read_trace_csv(bad)
    short = tmp_path / "short.csv"
    short.write_text(
        "iter,mu,alpha,obj_smoothed,obj_primal_est,lambda,stationarity_sq,wallclock_ms\n1,2\n"
    )
    with pytest.raises(ParseError) as err:
        read_trace_csv(short)
    assert err.value.line == 2


def test_trace_rejects_nonfinite():
    rec = ConvergenceRecord(iter=0, mu=np.inf, alpha=0.1, obj_smoothed=0.0)
    with pytest.raises(DomainError):
        trace_to_text([rec])


def test_dataset_validation():
    with pytest.raises(DomainError):
        Dataset(features=np.zeros((3, 2)), targets=np.zeros(4))
    with pytest.raises(DomainError):
        Dataset(features=np.zeros((0, 2)), targets=np.zeros(0))
