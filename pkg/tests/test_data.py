from __future__ import annotations

import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from essograph.data import (
    CallMeter,
    DataFormatError,
    Dataset,
    TableCache,
    TableTooLarge,
    counts,
    dump_rows,
    fixture_path,
    load_count_table,
    load_table,
    load_wam,
    marginalize,
)


def test_wam_shape(wam):
    assert wam.d == 6
    assert wam.n_rows == 1190
    assert wam.cardinalities == [2] * 6
    assert wam.names == list("ABCDEF")


def test_wam_total_matches_independent_cell_sum():
    with open(fixture_path("wam_counts.tsv")) as fh:
        cells = list(csv.DictReader(fh, delimiter="\t"))
    assert len(cells) == 64
    assert sum(int(c["count"]) for c in cells) == 1190


def test_expanded_rows_match_count_table(wam):
    rows = load_wam(expanded=True)
    assert rows.names == wam.names
    assert np.array_equal(counts(rows, range(6)).counts, counts(wam, range(6)).counts)


def test_wam_published_margins(wam):
    # printed one- to three-way margins; level 0 is the first-listed category
    assert counts(wam, [3]).counts.tolist() == [735, 455]
    assert counts(wam, [2, 3]).counts.tolist() == [[279, 164], [456, 291]]
    assert counts(wam, [3, 4]).counts.tolist() == [[526, 209], [210, 245]]
    assert counts(wam, [2, 3, 4]).counts.tolist() == [[[208, 71], [86, 78]], [[318, 138], [124, 167]]]


def test_wam_ce_table_recount(wam):
    # the C-E table from the rows; the printed version has 439 and 1187
    assert counts(wam, [2, 4]).counts.tolist() == [[294, 149], [442, 305]]


def test_load_table_codes_first_appearance():
    ds = load_table(io.StringIO("x,y\nb,1\na,2\nb,2\n"))
    assert ds.levels == [["b", "a"], ["1", "2"]]
    assert ds.rows.tolist() == [[0, 0], [1, 1], [0, 1]]


def test_load_table_tab_delimited():
    ds = load_table(io.StringIO("x\ty\n0\t1\n1\t1\n"))
    assert ds.names == ["x", "y"]
    assert ds.cardinalities == [2, 1]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("a,a\n1,2\n", "duplicate"),
        ("a,b\n", "empty"),
        ("a,b\n1,2\n3\n", "row 3"),
        ("a,b\n1,?\n", "missing"),
        ("a,b\n1,NA\n", "missing"),
        ("", "header"),
    ],
)
def test_load_table_rejects(text, fragment):
    with pytest.raises(DataFormatError, match=fragment):
        load_table(io.StringIO(text))


def test_missing_tokens_can_be_categories():
    ds = load_table(io.StringIO("a\n?\n1\n"), missing=())
    assert ds.levels == [["?", "1"]]


def test_count_table_rejects_bad_counts():
    with pytest.raises(DataFormatError, match="bad count"):
        load_count_table(io.StringIO("a,count\nx,lots\n"))
    with pytest.raises(DataFormatError, match="negative"):
        load_count_table(io.StringIO("a,count\nx,-1\n"))
    with pytest.raises(DataFormatError, match="count"):
        load_count_table(io.StringIO("a,b\nx,1\n"))


def test_dump_rows_roundtrip(wam):
    buf = io.StringIO()
    dump_rows(wam, buf)
    back = load_table(io.StringIO(buf.getvalue()))
    assert back.names == wam.names
    assert np.array_equal(counts(back, range(6)).counts, counts(wam, range(6)).counts)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        Dataset(["a"], [2], [[2]])
    with pytest.raises(DataFormatError):
        Dataset(["a", "a"], [2, 2], [[0, 0]])
    with pytest.raises(DataFormatError):
        Dataset(["a"], [2, 2], [[0]])


def test_reorder_gives_fresh_meter(wam):
    counts(wam, [0])
    r = wam.reorder([5, 4, 3, 2, 1, 0])
    assert r.names == list("FEDCBA")
    assert r.meter.data_calls == 0
    assert np.array_equal(r.rows[:, 0], wam.rows[:, 5])
    with pytest.raises(ValueError):
        wam.reorder([0, 0, 1, 2, 3, 4])


def test_counts_metering_and_budget(wam):
    before = wam.meter.data_calls
    t = counts(wam, [2, 4])
    assert wam.meter.data_calls == before + 1
    assert t.total == 1190
    assert not t.counts.flags.writeable
    with pytest.raises(TableTooLarge):
        counts(wam, range(6), max_cells=63)
    with pytest.raises(ValueError):
        counts(wam, [1, 1])
    with pytest.raises(ValueError):
        counts(wam, [9])


def test_marginalize_matches_direct_count(wam):
    full = counts(wam, [2, 3, 4])
    calls = wam.meter.data_calls
    m = marginalize(full, [4, 2])
    assert wam.meter.data_calls == calls
    assert m.vars == (4, 2)
    assert np.array_equal(m.counts, counts(wam, [4, 2]).counts)


def test_marginalize_rejects_foreign_vars(wam):
    with pytest.raises(ValueError):
        marginalize(counts(wam, [0, 1]), [2])


def test_cache_reuses_superset(wam):
    cache = TableCache(wam)
    cache.build([1, 2, 3, 4])
    calls = wam.meter.data_calls
    t = cache.table([4, 2])
    assert wam.meter.data_calls == calls
    assert t.vars == (4, 2)
    assert np.array_equal(t.counts, counts(wam, [4, 2]).counts)
    cache.table([0, 5])
    assert wam.meter.data_calls == calls + 2  # one for the cache build, one for the direct count above


def test_call_meter_is_monotone():
    m = CallMeter()
    m.add_data_call()
    m.add_test_call()
    m.add_test_call()
    assert m.snapshot() == {"data_calls": 1, "test_calls": 2}


@st.composite
def small_datasets(draw):
    d = draw(st.integers(1, 6))
    cards = draw(st.lists(st.integers(1, 3), min_size=d, max_size=d))
    n = draw(st.integers(0, 200))
    rows = [[draw(st.integers(0, c - 1)) for c in cards] for _ in range(n)]
    return Dataset([f"v{k}" for k in range(d)], cards, np.array(rows, dtype=np.int64).reshape(n, d))


@settings(max_examples=60, deadline=None)
@given(small_datasets(), st.data())
def test_counts_equal_bruteforce(ds, data):
    k = data.draw(st.integers(1, ds.d))
    vars = data.draw(st.permutations(range(ds.d)))[:k]
    t = counts(ds, vars)
    assert t.counts.size == int(np.prod([ds.cardinalities[v] for v in vars]))
    assert t.total == ds.n_rows
    expect = np.zeros(t.dims, dtype=np.int64)
    for row in ds.rows:
        expect[tuple(row[v] for v in vars)] += 1
    assert np.array_equal(t.counts, expect)


@settings(max_examples=40, deadline=None)
@given(small_datasets(), st.data())
def test_marginal_of_any_superset_equals_direct(ds, data):
    sup = data.draw(st.lists(st.sampled_from(range(ds.d)), min_size=1, unique=True))
    sub = data.draw(st.lists(st.sampled_from(sup), min_size=1, unique=True))
    assert np.array_equal(marginalize(counts(ds, sup), sub).counts, counts(ds, sub).counts)
