import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mocap_dims
from dlgfa.data import (
    LongitudinalDataset,
    SplitSpec,
    generate_one_bar,
    load_wide_csv,
    make_batches,
    one_bar_image,
    save_wide_csv,
    split_dataset,
    split_sizes,
    surrogate_dataset,
)
from dlgfa.errors import DataError
from dlgfa.model import GroupSpec


def test_one_bar_noiseless_small():
    ds = generate_one_bar(3, size=2, noise_sd=0.0, seed=0)
    assert ds.sequences.shape == (3, 2, 4)
    np.testing.assert_array_equal(ds.sequences[0, 0].reshape(2, 2), [[1, 1], [0, 0]])
    np.testing.assert_array_equal(ds.sequences[0, 1].reshape(2, 2), [[0, 0], [1, 1]])
    assert ds.group_spec.names == ("row1", "row2")
    np.testing.assert_array_equal(one_bar_image(3, 1), [[0, 0, 0], [1, 1, 1], [0, 0, 0]])


def test_one_bar_replicate_mode():
    ds = generate_one_bar(10, size=4, noise_sd=0.05, seed=3, mode="replicate_T", T=5)
    assert ds.sequences.shape == (10, 5, 16)
    for i in range(10):
        assert np.all(ds.sequences[i] == ds.sequences[i, 0])
        img = ds.sequences[i, 0].reshape(4, 4)
        assert np.argmax(img.mean(axis=1)) == np.argmax(np.abs(img).sum(axis=1))


def test_one_bar_reference_split():
    ds = generate_one_bar(2000, size=8, seed=1)
    assert ds.sequences.shape == (2000, 8, 64)
    train, val, test = split_dataset(ds, SplitSpec((0.8, 0.1, 0.1), seed=0))
    assert (train.N, val.N, test.N) == (1600, 200, 200)


def test_generator_deterministic():
    a = generate_one_bar(20, seed=5).sequences
    b = generate_one_bar(20, seed=5).sequences
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != generate_one_bar(20, seed=6).sequences.tobytes()


@pytest.mark.parametrize("kwargs", [{"size": 1}, {"n": 0}, {"noise_sd": -0.1}, {"mode": "other"}])
def test_generator_rejects(kwargs):
    args = dict(n=5)
    args.update(kwargs)
    with pytest.raises(DataError):
        generate_one_bar(**args)


def test_dataset_is_read_only_and_validated():
    ds = generate_one_bar(2, size=2)
    with pytest.raises(ValueError):
        ds.sequences[0, 0, 0] = 1.0
    with pytest.raises(DataError):
        LongitudinalDataset(np.zeros((2, 3, 4)), GroupSpec((3,)))
    with pytest.raises(DataError):
        LongitudinalDataset(np.full((1, 1, 1), np.nan), GroupSpec((1,)))


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


CSV_2x3x4 = """subject,t,a.1,a.2,b.1,b.2
s1,1,1,2,3,4
s1,2,5,6,7,8
s1,3,9,10,11,12
s2,1,13,14,15,16
s2,2,17,18,19,20
s2,3,21,22,23,24
"""


def test_csv_basic_load(tmp_path):
    ds = load_wide_csv(_write(tmp_path / "d.csv", CSV_2x3x4))
    assert ds.sequences.shape == (2, 3, 4)
    assert ds.group_spec.dims == (2, 2) and ds.group_spec.names == ("a", "b")
    np.testing.assert_array_equal(ds.sequences[1, 2], [21, 22, 23, 24])
    assert ds.subject_ids == ("s1", "s2") and ds.time_index == (1, 2, 3)


def test_csv_shuffled_rows_identical(tmp_path):
    lines = CSV_2x3x4.strip().splitlines()
    shuffled = [lines[0]] + [lines[i] for i in (5, 2, 6, 1, 4, 3)]
    a = load_wide_csv(_write(tmp_path / "a.csv", CSV_2x3x4))
    b = load_wide_csv(_write(tmp_path / "b.csv", "\n".join(shuffled) + "\n"))
    assert a.sequences.tobytes() == b.sequences.tobytes()
    assert a.subject_ids == b.subject_ids


def test_csv_interleaved_groups_and_group_map(tmp_path):
    text = "subject,t,b.1,a.1,b.2\nx,1,1,2,3\nx,2,4,5,6\n"
    ds = load_wide_csv(_write(tmp_path / "d.csv", text))
    assert ds.group_spec.names == ("b", "a") and ds.group_spec.dims == (2, 1)
    np.testing.assert_array_equal(ds.sequences[0, 0], [1, 3, 2])
    text = "subject,t,hip,knee,neck\nx,1,1,2,3\n"
    ds = load_wide_csv(_write(tmp_path / "m.csv", text), {"hip": "leg", "knee": "leg", "neck": "head"})
    assert ds.group_spec.names == ("leg", "head") and ds.group_spec.dims == (2, 1)


@pytest.mark.parametrize(
    "text, line",
    [
        ("subject,t,a.1\ns1,1,1\ns1,2\n", 3),
        ("subject,t,a.1\ns1,1,x\n", 2),
        ("subject,t,a.1\ns1,1,1\ns1,2,2\ns2,1,3\n", 4),
        ("subject,t,a.1\ns1,1,1\ns1,1,2\n", 3),
        ("subject,t,a.1\ns1,one,1\n", 2),
        ("subj,t,a.1\ns1,1,1\n", 1),
        ("subject,t,nogroup\ns1,1,1\n", 1),
    ],
)
def test_csv_errors_name_line(tmp_path, text, line):
    with pytest.raises(DataError, match=f"line {line}"):
        load_wide_csv(_write(tmp_path / "bad.csv", text))


def test_csv_empty_file(tmp_path):
    with pytest.raises(DataError):
        load_wide_csv(_write(tmp_path / "e.csv", ""))


def test_mocap_shaped_surrogate_round_trip(tmp_path):
    ds = surrogate_dataset(4, 32, mocap_dims(), seed=0, names=[f"joint{i}" for i in range(29)])
    save_wide_csv(ds, tmp_path / "m.csv")
    back = load_wide_csv(tmp_path / "m.csv")
    assert back.sequences.shape == (4, 32, 59) and back.group_spec.G == 29


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 5),
    T=st.integers(1, 4),
    dims=st.lists(st.integers(1, 3), min_size=1, max_size=4),
    seed=st.integers(0, 1000),
)
def test_csv_round_trip_value_identical(tmp_path_factory, n, T, dims, seed):
    ds = surrogate_dataset(n, T, dims, seed=seed)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_wide_csv(ds, path)
    back = load_wide_csv(path)
    assert back.sequences.tobytes() == ds.sequences.tobytes()
    assert back.group_spec == ds.group_spec
    assert back.subject_ids == ds.subject_ids


def test_split_rounding_and_determinism():
    assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    ds = generate_one_bar(10, size=2)
    a = split_dataset(ds, SplitSpec(seed=3))
    b = split_dataset(ds, SplitSpec(seed=3))
    assert [p.subject_ids for p in a] == [p.subject_ids for p in b]
    ids = sum((p.subject_ids for p in a), ())
    assert sorted(ids) == sorted(ds.subject_ids)


def test_split_degenerate():
    with pytest.raises(DataError):
        split_dataset(generate_one_bar(2, size=2))
    with pytest.raises(DataError):
        split_dataset(generate_one_bar(4, size=2))
    with pytest.raises(DataError):
        SplitSpec((0.5, 0.5, 0.0))
    with pytest.raises(DataError):
        SplitSpec((0.5, 0.3, 0.3))


def test_batches_sizes_and_partition():
    ds = generate_one_bar(200, size=4, seed=0)
    batches = make_batches(ds, 64, seed=1)
    assert [b.shape[1] for b in batches] == [64, 64, 64, 8]
    assert batches[0].shape == (4, 64, 16)
    rows = np.concatenate([b.transpose(1, 0, 2) for b in batches])
    order = np.lexsort(rows.reshape(200, -1).T)
    ref = np.lexsort(ds.sequences.reshape(200, -1).T)
    np.testing.assert_array_equal(rows[order], ds.sequences[ref])


def test_batches_deterministic_order():
    ds = generate_one_bar(30, size=3, seed=0)
    a = make_batches(ds, 7, seed=9)
    b = make_batches(ds, 7, seed=9)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_metabolomics_shaped_batch():
    ds = surrogate_dataset(4, 12, [196] * 5, seed=0)
    batches = make_batches(ds, 2, seed=0)
    assert batches[0].shape == (12, 2, 980)
