import numpy as np
import pytest

from ltc.datakit import (
    CsvFormatError,
    Dataset,
    DatasetSpec,
    load_embeddings_csv,
    make_split,
    save_embeddings_csv,
    split_from_manifest,
    split_manifest,
    stream_iter,
    synth_mixture,
)


def default_dataset(seed=0, **kw):
    spec = DatasetSpec(**kw)
    return synth_mixture(spec, np.random.default_rng(seed)), spec


def test_synth_shapes_and_labels():
    ds, spec = default_dataset()
    assert len(ds) == 10 * 100
    assert ds.dim == 16
    assert set(np.unique(ds.labels)) == set(range(10))


def test_synth_deterministic_per_seed():
    a, _ = default_dataset(seed=3)
    b, _ = default_dataset(seed=3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c, _ = default_dataset(seed=4)
    assert not np.array_equal(a.features, c.features)


def test_synth_zero_separation_overlaps_classes():
    ds, _ = default_dataset(separation=0.0)
    # class means coincide at the origin, so between-class distances match
    # within-class distances and no classifier can do much
    mean_by_class = np.array([ds.features[ds.labels == c].mean(axis=0)
                              for c in range(10)])
    assert np.linalg.norm(mean_by_class, axis=1).max() < 0.5


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(known_classes=1)
    with pytest.raises(ValueError):
        DatasetSpec(dim=1)
    with pytest.raises(ValueError):
        DatasetSpec(samples_per_class=1)
    with pytest.raises(ValueError):
        DatasetSpec(source="parquet")


def test_csv_roundtrip_value_exact(tmp_path):
    ds, _ = default_dataset(samples_per_class=5)
    path = tmp_path / "ds.csv"
    save_embeddings_csv(path, ds)
    back = load_embeddings_csv(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_csv_small_well_formed(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("label,f0,f1\n0,1.5,-2.0\n3,0.25,4.0\n")
    ds = load_embeddings_csv(path)
    assert np.array_equal(ds.labels, [0, 3])
    assert np.array_equal(ds.features, [[1.5, -2.0], [0.25, 4.0]])


def test_csv_short_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1\n0,1.0,2.0\n1,3.0\n")
    with pytest.raises(CsvFormatError, match=":3"):
        load_embeddings_csv(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "hdr.csv"
    path.write_text("label,x0,x1\n0,1.0,2.0\n")
    with pytest.raises(CsvFormatError, match="header"):
        load_embeddings_csv(path)


def test_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(CsvFormatError):
        load_embeddings_csv(path)


def test_csv_non_numeric_names_line(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("label,f0\n0,1.0\nx,2.0\n")
    with pytest.raises(CsvFormatError, match=":3"):
        load_embeddings_csv(path)


def test_split_counts():
    ds, _ = default_dataset(samples_per_class=20)
    split = make_split(ds, k_known=5, train_fraction=0.5, seed=0)
    assert len(split.support_indices) == 50
    assert len(split.query_order) == 150


def test_split_no_leakage():
    ds, _ = default_dataset()
    split = make_split(ds, 5, 0.5, seed=1)
    support = set(split.support_indices.tolist())
    query = set(split.query_order.tolist())
    assert not support & query
    assert len(support | query) == len(ds)


def test_split_support_has_no_novel_labels():
    ds, _ = default_dataset()
    split = make_split(ds, 5, 0.5, seed=2)
    support_labels = ds.labels[split.support_indices]
    assert set(np.unique(support_labels)) == set(range(5))


def test_split_stratification_bounds():
    ds, _ = default_dataset(samples_per_class=33)
    for fraction in (0.3, 0.5, 0.77):
        split = make_split(ds, 5, fraction, seed=3)
        for c in range(5):
            n_c = int((ds.labels == c).sum())
            got = int((ds.labels[split.support_indices] == c).sum())
            assert got in (int(np.floor(fraction * n_c)), int(np.ceil(fraction * n_c)))


def test_split_deterministic():
    ds, _ = default_dataset()
    a = make_split(ds, 5, 0.5, seed=9)
    b = make_split(ds, 5, 0.5, seed=9)
    assert np.array_equal(a.query_order, b.query_order)
    assert np.array_equal(a.support_indices, b.support_indices)


def test_split_requires_novel_classes():
    ds, _ = default_dataset()
    with pytest.raises(ValueError):
        make_split(ds, 10, 0.5, seed=0)


def test_split_small_class_errors():
    ds = Dataset(np.random.default_rng(0).standard_normal((3, 4)),
                 np.array([0, 1, 2]))
    with pytest.raises(ValueError, match="fewer than 2"):
        make_split(ds, 2, 0.5, seed=0)


def test_stream_iter_covers_query_in_order():
    ds, _ = default_dataset(samples_per_class=10)
    split = make_split(ds, 5, 0.5, seed=4)
    items = list(stream_iter(split))
    assert len(items) == len(split.query_order)
    assert [i for i, _ in items] == [int(v) for v in split.query_order]
    # the consumer sees (id, vector) pairs only
    assert all(len(item) == 2 for item in items)
    for (i, x) in items[:5]:
        assert np.array_equal(x, ds.features[i])


def test_manifest_roundtrip():
    ds, _ = default_dataset()
    split = make_split(ds, 5, 0.5, seed=5)
    manifest = split_manifest(split)
    back = split_from_manifest(ds, manifest)
    assert np.array_equal(back.support_indices, split.support_indices)
    assert np.array_equal(back.query_order, split.query_order)
    assert back.seen_labels == split.seen_labels


def test_manifest_out_of_range_rejected():
    ds, _ = default_dataset(samples_per_class=5)
    split = make_split(ds, 5, 0.5, seed=6)
    manifest = split_manifest(split)
    manifest["query_order"][0] = 10_000
    with pytest.raises(ValueError):
        split_from_manifest(ds, manifest)


def test_label_remap_support():
    ds, _ = default_dataset()
    split = make_split(ds, 5, 0.5, seed=7)
    assert set(np.unique(split.support_labels)) == set(range(5))
