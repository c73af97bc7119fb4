import json

import numpy as np
import pytest

from scanpath_forge.core import Scanpath, validate_scanpath
from scanpath_forge.data import (
    DatasetRecord,
    FeatureStore,
    SyntheticSpec,
    export_features,
    generate_synthetic,
    import_features,
    load_dataset,
    load_image,
    load_saliency,
    read_pnm,
    save_dataset,
    split,
    uniform_random_scanpath,
    write_ppm,
    write_synthetic,
)
from scanpath_forge.errors import BadRatios, MissingImage, ParseError, RecordError, ShapeMismatch, ValidationError
from scanpath_forge.metrics import congruency, nss
from scanpath_forge.models import Generator


def _record_line(image_id="a", fix=((1, 2), (3, 4))):
    return json.dumps(
        {
            "image_id": image_id,
            "screen_w": 10,
            "screen_h": 10,
            "observers": [{"observer_id": "o1", "fixations": [list(f) for f in fix]}],
        }
    )


def test_two_line_file(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(_record_line("a") + "\n" + _record_line("b", ((0, 0, 10), (5, 5, 260))) + "\n")
    recs = load_dataset(p)
    assert [r.image_id for r in recs] == ["a", "b"]
    assert recs[1].observers[0].fixations[1].t_ms == 260


def test_out_of_bounds_reports_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(_record_line("a") + "\n" + _record_line("b", ((1, 1), (11, 2))) + "\n")
    with pytest.raises(RecordError) as exc:
        load_dataset(p)
    assert exc.value.line == 2
    assert isinstance(exc.value, ValidationError)


def test_parse_error_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(_record_line("a") + "\n\n{not json\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(p)
    assert exc.value.line == 3


def test_missing_field_and_missing_file(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"image_id": "a", "screen_w": 4}\n')
    with pytest.raises(RecordError):
        load_dataset(p)
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.jsonl")


def test_record_needs_an_observer():
    with pytest.raises(ValidationError):
        DatasetRecord("a", 10, 10, ())


def test_save_load_round_trip(tmp_path):
    items = generate_synthetic(SyntheticSpec(n_observers=3), 4, seed=2)
    recs = [it.record for it in items]
    save_dataset(recs, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl") == recs


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_allclose(read_pnm(tmp_path / "x.ppm"), img, atol=1e-12)


def test_synthetic_invariants():
    spec = SyntheticSpec()
    items = generate_synthetic(spec, 6, seed=3)
    for it in items:
        assert len(it.record.observers) == spec.n_observers
        for sp in it.record.observers:
            validate_scanpath(sp)
            assert spec.length_range[0] <= len(sp) <= spec.length_range[1]
        assert it.saliency.values.min() >= 0
        assert it.saliency.values.max() == pytest.approx(1.0)
        assert it.image.shape == (64, 64, 3)


def test_synthetic_determinism():
    a = generate_synthetic(SyntheticSpec(), 3, seed=9)
    b = generate_synthetic(SyntheticSpec(), 3, seed=9)
    for x, y in zip(a, b):
        assert x.record == y.record
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.saliency.values, y.saliency.values)


def test_zero_noise_single_blob_hits_centre():
    spec = SyntheticSpec(n_blobs=1, obs_noise=0.0, n_observers=5)
    it = generate_synthetic(spec, 1, seed=1)[0]
    b = it.record.synthetic["blobs"][0]
    for sp in it.record.observers:
        np.testing.assert_allclose(sp.xy, np.tile([b["x"] * 64, b["y"] * 64], (len(sp), 1)))


def test_observers_congruent_with_tight_blobs():
    spec = SyntheticSpec(sigma_range=(0.04, 0.05))
    items = generate_synthetic(spec, 10, seed=4)
    scores = [congruency(sp, it.saliency, 0.9) for it in items for sp in it.record.observers]
    assert np.mean(scores) >= 0.8


def test_observer_nss_gap_over_random():
    items = generate_synthetic(SyntheticSpec(), 10, seed=5)
    rng = np.random.default_rng(0)
    obs = [nss(sp, it.saliency) for it in items for sp in it.record.observers]
    rand = [nss(uniform_random_scanpath(rng, 10, 64, 64), it.saliency) for it in items for _ in range(15)]
    assert np.mean(obs) - np.mean(rand) >= 1.0


def test_write_synthetic_and_loaders(tmp_path):
    items = generate_synthetic(SyntheticSpec(n_observers=2), 2, seed=0)
    path = write_synthetic(items, tmp_path)
    recs = load_dataset(path)
    assert (tmp_path / recs[0].image).exists()
    img = load_image(recs[0], tmp_path)
    np.testing.assert_allclose(img, items[0].image, atol=1e-12)
    np.testing.assert_array_equal(load_saliency(recs[0], tmp_path).values, items[0].saliency.values)
    # inline blob spec also yields pixels and the exact map
    inline = items[0].record
    np.testing.assert_allclose(load_image(inline), items[0].image, atol=1e-12)
    bare = DatasetRecord("z", 4, 4, (Scanpath.from_xy([[1, 1]], 4, 4, "z"),))
    with pytest.raises(MissingImage):
        load_image(bare)
    assert load_saliency(bare) is None


def _dummy_records(n):
    return [DatasetRecord(f"i{k:03d}", 4, 4, (Scanpath.from_xy([[1, 1]], 4, 4, f"i{k:03d}"),)) for k in range(n)]


def test_split_counts_and_determinism():
    recs = _dummy_records(100)
    parts = split(recs, (0.9, 0.1, 0.0), seed=3)
    assert [len(p) for p in parts] == [90, 10, 0]
    again = split(recs, (0.9, 0.1, 0.0), seed=3)
    assert [[r.image_id for r in p] for p in parts] == [[r.image_id for r in p] for p in again]


def test_split_partition_over_seeds():
    recs = _dummy_records(37)
    ids = {r.image_id for r in recs}
    for seed in range(100):
        parts = [{r.image_id for r in p} for p in split(recs, (0.6, 0.25, 0.15), seed)]
        assert set.union(*parts) == ids
        assert sum(len(p) for p in parts) == len(ids)


def test_split_keeps_image_together():
    recs = _dummy_records(10)
    recs = recs + [DatasetRecord(r.image_id, 4, 4, r.observers) for r in recs]
    for part in split(recs, (0.5, 0.5), seed=0):
        ids = [r.image_id for r in part]
        assert all(ids.count(i) == 2 for i in ids)


@pytest.mark.parametrize("ratios", [(0.5, 0.4), (1.2, -0.2), ()])
def test_bad_ratios(ratios):
    with pytest.raises(BadRatios):
        split(_dummy_records(3), ratios)


def test_feature_round_trip_and_errors(tmp_path):
    rng = np.random.default_rng(0)
    feats = {"a": rng.normal(size=(64, 8, 8)), "b": rng.normal(size=(64, 8, 8))}
    export_features(feats, tmp_path / "f.bin")
    store = import_features(tmp_path / "f.bin", (64, 8, 8))
    assert isinstance(store, FeatureStore)
    for k in feats:
        assert np.array_equal(store[k], feats[k])
    with pytest.raises(MissingImage):
        store["c"]
    export_features({"a": rng.normal(size=(32, 8, 8))}, tmp_path / "g.bin")
    with pytest.raises(ShapeMismatch):
        import_features(tmp_path / "g.bin", (64, 8, 8))


def test_feature_bypass_matches_encoder(tmp_path):
    gen = Generator(seed=0)
    items = generate_synthetic(SyntheticSpec(n_observers=1), 2, seed=0)
    images = np.stack([it.image for it in items])
    enc = gen.encode(images).data
    export_features({it.record.image_id: f for it, f in zip(items, enc)}, tmp_path / "f.bin")
    store = import_features(tmp_path / "f.bin", (64, 8, 8))
    feats = np.stack([store[it.record.image_id] for it in items])
    np.testing.assert_array_equal(gen.forward(features=feats, seq_len=10).data, gen.forward(images, 10).data)
