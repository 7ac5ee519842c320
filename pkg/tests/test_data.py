import numpy as np
import pytest

from rangeattack.data import (
    LabeledDataset,
    PPMMagicError,
    PPMMaxvalError,
    PPMTruncatedError,
    decode_ppm,
    encode_ppm,
    grand_mean,
    parse_shape,
    read_dataset,
    read_ppm,
    split,
    synth_dataset,
    synth_label,
    write_dataset,
    write_ppm,
)


def test_white_pixel(tmp_path):
    p = tmp_path / "white.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
    img = read_ppm(p)
    assert img.shape == (3, 1, 1)
    assert img.dtype == np.uint8
    assert np.all(img == 255)


def test_interleaved_to_planar():
    # 2x1 image: pixel0 = (1,2,3), pixel1 = (4,5,6)
    img = decode_ppm(b"P6 2 1 255 \x01\x02\x03\x04\x05\x06")
    assert img[:, 0, :].tolist() == [[1, 4], [2, 5], [3, 6]]


def test_header_comments():
    img = decode_ppm(b"P6\n# made by hand\n1 # width\n1\n255\n\x07\x08\x09")
    assert img.ravel().tolist() == [7, 8, 9]


def test_roundtrip_random(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    p = tmp_path / "r.ppm"
    write_ppm(img, p)
    back = read_ppm(p)
    assert back.tobytes() == img.tobytes()
    assert encode_ppm(back) == p.read_bytes()


def test_distinct_errors():
    with pytest.raises(PPMMagicError):
        decode_ppm(b"P3\n1 1\n255\n1 2 3")
    with pytest.raises(PPMMaxvalError):
        decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")
    with pytest.raises(PPMTruncatedError):
        decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00")
    with pytest.raises(PPMTruncatedError):
        decode_ppm(b"P6\n2 2")


def test_write_needs_three_channels(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(np.zeros((1, 2, 2), dtype=np.uint8), tmp_path / "x.ppm")


def test_parse_shape():
    assert parse_shape("3x32x32") == (3, 32, 32)
    with pytest.raises(ValueError):
        parse_shape("3x32")
    with pytest.raises(ValueError):
        parse_shape("3xax4")


# ------------------------------------------------------------- synthetic


def test_label_rule_endpoints():
    assert synth_label(np.zeros((3, 8, 8))) == 15.0
    assert synth_label(np.full((3, 8, 8), 255.0)) == 35.0


def test_label_gradient_term():
    img = np.zeros((3, 8, 8))
    img[:, 4:] = 255.0  # bottom half bright: coefficient +1, mean 127.5
    assert synth_label(img) == pytest.approx(15 + 10 + 3)


def test_label_lipschitz_in_mean():
    rng = np.random.default_rng(1)
    img = rng.uniform(40, 200, size=(3, 16, 16))
    for c in (-20.0, -1.0, 0.5, 13.0):
        # a uniform shift moves the mean by c and leaves the top/bottom contrast alone
        assert synth_label(img + c) - synth_label(img) == pytest.approx(20 * c / 255, abs=1e-12)


def test_synth_deterministic_and_valid():
    a = synth_dataset(20, (3, 16, 16), seed=5)
    b = synth_dataset(20, (3, 16, 16), seed=5)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.images.dtype == np.uint8 and a.images.shape == (20, 3, 16, 16)
    assert np.all((a.labels >= 14) & (a.labels <= 45))
    for img, label in a:
        assert label == synth_label(img)


def test_synth_prefix_stable():
    # image i depends only on (seed, i)
    small = synth_dataset(5, (3, 8, 8), seed=9)
    big = synth_dataset(12, (3, 8, 8), seed=9)
    assert small.images.tobytes() == big.images[:5].tobytes()


def test_synth_labels_span_bands():
    ds = synth_dataset(400, (3, 32, 32), seed=3)
    assert ds.labels.min() < 18.5 and ds.labels.max() >= 30


@pytest.mark.parametrize("seed", range(20))
def test_synth_grand_mean_centered(seed):
    assert 64 < grand_mean(synth_dataset(50, (3, 32, 32), seed=seed)) < 192


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        synth_dataset(0)


# ------------------------------------------------------------ grand mean


def test_grand_mean_simple():
    assert grand_mean(np.zeros((4, 3, 2, 2), dtype=np.uint8)) == 0.0
    img = np.zeros((1, 3, 2, 2), dtype=np.uint8)
    img[0, :, 0, :] = 255
    assert grand_mean(img) == 127.5


def test_grand_mean_matches_double_loop():
    ds = synth_dataset(7, (3, 9, 5), seed=11)
    total = 0
    count = 0
    for img, _ in ds:
        for v in img.ravel().tolist():
            total += v
            count += 1
    assert grand_mean(ds) == total / count


def test_grand_mean_empty():
    with pytest.raises(ValueError):
        grand_mean(np.zeros((0, 3, 2, 2), dtype=np.uint8))


# ----------------------------------------------------------------- split


def test_split_half():
    ds = synth_dataset(10, (3, 4, 4), seed=0)
    tr, te = split(ds, 0.5, seed=1)
    assert len(tr) == len(te) == 5
    assert not set(tr.ids) & set(te.ids)
    assert sorted(tr.ids + te.ids) == sorted(ds.ids)


def test_split_deterministic_and_exhaustive():
    ds = synth_dataset(31, (3, 4, 4), seed=0)
    a = split(ds, 0.7, seed=3)
    b = split(ds, 0.7, seed=3)
    assert a[0].ids == b[0].ids and a[1].ids == b[1].ids
    union = np.concatenate([a[0].images, a[1].images])
    key = lambda arr: sorted(x.tobytes() for x in arr)
    assert key(union) == key(ds.images)


@pytest.mark.parametrize("n,fraction", [(10, 0.0), (10, 1.0), (10, 0.01), (1, 0.5)])
def test_split_degenerate(n, fraction):
    with pytest.raises(ValueError):
        split(synth_dataset(n, (3, 4, 4)), fraction)


# -------------------------------------------------------------- datasets


def test_dataset_roundtrip(tmp_path):
    ds = synth_dataset(6, (3, 8, 8), seed=2)
    manifest = write_dataset(ds, tmp_path / "d")
    assert manifest.read_text().splitlines()[0] == "image_path,label"
    back = read_dataset(manifest)
    assert back.ids == ds.ids
    assert back.images.tobytes() == ds.images.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert read_dataset(tmp_path / "d").ids == ds.ids


def test_dataset_bad_label(tmp_path):
    ds = synth_dataset(2, (3, 4, 4))
    manifest = write_dataset(ds, tmp_path)
    lines = manifest.read_text().splitlines()
    lines[2] = lines[2].split(",")[0] + ",heavy"
    manifest.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=":3:"):
        read_dataset(manifest)


def test_dataset_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope.csv")


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 4, 4), dtype=np.uint8), np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 4, 4)), np.array([1.0, 2.0]))
