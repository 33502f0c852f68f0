import struct

import numpy as np
import pytest

from srwa.data import (
    DataFormatError,
    Dataset,
    ShiftSpec,
    apply_shift,
    gen_gaussian_mixture,
    gen_two_moons,
    load_csv,
    load_idx,
    make_two_moons_pair,
    save_csv,
    write_idx,
)
from srwa.evaluate import accuracy
from srwa.trainer import TrainConfig, train


def test_noise_free_upper_moon_on_unit_circle():
    ds = gen_two_moons(40, 0.0, seed=0)
    upper = ds.inputs[ds.labels == 0]
    np.testing.assert_allclose(np.linalg.norm(upper, axis=1), 1.0, atol=1e-15)
    assert np.all(upper[:, 1] >= 0)
    assert np.bincount(ds.labels).tolist() == [20, 20]


def test_two_moons_deterministic():
    a, b = gen_two_moons(100, 0.1, 7), gen_two_moons(100, 0.1, 7)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.inputs.tobytes() != gen_two_moons(100, 0.1, 8).inputs.tobytes()


def test_two_moons_rejects_odd_n():
    with pytest.raises(ValueError):
        gen_two_moons(7, 0.1, 0)


def test_two_moons_class_means_near_half_circle_centroids():
    # centroid of the upper unit half circle is (0, 2/pi); the lower moon is shifted to (1, 1/2 - 2/pi)
    centroids = {0: (0.0, 2 / np.pi), 1: (1.0, 0.5 - 2 / np.pi)}
    for seed in range(20):
        ds = gen_two_moons(200, 0.1, seed)
        for c, centre in centroids.items():
            mean = ds.inputs[ds.labels == c].mean(axis=0)
            assert np.all(np.abs(mean - centre) < 0.05)


def test_gaussian_mixture_even_split_and_small_sigma():
    means = np.array([[0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]])
    ds = gen_gaussian_mixture(10, 3, means, 1e-12, seed=1)
    counts = np.bincount(ds.labels)
    assert counts.max() - counts.min() <= 1
    np.testing.assert_allclose(ds.inputs, means[ds.labels], atol=1e-9)


def test_gaussian_mixture_linearly_separable_on_fresh_draw():
    means = np.array([[-4.0, 0.0], [4.0, 0.0]])
    train_ds = gen_gaussian_mixture(200, 2, means, 0.5, seed=0)
    test_ds = gen_gaussian_mixture(200, 2, means, 0.5, seed=1)
    # least-squares linear classifier as the oracle
    xa = np.column_stack([train_ds.inputs, np.ones(len(train_ds))])
    w, *_ = np.linalg.lstsq(xa, 2.0 * train_ds.labels - 1, rcond=None)
    pred = (np.column_stack([test_ds.inputs, np.ones(len(test_ds))]) @ w > 0).astype(int)
    assert np.all(pred == test_ds.labels)


def test_identity_shift():
    src = gen_two_moons(20, 0.1, 0)
    tgt = apply_shift(src, ShiftSpec())
    assert tgt.inputs.tobytes() == src.inputs.tobytes()
    assert tgt.domain == "target"


def test_rotation_by_pi():
    src = Dataset(np.array([[1.0, 0.0]]), [0])
    tgt = apply_shift(src, ShiftSpec(rotation=np.pi))
    np.testing.assert_allclose(tgt.inputs, [[-1.0, 0.0]], atol=1e-15)


def test_shift_preserves_label_multiset():
    src = gen_two_moons(50, 0.1, 0)
    tgt = apply_shift(src, ShiftSpec(rotation=0.3, translation=(1.0, -2.0), noise_sigma=0.2, seed=4))
    assert sorted(tgt.labels.tolist()) == sorted(src.labels.tolist())


def test_rotation_needs_2d():
    src = Dataset(np.zeros((3, 3)), [0, 1, 0])
    with pytest.raises(ValueError, match="2-D"):
        apply_shift(src, ShiftSpec(rotation=0.1))


def test_rotation_hurts_source_only_classifier():
    source, target = make_two_moons_pair(600, 0.1, 0.5, seed=0)
    cfg = TrainConfig(epochs=30, coef_adv=0.0, coef_ent=0.0, coef_tri=0.0, seed=0)
    net, _ = train(source, target.unlabeled(), cfg)
    assert accuracy(net, target) < accuracy(net, source)


def test_unlabeled_view_hides_labels():
    ds = gen_two_moons(10, 0.0, 0)
    view = ds.unlabeled()
    assert not hasattr(view, "labels")
    assert view.inputs is ds.inputs


def _write_raw_idx(tmp_path, images, labels):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(images, labels, ip, lp)
    return ip, lp


def test_idx_round_trip(tmp_path, rng):
    images = rng.integers(0, 256, size=(10, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=10)
    ip, lp = _write_raw_idx(tmp_path, images, labels)
    assert ip.read_bytes()[:4] == bytes.fromhex("00000803")
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (10, 784)
    assert ds.inputs.tobytes() == (images.reshape(10, -1) / 255.0).tobytes()
    assert ds.labels.tolist() == labels.tolist()
    again = load_idx(ip, lp)
    assert again.inputs.tobytes() == ds.inputs.tobytes()


def test_idx_zero_image_and_downsample(tmp_path):
    images = np.zeros((2, 4, 4), dtype=np.uint8)
    images[1] = 255
    ip, lp = _write_raw_idx(tmp_path, images, [3, 4])
    ds = load_idx(ip, lp)
    assert not np.any(ds.inputs[0])
    small = load_idx(ip, lp, downsample=True)
    assert small.inputs.shape == (2, 4)
    np.testing.assert_array_equal(small.inputs[1], 1.0)


def test_idx_bad_magic(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    ip.write_bytes(struct.pack(">4I", 0x0803FFFF, 1, 1, 1) + b"\x00")
    lp.write_bytes(struct.pack(">2I", 0x801, 1) + b"\x00")
    with pytest.raises(DataFormatError, match="0x0803FFFF"):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = tmp_path / "i", tmp_path / "l"
    ip.write_bytes(struct.pack(">4I", 0x803, 2, 1, 1) + b"\x00\x00")
    lp.write_bytes(struct.pack(">2I", 0x801, 3) + b"\x00\x00\x00")
    with pytest.raises(DataFormatError, match="does not match"):
        load_idx(ip, lp)


def test_csv_round_trip(tmp_path):
    _, tgt = make_two_moons_pair(40, 0.1, 0.5, seed=3)
    path = tmp_path / "t.csv"
    save_csv(tgt, path)
    assert path.read_text().splitlines()[0] == "x0,x1,label,domain"
    back = load_csv(path)
    assert back.inputs.tobytes() == tgt.inputs.tobytes()
    assert back.labels.tolist() == tgt.labels.tolist()
    assert back.domain == "target"
