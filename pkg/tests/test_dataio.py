import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relabel_distill.dataio import (
    CountMismatchError,
    ImageDataset,
    LengthError,
    MagicError,
    ModelArchive,
    OrderError,
    RangeError,
    TruncatedError,
    VersionError,
    archive_bytes,
    load_idx,
    load_model,
    parse_archive,
    read_pgm,
    save_model,
    synth_shapes,
    write_curve_csv,
    write_idx,
    write_pgm,
)
from relabel_distill.numkit import Rng


def _raw_idx(tmp_path, n, h, w, pixels=None, labels=None):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    pixels = bytes(n * h * w) if pixels is None else pixels
    labels = bytes(n) if labels is None else labels
    img.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + pixels)
    lab.write_bytes(struct.pack(">II", 0x801, n) + labels)
    return img, lab


def test_load_idx_canonical_header(tmp_path):
    # header of the standard 10k MNIST test set; zero payload
    img, lab = _raw_idx(tmp_path, 10000, 28, 28)
    ds = load_idx(img, lab)
    assert ds.images.shape == (10000, 28, 28, 1)
    assert len(ds) == 10000
    assert np.all(ds.images == 0.0)


def test_load_idx_scales_bytes(tmp_path):
    img, lab = _raw_idx(tmp_path, 1, 1, 3, pixels=bytes([0, 51, 255]), labels=bytes([4]))
    ds = load_idx(img, lab)
    np.testing.assert_allclose(ds.images.reshape(-1), [0.0, 0.2, 1.0], atol=1e-7)
    assert ds.k == 5


def test_load_idx_gzip(tmp_path):
    img, lab = _raw_idx(tmp_path, 2, 2, 2, pixels=bytes(range(8)), labels=bytes([0, 1]))
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    np.testing.assert_array_equal(load_idx(gz, lab).images, load_idx(img, lab).images)


def test_load_idx_errors(tmp_path):
    img, lab = _raw_idx(tmp_path, 2, 2, 2)
    with pytest.raises(MagicError):
        load_idx(img, img)  # image magic passed as labels
    short = tmp_path / "short.idx"
    short.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5))
    with pytest.raises(TruncatedError):
        load_idx(short, lab)
    other = tmp_path / "lab3.idx"
    other.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(CountMismatchError):
        load_idx(img, other)


def test_idx_round_trip(tmp_path):
    ds = synth_shapes(20, 16, 16, 3, Rng(1))
    write_idx(ds, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l", k=3)
    np.testing.assert_array_equal(back.labels, ds.labels)
    # byte quantisation is the only loss
    assert np.max(np.abs(back.images - ds.images)) <= 0.5 / 255 + 1e-7
    write_idx(back, tmp_path / "i2", tmp_path / "l2")
    assert (tmp_path / "i2").read_bytes() == (tmp_path / "i").read_bytes()


def test_synth_shapes_contracts():
    ds = synth_shapes(100, 16, 16, 2, Rng(5))
    assert np.bincount(ds.labels).tolist() == [50, 50]
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    again = synth_shapes(100, 16, 16, 2, Rng(5))
    np.testing.assert_array_equal(ds.images, again.images)
    assert np.bincount(synth_shapes(11, 16, 20, 5, Rng(0)).labels).tolist() == [3, 2, 2, 2, 2]


@pytest.mark.parametrize("kwargs", [dict(k=1), dict(k=6), dict(h=8)])
def test_synth_shapes_rejects_parameters(kwargs):
    args = dict(n=10, h=16, w=16, k=2) | kwargs
    with pytest.raises(ValueError):
        synth_shapes(rng=Rng(0), **args)


def test_image_dataset_validates():
    with pytest.raises(RangeError):
        ImageDataset(np.full((1, 2, 2, 1), 1.5, np.float32), np.array([0]), 2)
    with pytest.raises(RangeError):
        ImageDataset(np.zeros((1, 2, 2, 1), np.float32), np.array([2]), 2)


# --- archives -------------------------------------------------------------

section_names = st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=8)
section_shapes = st.lists(st.integers(1, 4), min_size=0, max_size=3)


@given(st.dictionaries(section_names, section_shapes, max_size=5), st.integers(0, 2**32 - 1))
def test_archive_round_trip_bytes(layout, seed):
    gen = np.random.default_rng(seed)
    archive = ModelArchive({k: gen.normal(size=dims).astype(np.float32) for k, dims in layout.items()})
    raw = archive_bytes(archive)
    back = parse_archive(raw)
    assert list(back.sections) == list(archive.sections)
    for name in archive.sections:
        assert back[name].tobytes() == np.asarray(archive[name], np.float32).tobytes()
    assert archive_bytes(back) == raw


def test_archive_file_round_trip(tmp_path):
    archive = ModelArchive({"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
    save_model(archive, tmp_path / "m.rldm")
    back = load_model(tmp_path / "m.rldm")
    assert back["a"].tobytes() == archive["a"].tobytes()
    assert (tmp_path / "m.rldm").read_bytes()[:4] == b"RLDM"


def test_archive_errors():
    raw = archive_bytes(ModelArchive({"a": np.zeros((2, 3), np.float32)}))
    with pytest.raises(MagicError):
        parse_archive(b"XXXX" + raw[4:])
    with pytest.raises(VersionError):
        parse_archive(raw[:4] + struct.pack("<H", 9) + raw[6:])
    # header: magic(4) version(2) count(4) namelen(2) name(1) tag(1) rank(1) dims(8) nbytes(4)
    nbytes_at = 4 + 2 + 4 + 2 + 1 + 2 + 8
    bad = raw[:nbytes_at] + struct.pack("<I", 20) + raw[nbytes_at + 4 : nbytes_at + 4 + 20]
    with pytest.raises(LengthError):
        parse_archive(bad)
    with pytest.raises(TruncatedError):
        parse_archive(raw[:-3])


# --- PGM / CSV ------------------------------------------------------------

def test_pgm_values(tmp_path):
    write_pgm(np.zeros((2, 3)), tmp_path / "z.pgm")
    raw = (tmp_path / "z.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert raw.endswith(bytes(6))
    write_pgm(np.ones((2, 2)), tmp_path / "o.pgm")
    assert (tmp_path / "o.pgm").read_bytes().endswith(b"\xff" * 4)
    write_pgm(np.full((1, 1), 0.5), tmp_path / "h.pgm")
    assert read_pgm(tmp_path / "h.pgm").tolist() == [[128]]


def test_pgm_range_error(tmp_path):
    with pytest.raises(RangeError):
        write_pgm(np.array([[1.2]]), tmp_path / "x.pgm")
    with pytest.raises(RangeError):
        write_pgm(np.array([[-0.1]]), tmp_path / "x.pgm")


def test_curve_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_curve_csv([(0.0, 1.0), (1.0, 0.0)], path)
    text = path.read_bytes().decode()
    assert text == "fraction,probability\n0.000000,1.000000\n1.000000,0.000000\n"
    assert "\r" not in text
    write_curve_csv([(0.333333333, 0.5)], path)
    assert path.read_text().splitlines()[1].startswith("0.333333,")
    write_curve_csv([], path)
    assert path.read_text() == "fraction,probability\n"
    with pytest.raises(OrderError):
        write_curve_csv([(0.5, 1.0), (0.2, 1.0)], path)
