import struct
import wave

import numpy as np
import pytest

from fieldmanifold.signal_io import (DataError, GridSignal, Manifest, ManifestError,
                                     SignalDataset, SignalFormatError, build_manifest, export,
                                     load_audio, load_float_grid, load_image, load_signal,
                                     load_voxels, write_float_grid)


def write_pgm(path, pixels, comment=False):
    h, w = pixels.shape[:2]
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    head = magic + (b"\n# made by a test\n" if comment else b"\n") + f"{w} {h}\n255\n".encode()
    path.write_bytes(head + pixels.astype(np.uint8).tobytes())


def write_wav(path, samples, rate=8000):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, "<i2").tobytes())


# -- images ------------------------------------------------------------------

def test_pgm_endpoints(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm(p, np.array([[0, 255]]), comment=True)
    s = load_image(p)
    assert s.shape == (1, 2) and s.channels == 1
    np.testing.assert_array_equal(s.values[..., 0], [[-1.0, 1.0]])


def test_ppm_channels(tmp_path):
    p = tmp_path / "c.ppm"
    write_pgm(p, np.zeros((2, 3, 3)))
    assert load_image(p).values.shape == (2, 3, 3)


@pytest.mark.parametrize("seed", range(5))
def test_image_round_trip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, (5, 7, 3 if seed % 2 else 1))
    p = tmp_path / ("x.ppm" if seed % 2 else "x.pgm")
    write_pgm(p, px if seed % 2 else px[..., 0])
    a = load_image(p)
    q = tmp_path / ("y" + p.suffix)
    export(a, q)
    b = load_image(q)
    assert np.max(np.abs(a.values - b.values)) <= 1 / 127.5
    assert q.read_bytes().endswith(p.read_bytes()[-px.size:])   # pixel bytes identical


def test_image_errors_report_offset(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(SignalFormatError, match="byte 16.*truncated"):
        load_image(p)
    p.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(SignalFormatError, match="byte 0"):
        load_image(p)
    p.write_bytes(b"P5\n4 x\n255\n")
    with pytest.raises(SignalFormatError, match="byte 5"):
        load_image(p)


# -- audio -------------------------------------------------------------------

def test_wav_zero_and_range(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(p, [0, -32768, 16384])
    s = load_audio(p)
    np.testing.assert_array_equal(s.values[:, 0], [0.0, -1.0, 0.5])
    assert s.meta["sample_rate"] == 8000


def test_wav_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    p, q = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(p, rng.integers(-32768, 32768, 100))
    a = load_audio(p)
    export(a, q)
    np.testing.assert_array_equal(load_audio(q).values, a.values)


def test_wav_rejects_stereo_and_garbage(tmp_path):
    p = tmp_path / "s.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(bytes(8))
    with pytest.raises(SignalFormatError, match="mono"):
        load_audio(p)
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(SignalFormatError):
        load_audio(p)


# -- voxels and float grids --------------------------------------------------

def test_voxel_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    occ = rng.integers(0, 2, (3, 4, 5))
    p = tmp_path / "v.gemv"
    p.write_bytes(b"GEMV" + struct.pack("<3I", 3, 4, 5) + np.packbits(occ.reshape(-1)).tobytes())
    s = load_voxels(p)
    np.testing.assert_array_equal(s.values[..., 0], occ * 2.0 - 1.0)
    q = tmp_path / "w.gemv"
    export(s, q)
    assert q.read_bytes() == p.read_bytes()


def test_voxel_truncated(tmp_path):
    p = tmp_path / "v.gemv"
    p.write_bytes(b"GEMV" + struct.pack("<3I", 8, 8, 8) + bytes(3))
    with pytest.raises(SignalFormatError, match="occupancy"):
        load_voxels(p)


@pytest.mark.parametrize("seed", range(10))
def test_float_grid_round_trip_exact(tmp_path, seed):
    rng = np.random.default_rng(seed)
    raw = (rng.normal(size=(4, 6, 2)) * 10 ** rng.uniform(-3, 3)).astype(np.float32)
    p = tmp_path / "g.gemg"
    write_float_grid(p, raw)
    a = load_float_grid(p)
    assert a.values.min() >= -1 and a.values.max() <= 1
    q = tmp_path / "h.gemg"
    export(a, q)
    b = load_float_grid(q)
    np.testing.assert_array_equal(b.values, a.values)


def test_float_grid_errors(tmp_path):
    p = tmp_path / "g.gemg"
    write_float_grid(p, np.ones((2, 1), np.float32), 0.0, 2.0)
    data = p.read_bytes()
    p.write_bytes(data[:-3])
    with pytest.raises(SignalFormatError, match="value range"):
        load_float_grid(p)
    p.write_bytes(b"GEMX" + data[4:])
    with pytest.raises(SignalFormatError, match="magic"):
        load_float_grid(p)
    write_float_grid(p, np.full((2, 1), 5.0, np.float32), 0.0, 2.0)
    with pytest.raises(SignalFormatError, match="outside"):
        load_float_grid(p)


def test_load_signal_dispatch(tmp_path):
    with pytest.raises(DataError, match="unknown"):
        load_signal(tmp_path / "x.jpg")
    with pytest.raises(DataError, match="no such"):
        load_signal(tmp_path / "x.pgm")


# -- datasets and manifests ----------------------------------------------------

def make_pairs(root, n, size=4, length=16, skip_audio=None):
    rng = np.random.default_rng(0)
    for i in range(n):
        write_pgm(root / f"s{i:02d}.pgm", rng.integers(0, 256, (size, size)))
        if i != skip_audio:
            write_wav(root / f"s{i:02d}.wav", rng.integers(-1000, 1000, length))


def test_manifest_pairs_by_stem(tmp_path):
    make_pairs(tmp_path, 10)
    man = build_manifest(tmp_path, ["image", "audio"])
    assert len(man.entries) == 10
    assert [e["stem"] for e in man.entries] == sorted(e["stem"] for e in man.entries)
    ds = man.dataset()
    assert len(ds) == 10 and [l.tag for l in ds.layouts] == ["image", "audio"]
    assert ds.values[1].shape == (10, 16, 1)


def test_manifest_missing_modality_names_stem(tmp_path):
    make_pairs(tmp_path, 4, skip_audio=2)
    with pytest.raises(ManifestError, match="s02"):
        build_manifest(tmp_path, ["image", "audio"])


def test_manifest_empty_directory(tmp_path):
    with pytest.raises(ManifestError, match="no entries"):
        build_manifest(tmp_path)


def test_manifest_mixed_shapes_lists_offenders(tmp_path):
    make_pairs(tmp_path, 4)
    write_pgm(tmp_path / "s01.pgm", np.zeros((3, 3)))
    write_pgm(tmp_path / "s03.pgm", np.zeros((5, 3)))
    with pytest.raises(ManifestError, match="s01.pgm, s03.pgm"):
        build_manifest(tmp_path, ["image"])


def test_manifest_write_read_round_trip(tmp_path):
    make_pairs(tmp_path, 6)
    man = build_manifest(tmp_path, ["image", "audio"], holdout=2)
    path = tmp_path / "m.tsv"
    man.write(path)
    back = Manifest.read(path)
    assert back.entries == man.entries and back.ranges == man.ranges
    assert back.ids("train") == [0, 1, 2, 3] and back.ids("test") == [4, 5]
    lines = path.read_text().splitlines()
    assert "0\timage\ts00.pgm" in lines


def test_manifest_rejects_sparse_ids(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("#manifest\t1\n#modalities\timage\n0\timage\ta.pgm\n2\timage\tb.pgm\n")
    with pytest.raises(ManifestError, match="dense"):
        Manifest.read(p)


def test_dataset_shape_checks():
    a = GridSignal("image", np.zeros((2, 2, 1)), (0, 255))
    b = GridSignal("image", np.zeros((3, 2, 1)), (0, 255))
    with pytest.raises(DataError, match="entry 1"):
        SignalDataset.from_bundles([[a], [b]])
    with pytest.raises(DataError, match="no entries"):
        SignalDataset.from_bundles([])
