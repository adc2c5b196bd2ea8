"""Grid signals: codecs, normalization to [-1, 1], datasets and manifests.

Supported files (all multi-byte fields little-endian):

* ``.pgm`` / ``.ppm``: binary PNM (P5 / P6), 8-bit; v -> v / 127.5 - 1.
* ``.wav``: PCM16 mono; s -> s / 32768 on a 1-D grid.
* ``.gemv``: ``b"GEMV"``, three u32 extents, occupancy bits packed MSB-first
  in C order; {0, 1} -> {-1, +1}.
* ``.gemg``: ``b"GEMG"``, u32 rank, rank u32 extents, u32 channels, f32
  payload (C order, channel last), f32 min, f32 max; mapped affinely from
  [min, max] to [-1, 1].
"""
from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EXTENSIONS = {
    "image": (".pgm", ".ppm"),
    "audio": (".wav",),
    "voxels": (".gemv",),
    "grid": (".gemg",),
}


class DataError(ValueError):
    """Input data is missing, malformed or inconsistent."""


class SignalFormatError(DataError):
    def __init__(self, path, offset: int | None, message: str):
        self.path = str(path)
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{path}{where}: {message}")


class ManifestError(DataError):
    pass


@dataclass
class GridSignal:
    """Values on a regular grid, shape ``grid + (channels,)``, in [-1, 1]."""

    modality: str
    values: np.ndarray
    value_range: tuple[float, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float32)
        if self.values.ndim < 2:
            raise ValueError("values need at least one grid axis and a channel axis")

    @property
    def shape(self) -> tuple:
        return self.values.shape[:-1]

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        """(cells, channels) view in row-major cell order."""
        return self.values.reshape(-1, self.channels)

    def with_values(self, values) -> "GridSignal":
        values = np.asarray(values, np.float32).reshape(self.values.shape)
        return GridSignal(self.modality, values, self.value_range, dict(self.meta))


# -- PNM ---------------------------------------------------------------------

def _pnm_header(data: bytes, path):
    tokens, pos = [], 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise SignalFormatError(path, pos, "truncated header")
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise SignalFormatError(path, pos, "unterminated comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise SignalFormatError(path, start, f"expected integer, got {tok[:16]!r}")
            tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise SignalFormatError(path, pos, "missing whitespace after header")
    return tokens, pos + 1


def load_image(path) -> GridSignal:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise SignalFormatError(path, 0, f"not a binary PGM/PPM (magic {magic!r})")
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), start = _pnm_header(data, path)
    if not 0 < maxval <= 255:
        raise SignalFormatError(path, start, f"only 8-bit images supported (maxval {maxval})")
    if width == 0 or height == 0:
        raise SignalFormatError(path, start, "empty image")
    n = width * height * channels
    if len(data) - start < n:
        raise SignalFormatError(path, len(data), f"truncated pixel data ({len(data) - start} of {n} bytes)")
    raw = np.frombuffer(data, np.uint8, n, start).reshape(height, width, channels)
    values = raw.astype(np.float32) / np.float32(maxval / 2.0) - 1.0
    return GridSignal("image", values, (0.0, float(maxval)), {"maxval": maxval})


def export_image(signal: GridSignal, path) -> None:
    if signal.values.ndim != 3 or signal.channels not in (1, 3):
        raise ValueError("image export needs a 2-D grid with 1 or 3 channels")
    maxval = int(signal.meta.get("maxval", 255))
    height, width, channels = signal.values.shape
    x = np.clip(signal.values.astype(np.float64), -1, 1)
    raw = np.rint((x + 1.0) * (maxval / 2.0)).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + f"\n{width} {height}\n{maxval}\n".encode()
    Path(path).write_bytes(header + raw.tobytes())


# -- WAV ---------------------------------------------------------------------

def load_audio(path) -> GridSignal:
    try:
        with open(path, "rb") as fh:
            try:
                w = wave.open(fh, "rb")
            except (wave.Error, EOFError) as exc:
                raise SignalFormatError(path, fh.tell(), f"malformed WAV header: {exc}") from None
            with w:
                if w.getnchannels() != 1 or w.getsampwidth() != 2 or w.getcomptype() != "NONE":
                    raise SignalFormatError(path, 0, "only PCM16 mono WAV is supported")
                n = w.getnframes()
                start = fh.tell()
                frames = w.readframes(n)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    if len(frames) < 2 * n:
        raise SignalFormatError(path, start + len(frames), f"truncated sample data ({len(frames) // 2} of {n} samples)")
    if n == 0:
        raise SignalFormatError(path, start, "no samples")
    samples = np.frombuffer(frames, "<i2").astype(np.float32) / np.float32(32768.0)
    return GridSignal("audio", samples[:, None], (-32768.0, 32768.0), {"sample_rate": w.getframerate()})


def export_audio(signal: GridSignal, path) -> None:
    if signal.values.ndim != 2 or signal.channels != 1:
        raise ValueError("audio export needs a 1-D single-channel grid")
    x = np.clip(signal.values[:, 0].astype(np.float64), -1, 1)
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(signal.meta.get("sample_rate", 16000)))
        w.writeframes(pcm.tobytes())


# -- binary grid formats -----------------------------------------------------

class _Reader:
    def __init__(self, path):
        self.path = path
        self.data = Path(path).read_bytes()
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise SignalFormatError(self.path, len(self.data), f"truncated {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def magic(self, expected: bytes):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise SignalFormatError(self.path, 0, f"bad magic {got!r}, expected {expected!r}")


def load_voxels(path) -> GridSignal:
    r = _Reader(path)
    r.magic(b"GEMV")
    dims = tuple(r.u32("extent") for _ in range(3))
    if 0 in dims:
        raise SignalFormatError(path, 4, f"zero extent in {dims}")
    n = int(np.prod(dims))
    packed = np.frombuffer(r.take((n + 7) // 8, "occupancy bits"), np.uint8)
    occ = np.unpackbits(packed, count=n).reshape(dims)
    values = occ.astype(np.float32) * 2.0 - 1.0
    return GridSignal("voxels", values[..., None], (0.0, 1.0))


def export_voxels(signal: GridSignal, path) -> None:
    if signal.values.ndim != 4 or signal.channels != 1:
        raise ValueError("voxel export needs a 3-D single-channel grid")
    occ = (signal.values[..., 0] > 0).astype(np.uint8)
    header = b"GEMV" + struct.pack("<3I", *occ.shape)
    Path(path).write_bytes(header + np.packbits(occ.reshape(-1)).tobytes())


def _normalize(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (2.0 * (v.astype(np.float64) - lo) / (hi - lo) - 1.0).astype(np.float32)


def _denormalize(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Inverse of :func:`_normalize`, choosing among nearby float32 values one
    that normalizes back to ``x`` exactly when such a value exists."""
    x = np.asarray(x, np.float32)
    v0 = ((x.astype(np.float64) + 1.0) * 0.5 * (hi - lo) + lo).astype(np.float32)
    best = v0.copy()
    found = _normalize(v0, lo, hi) == x
    down, up = v0.copy(), v0.copy()
    for _ in range(8):
        if found.all():
            break
        down = np.nextafter(down, np.float32(-np.inf))
        up = np.nextafter(up, np.float32(np.inf))
        for cand in (down, up):
            hit = ~found & (_normalize(cand, lo, hi) == x)
            best[hit] = cand[hit]
            found |= hit
    return best


def load_float_grid(path) -> GridSignal:
    r = _Reader(path)
    r.magic(b"GEMG")
    rank = r.u32("rank")
    if not 1 <= rank <= 8:
        raise SignalFormatError(path, 4, f"unsupported rank {rank}")
    dims = tuple(r.u32("extent") for _ in range(rank))
    channels = r.u32("channel count")
    if 0 in dims or channels == 0:
        raise SignalFormatError(path, 8, f"zero extent in {dims} x {channels}")
    n = int(np.prod(dims)) * channels
    offset = r.pos
    payload = np.frombuffer(r.take(4 * n, "payload"), "<f4").astype(np.float32)
    lo, hi = struct.unpack("<2f", r.take(8, "value range"))
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise SignalFormatError(path, r.pos - 8, f"invalid declared range [{lo}, {hi}]")
    if not np.all(np.isfinite(payload)):
        raise SignalFormatError(path, offset, "non-finite payload values")
    if payload.min() < lo or payload.max() > hi:
        raise SignalFormatError(path, offset, f"payload outside declared range [{lo}, {hi}]")
    values = np.clip(_normalize(payload, lo, hi), -1, 1).reshape(dims + (channels,))
    return GridSignal("grid", values, (float(lo), float(hi)))


def export_float_grid(signal: GridSignal, path) -> None:
    lo, hi = signal.value_range
    dims = signal.shape
    payload = _denormalize(np.clip(signal.values, -1, 1), lo, hi)
    header = b"GEMG" + struct.pack(f"<I{len(dims)}II", len(dims), *dims, signal.channels)
    Path(path).write_bytes(header + payload.astype("<f4").tobytes() + struct.pack("<2f", lo, hi))


def write_float_grid(path, raw_values, lo: float | None = None, hi: float | None = None) -> None:
    """Write raw (un-normalized) values of shape grid + (channels,) as ``.gemg``."""
    raw = np.asarray(raw_values, np.float32)
    lo = float(raw.min()) if lo is None else lo
    hi = float(raw.max()) if hi is None else hi
    header = b"GEMG" + struct.pack(f"<I{raw.ndim - 1}II", raw.ndim - 1, *raw.shape[:-1], raw.shape[-1])
    Path(path).write_bytes(header + raw.astype("<f4").tobytes() + struct.pack("<2f", lo, hi))


_LOADERS = {".pgm": load_image, ".ppm": load_image, ".wav": load_audio,
            ".gemv": load_voxels, ".gemg": load_float_grid}
_EXPORTERS = {"image": export_image, "audio": export_audio,
              "voxels": export_voxels, "grid": export_float_grid}


def load_signal(path) -> GridSignal:
    ext = Path(path).suffix.lower()
    if ext not in _LOADERS:
        raise DataError(f"{path}: unknown signal format '{ext}'")
    if not Path(path).exists():
        raise DataError(f"{path}: no such file")
    return _LOADERS[ext](path)


def export(signal: GridSignal, path) -> None:
    """Write ``signal`` with the codec of its modality (values clamped to [-1, 1])."""
    _EXPORTERS[signal.modality](signal, path)


def extension_for(signal: GridSignal) -> str:
    if signal.modality == "image":
        return ".pgm" if signal.channels == 1 else ".ppm"
    return EXTENSIONS[signal.modality][0]


# -- datasets ----------------------------------------------------------------

@dataclass(frozen=True)
class ModalityLayout:
    tag: str
    shape: tuple
    channels: int

    @property
    def cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def coord_dim(self) -> int:
        return len(self.shape)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "shape": list(self.shape), "channels": self.channels}

    @classmethod
    def from_dict(cls, d) -> "ModalityLayout":
        return cls(d["tag"], tuple(d["shape"]), int(d["channels"]))


class SignalDataset:
    """N signal bundles with a common modality layout.

    ``values[m]`` holds modality m of every entry as (N, cells, channels).
    ``templates[m]`` keeps range/meta of the first entry for export.
    """

    def __init__(self, layouts: Sequence[ModalityLayout], values: Sequence[np.ndarray],
                 templates: Sequence[GridSignal] | None = None, ids=None):
        self.layouts = tuple(layouts)
        self.values = [np.ascontiguousarray(v, np.float32) for v in values]
        if len(self.layouts) != len(self.values) or not self.layouts:
            raise DataError("one value array per modality required")
        n = len(self.values[0])
        for lay, v in zip(self.layouts, self.values):
            if v.shape != (n, lay.cells, lay.channels):
                raise DataError(f"modality '{lay.tag}' values have shape {v.shape}, "
                                f"expected {(n, lay.cells, lay.channels)}")
        if n == 0:
            raise DataError("no entries")
        self.templates = list(templates) if templates is not None else [
            GridSignal(l.tag, np.zeros(l.shape + (l.channels,)), (-1.0, 1.0)) for l in self.layouts]
        self.ids = np.arange(n) if ids is None else np.asarray(ids)

    def __len__(self) -> int:
        return len(self.values[0])

    @classmethod
    def from_bundles(cls, bundles: Sequence[Sequence[GridSignal]], ids=None) -> "SignalDataset":
        if not bundles:
            raise DataError("no entries")
        first = bundles[0]
        layouts = [ModalityLayout(s.modality, s.shape, s.channels) for s in first]
        values = []
        for m, lay in enumerate(layouts):
            rows = []
            for i, b in enumerate(bundles):
                if len(b) != len(layouts):
                    raise DataError(f"entry {i} has {len(b)} modalities, expected {len(layouts)}")
                s = b[m]
                if (s.shape, s.channels) != (lay.shape, lay.channels):
                    raise DataError(f"entry {i} modality {m}: shape {s.shape}x{s.channels}, "
                                    f"expected {lay.shape}x{lay.channels}")
                rows.append(s.flat)
            values.append(np.stack(rows))
        return cls(layouts, values, list(first), ids)

    def bundle(self, i: int) -> list[GridSignal]:
        return [t.with_values(v[i]) for t, v in zip(self.templates, self.values)]

    def subset(self, rows) -> "SignalDataset":
        rows = np.asarray(rows)
        return SignalDataset(self.layouts, [v[rows] for v in self.values], self.templates, self.ids[rows])


# -- manifests ---------------------------------------------------------------

@dataclass
class Manifest:
    root: str
    modalities: list[str]
    entries: list[dict]                 # each: {"id": int, "stem": str, "paths": {tag: relpath}}
    ranges: dict = field(default_factory=dict)
    splits: dict = field(default_factory=dict)

    def ids(self, split: str | None = None) -> list[int]:
        all_ids = [e["id"] for e in self.entries]
        if split is None or split == "all":
            return all_ids
        held = set().union(*self.splits.values()) if self.splits else set()
        if split == "train" and "train" not in self.splits:
            return [i for i in all_ids if i not in held]
        if split not in self.splits:
            raise ManifestError(f"manifest has no split '{split}'")
        return sorted(self.splits[split])

    def load_bundles(self, split: str | None = None) -> list[list[GridSignal]]:
        out = []
        for i in self.ids(split):
            e = self.entries[i]
            out.append([load_signal(os.path.join(self.root, e["paths"][m])) for m in self.modalities])
        return out

    def dataset(self, split: str | None = None) -> SignalDataset:
        ids = self.ids(split)
        if not ids:
            raise ManifestError(f"split '{split}' has no entries")
        return SignalDataset.from_bundles(self.load_bundles(split), ids)

    def write(self, path) -> None:
        lines = ["#manifest\t1", f"#root\t{self.root}", "#modalities\t" + "\t".join(self.modalities)]
        for m in self.modalities:
            lo, hi = self.ranges[m]
            lines.append(f"#range\t{m}\t{lo!r}\t{hi!r}")
        for name in sorted(self.splits):
            lines.append(f"#split\t{name}\t" + ",".join(str(i) for i in sorted(self.splits[name])))
        for e in self.entries:
            for m in self.modalities:
                lines.append(f"{e['id']}\t{m}\t{e['paths'][m]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "Manifest":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ManifestError(f"{path}: no such manifest") from None
        root, modalities, ranges, splits, rows = None, [], {}, {}, {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if line.startswith("#"):
                key = parts[0][1:]
                if key == "root":
                    root = parts[1]
                elif key == "modalities":
                    modalities = parts[1:]
                elif key == "range":
                    ranges[parts[1]] = (float(parts[2]), float(parts[3]))
                elif key == "split":
                    splits[parts[1]] = [int(x) for x in parts[2].split(",") if x]
                continue
            if len(parts) != 3:
                raise ManifestError(f"{path}:{n}: expected id<TAB>modality<TAB>path")
            rows.setdefault(int(parts[0]), {})[parts[1]] = parts[2]
        if root is None:
            root = str(Path(path).parent)
        if sorted(rows) != list(range(len(rows))):
            raise ManifestError(f"{path}: entry ids are not dense 0..N-1")
        entries = []
        for i in range(len(rows)):
            if set(rows[i]) != set(modalities):
                raise ManifestError(f"{path}: entry {i} does not list every modality")
            stem = Path(rows[i][modalities[0]]).stem
            entries.append({"id": i, "stem": stem, "paths": rows[i]})
        return cls(root, modalities, entries, ranges, splits)


def build_manifest(root, modalities: Sequence[str] = ("image",), holdout: int = 0) -> Manifest:
    """Scan ``root`` for signal files and pair them by file stem.

    Entries are ordered by stem.  The last ``holdout`` entries form the
    ``test`` split.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"{root}: not a directory")
    modalities = list(modalities)
    for m in modalities:
        if m not in EXTENSIONS:
            raise ManifestError(f"unknown modality '{m}'")
    found: dict[str, dict[str, str]] = {}
    for p in sorted(root.iterdir()):
        for m in modalities:
            if p.is_file() and p.suffix.lower() in EXTENSIONS[m]:
                found.setdefault(p.stem, {})[m] = p.name
    if not found:
        raise ManifestError(f"{root}: no entries")
    stems = sorted(found)
    for s in stems:
        missing = [m for m in modalities if m not in found[s]]
        if missing:
            raise ManifestError(f"entry '{s}' is missing modality {', '.join(missing)}")
    ranges, entries = {}, []
    for m in modalities:
        shapes = {}
        lo, hi = np.inf, -np.inf
        for s in stems:
            sig = load_signal(root / found[s][m])
            shapes.setdefault((sig.shape, sig.channels), []).append(found[s][m])
            lo, hi = min(lo, sig.value_range[0]), max(hi, sig.value_range[1])
        if len(shapes) > 1:
            common = max(shapes, key=lambda k: len(shapes[k]))
            offenders = sorted(f for k, v in shapes.items() if k != common for f in v)
            raise ManifestError(f"mixed shapes for modality '{m}': " + ", ".join(offenders))
        ranges[m] = (float(lo), float(hi))
    for i, s in enumerate(stems):
        entries.append({"id": i, "stem": s, "paths": found[s]})
    splits = {}
    if holdout:
        if holdout >= len(stems):
            raise ManifestError(f"holdout {holdout} leaves no training entries")
        splits["test"] = list(range(len(stems) - holdout, len(stems)))
    return Manifest(str(root), modalities, entries, ranges, splits)
