"""Signal loading, segmentation and leakage-safe dataset splitting."""

from __future__ import annotations

import enum
import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptySignal,
    InsufficientData,
    MalformedFile,
    MalformedHeader,
    UnknownLabel,
    UnreadableFile,
    UnsupportedMatFeature,
    UsageError,
    VariableNotFound,
)

CANONICAL_LABELS: tuple[str, ...] = (
    "N",
    "7_BA",
    "7_IR",
    "7_OR1",
    "7_OR2",
    "7_OR3",
    "14_BA",
    "14_IR",
    "14_OR1",
    "21_BA",
    "21_IR",
    "21_OR1",
    "21_OR2",
    "21_OR3",
)
_LABEL_IDS = {name: i for i, name in enumerate(CANONICAL_LABELS)}


class Channel(str, enum.Enum):
    DRIVE_END = "DriveEnd"
    FAN_END = "FanEnd"
    BASE = "Base"
    UNKNOWN = "Unknown"


# CWRU variable-name fragments per accelerometer position.
CHANNEL_VAR_HINTS = {
    Channel.DRIVE_END: "DE_time",
    Channel.FAN_END: "FE_time",
    Channel.BASE: "BA_time",
}


class SignalFormat(str, enum.Enum):
    MAT_V5 = "MatV5"
    CSV = "Csv"
    RAW_F64LE = "RawF64LE"

    @classmethod
    def from_path(cls, path: str | Path) -> "SignalFormat":
        suffix = Path(path).suffix.lower()
        if suffix == ".mat":
            return cls.MAT_V5
        if suffix in (".csv", ".txt"):
            return cls.CSV
        if suffix in (".f64", ".bin", ".raw"):
            return cls.RAW_F64LE
        raise UsageError(f"cannot infer signal format from extension {suffix!r}")


@dataclass(frozen=True)
class FaultLabel:
    """One of the 14 canonical CWRU 0-load classes."""

    class_id: int
    name: str

    @classmethod
    def from_name(cls, name: str) -> "FaultLabel":
        try:
            return cls(_LABEL_IDS[name], name)
        except KeyError:
            raise UnknownLabel(
                f"unknown label {name!r}; expected one of {', '.join(CANONICAL_LABELS)}"
            ) from None

    @classmethod
    def from_id(cls, class_id: int) -> "FaultLabel":
        if not 0 <= class_id < len(CANONICAL_LABELS):
            raise UnknownLabel(f"class id {class_id} outside 0..{len(CANONICAL_LABELS) - 1}")
        return cls(class_id, CANONICAL_LABELS[class_id])


@dataclass(frozen=True, eq=False)
class Signal:
    samples: np.ndarray
    sample_rate: float
    source_id: str
    channel: Channel = Channel.UNKNOWN

    def __post_init__(self) -> None:
        if self.samples.size == 0:
            raise EmptySignal(f"{self.source_id}: no samples")
        if not self.sample_rate > 0:
            raise UsageError(f"sample_rate must be > 0, got {self.sample_rate}")

    def __len__(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True, eq=False)
class Segment:
    samples: np.ndarray
    label: FaultLabel
    source_id: str
    start: int

    @property
    def origin(self) -> tuple[str, int]:
        return (self.source_id, self.start)

    @property
    def stop(self) -> int:
        return self.start + int(self.samples.shape[0])


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: list[Segment]
    val: list[Segment]
    test: list[Segment]
    seed: int
    ratios: tuple[float, float, float]

    def parts(self) -> dict[str, list[Segment]]:
        return {"train": self.train, "val": self.val, "test": self.test}


# ---------------------------------------------------------------------------
# MAT-v5 subset

_MI_INT8, _MI_UINT8, _MI_INT16, _MI_UINT16, _MI_INT32, _MI_UINT32 = 1, 2, 3, 4, 5, 6
_MI_SINGLE, _MI_DOUBLE, _MI_INT64, _MI_UINT64 = 7, 9, 12, 13
_MI_MATRIX, _MI_COMPRESSED = 14, 15
_MX_DOUBLE_CLASS = 6
_MX_CLASS_NAMES = {
    1: "cell", 2: "struct", 3: "object", 4: "char", 5: "sparse", 6: "double",
    7: "single", 8: "int8", 9: "uint8", 10: "int16", 11: "uint16", 12: "int32",
    13: "uint32", 14: "int64", 15: "uint64",
}
_MI_DTYPES = {
    _MI_INT8: "i1", _MI_UINT8: "u1", _MI_INT16: "i2", _MI_UINT16: "u2",
    _MI_INT32: "i4", _MI_UINT32: "u4", _MI_SINGLE: "f4", _MI_DOUBLE: "f8",
    _MI_INT64: "i8", _MI_UINT64: "u8",
}


@dataclass
class _MatVariable:
    name: str
    data: np.ndarray | None
    problem: str | None = None


def _read_tag(buf: bytes, pos: int, endian: str) -> tuple[int, int, int, int]:
    """Return (type, nbytes, data_start, next_element_pos)."""
    if pos + 8 > len(buf):
        raise MalformedFile(f"truncated data element tag at byte {pos}")
    first, second = struct.unpack_from(endian + "II", buf, pos)
    if first >> 16:
        # small data element: 2-byte size, 2-byte type, 4 bytes payload
        return first & 0xFFFF, first >> 16, pos + 4, pos + 8
    nbytes = second
    start = pos + 8
    end = start + nbytes
    if end > len(buf):
        raise MalformedFile(f"data element at byte {pos} overruns file")
    return first, nbytes, start, start + ((nbytes + 7) // 8) * 8


def _numeric(buf: bytes, mi_type: int, start: int, nbytes: int, endian: str) -> np.ndarray:
    try:
        code = _MI_DTYPES[mi_type]
    except KeyError:
        raise UnsupportedMatFeature(f"unsupported numeric element type {mi_type}") from None
    dtype = np.dtype(endian + code)
    return np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)


def _parse_matrix(buf: bytes, start: int, end: int, endian: str) -> _MatVariable:
    pos = start
    mi, nb, ds, pos = _read_tag(buf, pos, endian)
    if mi != _MI_UINT32 or nb < 8:
        raise MalformedFile("miMATRIX without array-flags subelement")
    flags = struct.unpack_from(endian + "I", buf, ds)[0]
    mx_class = flags & 0xFF
    is_complex = bool(flags & 0x0800)

    mi, nb, ds, pos = _read_tag(buf, pos, endian)
    if mi != _MI_INT32:
        raise MalformedFile("miMATRIX without dimensions subelement")
    dims = tuple(int(d) for d in _numeric(buf, mi, ds, nb, endian))

    mi, nb, ds, pos = _read_tag(buf, pos, endian)
    if mi not in (_MI_INT8, _MI_UINT8):
        raise MalformedFile("miMATRIX without name subelement")
    name = bytes(buf[ds : ds + nb]).decode("ascii", errors="replace")

    if mx_class != _MX_DOUBLE_CLASS:
        cls = _MX_CLASS_NAMES.get(mx_class, str(mx_class))
        return _MatVariable(name, None, f"array class {cls!r} is not double")
    if is_complex:
        return _MatVariable(name, None, "complex arrays are not supported")

    mi, nb, ds, pos = _read_tag(buf, pos, endian)
    # MATLAB may store doubles in a narrower integer type; values convert exactly.
    real = _numeric(buf, mi, ds, nb, endian).astype(np.float64)
    if real.size != math.prod(dims):
        raise MalformedFile(f"variable {name!r}: {real.size} values for dims {dims}")
    # column-major storage order is the file order
    return _MatVariable(name, np.ascontiguousarray(real))


def read_mat_v5(path: str | Path) -> list[_MatVariable]:
    """Parse every top-level variable of an uncompressed MAT-v5 file."""
    buf = _read_bytes(path)
    if len(buf) < 128:
        raise MalformedHeader(f"{path}: shorter than the 128-byte MAT header")
    marker = buf[126:128]
    if marker == b"IM":
        endian = "<"
    elif marker == b"MI":
        endian = ">"
    else:
        raise MalformedHeader(f"{path}: bad endian indicator {marker!r}")
    version = struct.unpack_from(endian + "H", buf, 124)[0]
    if version != 0x0100:
        raise MalformedHeader(f"{path}: unsupported MAT version 0x{version:04x}")

    variables = []
    pos = 128
    while pos + 8 <= len(buf):
        mi, nb, ds, nxt = _read_tag(buf, pos, endian)
        if mi == _MI_COMPRESSED:
            raise UnsupportedMatFeature(f"{path}: compressed MAT elements are not supported")
        if mi == _MI_MATRIX:
            variables.append(_parse_matrix(buf, ds, ds + nb, endian))
        pos = nxt
    return variables


def write_mat_v5(path: str | Path, variables: dict[str, np.ndarray]) -> None:
    """Write real double column vectors as an uncompressed little-endian MAT-v5 file."""

    def element(mi_type: int, payload: bytes) -> bytes:
        pad = (-len(payload)) % 8
        return struct.pack("<II", mi_type, len(payload)) + payload + b"\0" * pad

    header = b"MATLAB 5.0 MAT-file, written by bearing_vit".ljust(116, b" ")
    out = [header, b"\0" * 8, struct.pack("<H", 0x0100), b"IM"]
    for name, values in variables.items():
        arr = np.asarray(values, dtype="<f8").reshape(-1)
        body = (
            element(_MI_UINT32, struct.pack("<II", _MX_DOUBLE_CLASS, 0))
            + element(_MI_INT32, struct.pack("<ii", arr.size, 1))
            + element(_MI_INT8, name.encode("ascii"))
            + element(_MI_DOUBLE, arr.tobytes())
        )
        out.append(struct.pack("<II", _MI_MATRIX, len(body)) + body)
    Path(path).write_bytes(b"".join(out))


# ---------------------------------------------------------------------------
# Loaders


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc


def _load_mat(path: str | Path, var_hint: str | None) -> np.ndarray:
    variables = read_mat_v5(path)
    names = [v.name for v in variables]
    if var_hint is None:
        matches = [v for v in variables if v.data is not None]
        if len(matches) != 1:
            raise VariableNotFound(None, names)
    else:
        matches = [v for v in variables if var_hint in v.name]
        if not matches:
            raise VariableNotFound(var_hint, names)
    chosen = matches[0]
    if chosen.data is None:
        raise UnsupportedMatFeature(f"{path}: variable {chosen.name!r}: {chosen.problem}")
    return chosen.data


def _load_csv(path: str | Path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        token = line.strip()
        if not token:
            continue
        try:
            values.append(float(token))
        except ValueError:
            if not values and lineno == 1:
                continue  # header line
            raise MalformedFile(f"{path}:{lineno}: not a number: {token!r}") from None
    return np.array(values, dtype=np.float64)


def _load_raw(path: str | Path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) % 8:
        raise MalformedFile(f"{path}: size {len(buf)} is not a multiple of 8 bytes")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


def load_signal(
    path: str | Path,
    format: SignalFormat | str | None = None,
    var_hint: str | None = None,
    *,
    sample_rate: float = 12000.0,
    channel: Channel | str = Channel.UNKNOWN,
    source_id: str | None = None,
) -> Signal:
    """Load one vibration record.

    MAT files carry no sample rate, so it always comes from the caller.
    For MAT-v5 the first variable whose name contains ``var_hint`` is used.
    """
    fmt = SignalFormat.from_path(path) if format is None else SignalFormat(format)
    if fmt is SignalFormat.MAT_V5:
        samples = _load_mat(path, var_hint)
    elif fmt is SignalFormat.CSV:
        samples = _load_csv(path)
    else:
        samples = _load_raw(path)
    if samples.size == 0:
        raise EmptySignal(f"{path}: file contains no samples")
    return Signal(
        samples=samples,
        sample_rate=float(sample_rate),
        source_id=str(path) if source_id is None else source_id,
        channel=Channel(channel),
    )


def write_raw_f64le(path: str | Path, samples: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(samples, dtype="<f8").tobytes())


def write_csv(path: str | Path, samples: np.ndarray, header: str | None = None) -> None:
    lines = [header] if header else []
    lines.extend(repr(float(v)) for v in np.asarray(samples, dtype=np.float64))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: FaultLabel
    channel: Channel = Channel.DRIVE_END
    sample_rate: float = 12000.0
    var: str | None = None

    def resolve(self, root: Path) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() else root / p

    def load(self, root: Path) -> Signal:
        hint = self.var if self.var is not None else CHANNEL_VAR_HINTS.get(self.channel)
        return load_signal(
            self.resolve(root),
            var_hint=hint,
            sample_rate=self.sample_rate,
            channel=self.channel,
            source_id=self.path,
        )


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse ``file = label=N channel=DriveEnd sample_rate=12000 [var=DE_time]`` lines."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc.strerror or exc}") from exc
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        file_part, sep, rest = line.partition("=")
        if not sep or not file_part.strip():
            raise MalformedFile(f"{path}:{lineno}: expected 'file = key=value ...'")
        fields = {}
        for token in rest.split():
            key, eq, value = token.partition("=")
            if not eq:
                raise MalformedFile(f"{path}:{lineno}: bad field {token!r}")
            fields[key] = value
        unknown = set(fields) - {"label", "channel", "sample_rate", "var"}
        if unknown or "label" not in fields:
            raise MalformedFile(f"{path}:{lineno}: need label=..., unknown keys {sorted(unknown)}")
        try:
            entries.append(
                ManifestEntry(
                    path=file_part.strip(),
                    label=FaultLabel.from_name(fields["label"]),
                    channel=Channel(fields.get("channel", Channel.DRIVE_END.value)),
                    sample_rate=float(fields.get("sample_rate", 12000.0)),
                    var=fields.get("var"),
                )
            )
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    lines = []
    for e in entries:
        line = f"{e.path} = label={e.label.name} channel={e.channel.value} sample_rate={e.sample_rate:g}"
        if e.var is not None:
            line += f" var={e.var}"
        lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Segmentation and splitting


def segment_signal(
    signal: Signal, segment_len: int, stride: int, label: FaultLabel | None = None
) -> list[Segment]:
    if segment_len < 1 or stride < 1:
        raise UsageError("segment_len and stride must be >= 1")
    n = len(signal)
    if n < segment_len:
        return []
    label = label if label is not None else FaultLabel.from_id(0)
    count = (n - segment_len) // stride + 1
    return [
        Segment(signal.samples[s : s + segment_len], label, signal.source_id, s)
        for s in range(0, count * stride, stride)
    ]


def _regions(segments: Sequence[Segment]) -> list[list[Segment]]:
    """Group segments into maximal runs of sample-range overlap per source."""
    by_source: dict[str, list[Segment]] = defaultdict(list)
    for seg in segments:
        by_source[seg.source_id].append(seg)
    regions = []
    for source in sorted(by_source):
        run: list[Segment] = []
        run_stop = -1
        for seg in sorted(by_source[source], key=lambda s: (s.start, s.stop)):
            if run and seg.start < run_stop:
                run.append(seg)
                run_stop = max(run_stop, seg.stop)
            else:
                if run:
                    regions.append(run)
                run, run_stop = [seg], seg.stop
        if run:
            regions.append(run)
    return regions


def _allocate(n: int, ratios: tuple[float, float, float], label: str) -> tuple[int, int, int]:
    n_val = max(1, round(n * ratios[1]))
    n_test = max(1, round(n * ratios[2]))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise InsufficientData(label, f"only {n} non-overlapping regions")
    return n_train, n_val, n_test


def split_dataset(
    segments: Iterable[Segment],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Assign whole overlap regions to train/val/test per class by seeded shuffle."""
    values = [float(r) for r in ratios]
    if len(values) != 3 or any(r <= 0 for r in values) or abs(sum(values) - 1.0) > 1e-9:
        raise UsageError(f"ratios must be three positive numbers summing to 1, got {values}")
    ratios = (values[0], values[1], values[2])
    by_class: dict[int, list[Segment]] = defaultdict(list)
    for seg in segments:
        by_class[seg.label.class_id].append(seg)

    parts: tuple[list[Segment], list[Segment], list[Segment]] = ([], [], [])
    for class_id in sorted(by_class):
        regions = _regions(by_class[class_id])
        name = by_class[class_id][0].label.name
        if len(regions) < 3:
            raise InsufficientData(name, f"only {len(regions)} non-overlapping regions")
        counts = _allocate(len(regions), ratios, name)
        rng = np.random.default_rng(np.random.SeedSequence([seed, class_id]))
        order = rng.permutation(len(regions))
        cursor = 0
        for part, count in zip(parts, counts):
            for idx in order[cursor : cursor + count]:
                part.extend(regions[idx])
            cursor += count
    key = lambda s: (s.label.class_id, s.source_id, s.start)  # noqa: E731
    return DatasetSplit(
        train=sorted(parts[0], key=key),
        val=sorted(parts[1], key=key),
        test=sorted(parts[2], key=key),
        seed=seed,
        ratios=ratios,
    )
