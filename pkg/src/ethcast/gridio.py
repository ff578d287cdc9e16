"""Grid frames, sequence manifests, and their on-disk formats.

RFGD frame layout (little-endian)::

    magic      4 bytes  b"RFGD"
    version    uint16   1
    variable   uint8    0 = dBZ, 1 = rain mm/h, 2 = ETH km
    timestamp  int64    seconds since the Unix epoch
    rows       uint32
    cols       uint32
    pixel_km   float32
    nodata     float32
    values     float32 * rows * cols, row-major

Manifest lines are tab separated::

    start_unix  weight  fold  rain_1;...;rain_22  eth_1;...;eth_22

where fold is 0..7, ``TEST``, or ``-`` for a sequence not yet assigned.
"""

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, FormatError, ParseError, StorageError

MAGIC = b"RFGD"
VERSION = 1
HEADER = struct.Struct("<4sHBqIIff")
DEFAULT_NODATA = -9999.0
SEQUENCE_LEN = 22
CADENCE_S = 300
ETH_MAX_KM = 16.0
TEST = "TEST"
UNASSIGNED = None


class Variable(enum.IntEnum):
    REFLECTIVITY_DBZ = 0
    RAIN_MMH = 1
    ETH_KM = 2


@dataclass(frozen=True, eq=False)
class GridFrame:
    """One 2D radar field.

    ``values`` is stored as a read-only float32 array of shape (rows, cols);
    a flat sequence of length rows*cols is accepted and reshaped.
    """

    variable: Variable
    timestamp: int
    values: np.ndarray
    pixel_km: float = 1.0
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        object.__setattr__(self, "variable", Variable(self.variable))
        object.__setattr__(self, "timestamp", int(self.timestamp))
        values = np.array(self.values, dtype=np.float32)
        if values.ndim == 1:
            raise ArgumentError("flat values need explicit geometry; use GridFrame.from_flat")
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ArgumentError(f"values must be a non-empty 2D grid, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pixel_km", float(np.float32(self.pixel_km)))
        object.__setattr__(self, "nodata", float(np.float32(self.nodata)))

    @classmethod
    def from_flat(cls, variable, timestamp, rows, cols, values, **kw):
        values = np.asarray(values, dtype=np.float32).reshape(-1)
        if rows < 1 or cols < 1:
            raise ArgumentError(f"rows and cols must be positive, got {rows}x{cols}")
        if values.size != rows * cols:
            raise ArgumentError(
                f"{values.size} values do not fill a {rows}x{cols} grid ({rows * cols} needed)"
            )
        return cls(variable, timestamp, values.reshape(rows, cols), **kw)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def valid(self):
        """Boolean mask of pixels that are not the nodata sentinel."""
        return self.values != np.float32(self.nodata)

    def with_values(self, values, variable=None):
        return replace(self, values=values, variable=self.variable if variable is None else variable)

    def check_invariants(self):
        """Raise DataError at the first pixel violating the variable's value range."""
        v = self.values.reshape(-1)
        valid = v != np.float32(self.nodata)
        if self.variable == Variable.RAIN_MMH:
            bad = valid & ~(v >= 0)
            what = "negative rain rate"
        elif self.variable == Variable.ETH_KM:
            bad = valid & ~((v >= 0) & (v <= ETH_MAX_KM))
            what = f"echo top height outside [0, {ETH_MAX_KM:g}] km"
        else:
            bad = valid & ~np.isfinite(v)
            what = "non-finite reflectivity"
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"{what} at index {i} (value {v[i]!r})")
        return self

    def equals(self, other):
        """Bitwise equality of header and values."""
        return (
            self.variable == other.variable
            and self.timestamp == other.timestamp
            and np.float32(self.pixel_km).tobytes() == np.float32(other.pixel_km).tobytes()
            and np.float32(self.nodata).tobytes() == np.float32(other.nodata).tobytes()
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def encode_frame(frame):
    frame.check_invariants()
    header = HEADER.pack(
        MAGIC, VERSION, int(frame.variable), frame.timestamp, frame.rows, frame.cols,
        frame.pixel_km, frame.nodata,
    )
    return header + frame.values.astype("<f4", copy=False).tobytes()


def write_frame(frame, path):
    data = encode_frame(frame)
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise StorageError(path, f"cannot write frame: {e.strerror or e}") from e


def _parse_header(buf, path):
    if len(buf) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, version, tag, ts, rows, cols, pixel_km, nodata = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        variable = Variable(tag)
    except ValueError:
        raise FormatError(f"{path}: unknown variable tag {tag}") from None
    return variable, ts, rows, cols, pixel_km, nodata


def decode_frame(buf, path="<bytes>"):
    variable, ts, rows, cols, pixel_km, nodata = _parse_header(buf, path)
    expected = HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"{path}: payload is {len(buf)} bytes, expected {expected}")
    values = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=HEADER.size)
    frame = GridFrame.from_flat(variable, ts, rows, cols, values, pixel_km=pixel_km, nodata=nodata)
    try:
        frame.check_invariants()
    except DataError as e:
        raise DataError(f"{path}: {e}") from None
    return frame


def read_frame(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(path, f"cannot read frame: {e.strerror or e}") from e
    return decode_frame(buf, path)


@dataclass(frozen=True)
class FrameHeader:
    variable: Variable
    timestamp: int
    rows: int
    cols: int
    pixel_km: float
    nodata: float


def read_header(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read(HEADER.size)
    except OSError as e:
        raise StorageError(path, f"cannot read frame: {e.strerror or e}") from e
    return FrameHeader(*_parse_header(buf, path))


def central_offsets(rows, cols, out_rows, out_cols):
    """Centered crop offsets with floor rounding."""
    return (rows - out_rows) // 2, (cols - out_cols) // 2


def crop(frame, row_off, col_off, out_rows, out_cols):
    if min(row_off, col_off) < 0 or min(out_rows, out_cols) < 1:
        raise ArgumentError("crop offsets must be >= 0 and sizes >= 1")
    if row_off + out_rows > frame.rows or col_off + out_cols > frame.cols:
        raise ArgumentError(
            f"crop window {out_rows}x{out_cols} at ({row_off}, {col_off}) exceeds "
            f"{frame.rows}x{frame.cols} frame"
        )
    return frame.with_values(frame.values[row_off:row_off + out_rows, col_off:col_off + out_cols])


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class SequenceRecord:
    start_timestamp: int
    event_weight: float
    rain_paths: tuple
    eth_paths: tuple
    fold: object = UNASSIGNED  # int 0..n_folds-1, TEST, or None

    def __post_init__(self):
        object.__setattr__(self, "rain_paths", tuple(str(p) for p in self.rain_paths))
        object.__setattr__(self, "eth_paths", tuple(str(p) for p in self.eth_paths))
        for name, paths in (("rain", self.rain_paths), ("eth", self.eth_paths)):
            if len(paths) != SEQUENCE_LEN:
                raise ArgumentError(f"{name} path list has {len(paths)} entries, need {SEQUENCE_LEN}")
        if not (self.fold is None or self.fold == TEST or isinstance(self.fold, (int, np.integer))):
            raise ArgumentError(f"invalid fold label {self.fold!r}")

    @property
    def timestamps(self):
        return [self.start_timestamp + CADENCE_S * k for k in range(SEQUENCE_LEN)]

    def with_fold(self, fold):
        return replace(self, fold=fold)


@dataclass
class SequenceManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, SequenceManifest) and self.records == other.records

    def select(self, fold):
        return [r for r in self.records if r.fold == fold]

    def training(self):
        return [r for r in self.records if r.fold is not None and r.fold != TEST]

    def test(self):
        return self.select(TEST)


def _fold_text(fold):
    if fold is None:
        return "-"
    return TEST if fold == TEST else str(int(fold))


def format_record(rec):
    return "\t".join([
        str(rec.start_timestamp),
        f"{rec.event_weight:.6g}",
        _fold_text(rec.fold),
        ";".join(rec.rain_paths),
        ";".join(rec.eth_paths),
    ])


def write_manifest(manifest, path):
    text = "".join(format_record(r) + "\n" for r in manifest.records)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise StorageError(path, f"cannot write manifest: {e.strerror or e}") from e


def parse_manifest(text):
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(f"expected 5 tab-separated fields, found {len(parts)}", lineno)
        start, weight, fold, rain, eth = parts
        try:
            start = int(start)
            weight = float(weight)
        except ValueError:
            raise ParseError("start timestamp or weight is not numeric", lineno) from None
        if fold == "-":
            fold = None
        elif fold != TEST:
            try:
                fold = int(fold)
            except ValueError:
                raise ParseError(f"bad fold label {fold!r}", lineno) from None
        rain, eth = rain.split(";"), eth.split(";")
        for name, paths in (("rain", rain), ("eth", eth)):
            if len(paths) != SEQUENCE_LEN:
                raise ParseError(f"{name} list has {len(paths)} paths, need {SEQUENCE_LEN}", lineno)
        records.append(SequenceRecord(start, weight, rain, eth, fold))
    return SequenceManifest(records)


def read_manifest(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(path, f"cannot read manifest: {e.strerror or e}") from e
    return parse_manifest(text)


def check_cadence(manifest, base_dir=None):
    """Validate every record's frames against their headers.

    Each rain path must hold a RAIN_MMH frame and each ETH path an ETH_KM
    frame at start + 300*k seconds.
    """
    for n, rec in enumerate(manifest.records):
        for k, (rp, ep) in enumerate(zip(rec.rain_paths, rec.eth_paths)):
            want = rec.start_timestamp + CADENCE_S * k
            for p, var in ((rp, Variable.RAIN_MMH), (ep, Variable.ETH_KM)):
                h = read_header(resolve(p, base_dir))
                if h.variable != var:
                    raise DataError(f"record {n} frame {k}: {p} holds {h.variable.name}, expected {var.name}")
                if h.timestamp != want:
                    raise DataError(
                        f"record {n} frame {k}: {p} has timestamp {h.timestamp}, expected {want}"
                    )


def resolve(path, base_dir=None):
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        return Path(base_dir) / p
    return p


# -- frame index --------------------------------------------------------------


def write_frame_index(index, path):
    """Write ``{timestamp: (rain_path, eth_path)}`` sorted by timestamp."""
    lines = [f"{ts}\t{rain}\t{eth}\n" for ts, (rain, eth) in sorted(index.items())]
    try:
        Path(path).write_text("".join(lines), encoding="utf-8")
    except OSError as e:
        raise StorageError(path, f"cannot write frame index: {e.strerror or e}") from e


def read_frame_index(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise StorageError(path, f"cannot read frame index: {e.strerror or e}") from e
    index = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected 'unix<TAB>rain_path<TAB>eth_path'", lineno)
        try:
            ts = int(parts[0])
        except ValueError:
            raise ParseError(f"bad timestamp {parts[0]!r}", lineno) from None
        if ts in index:
            raise ParseError(f"duplicate timestamp {ts}", lineno)
        index[ts] = (parts[1], parts[2])
    return index
