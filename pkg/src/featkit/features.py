"""Feature and image data model plus file ingestion/persistence.

File formats handled here:

* TSV features: one ``id<TAB>v1<TAB>v2<TAB>...`` row per vector, decimal
  floats, UTF-8, no header.
* Binary features (``FVEC1``): magic bytes ``FVEC1\\n``, u32-LE row count,
  u32-LE dimension, row-major IEEE-754 float32 LE payload, then one UTF-8
  newline-terminated id line per row.
* Labels: ``id<TAB>label`` per line; repeated ids accumulate a label set.
* Images: minimal grayscale PGM (P2/P5) reader/writer, intensities in [0, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, MalformedFile, RegionOutOfBounds

FVEC_MAGIC = b"FVEC1\n"


def fmt_float(x: float) -> str:
    """Shortest decimal text that round-trips the float exactly."""
    return repr(float(x))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rect origin must be non-negative, got {self}")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect sides must be positive, got {self}")

    def within(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def require_within(self, width: int, height: int) -> None:
        if not self.within(width, height):
            raise RegionOutOfBounds(
                f"rect {self} exceeds {width}x{height} image bounds"
            )


def iround(x: float) -> int:
    """Round half away from zero (positive arguments only)."""
    return int(math.floor(x + 0.5))


def smallest_enclosing_square(rect: Rect, width: int, height: int) -> Rect:
    """Smallest square containing ``rect``, kept inside the image.

    The square is centred on the rectangle, then shifted to stay in bounds.
    It shrinks only when the image's short side is smaller than the square,
    in which case containment is impossible and best-effort overlap is kept.
    """
    rect.require_within(width, height)
    side = max(rect.w, rect.h)
    side = min(side, width, height)
    x = rect.x + (rect.w - side) // 2
    y = rect.y + (rect.h - side) // 2
    x = min(max(x, 0), width - side)
    y = min(max(y, 0), height - side)
    return Rect(x, y, side, side)


@dataclass(frozen=True)
class PixelGrid:
    """Grayscale image with intensities in [0, 1], row-major."""

    intensities: np.ndarray  # (height, width) float64

    def __post_init__(self):
        a = np.asarray(self.intensities, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ValueError("intensities must be a non-empty 2-D array")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("intensities must be finite and within [0, 1]")
        object.__setattr__(self, "intensities", a)

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "PixelGrid":
        a = np.asarray(values, dtype=np.float64)
        if a.size != width * height:
            raise ValueError(
                f"expected {width * height} intensities, got {a.size}"
            )
        return cls(a.reshape(height, width))

    def full_rect(self) -> Rect:
        return Rect(0, 0, self.width, self.height)


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense feature rows keyed by unique string ids.

    Treated as immutable after construction; safe to share across threads.
    """

    ids: tuple
    values: np.ndarray  # (n, dim) float64

    def __post_init__(self):
        ids = tuple(self.ids)
        a = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("values must be a 2-D array")
        if len(ids) != a.shape[0]:
            raise ValueError(
                f"{len(ids)} ids for {a.shape[0]} rows"
            )
        if a.shape[0] > 0 and a.shape[1] < 1:
            raise ValueError("feature dimension must be at least 1")
        for i in ids:
            if not i or "\t" in i or "\n" in i or "\r" in i:
                raise ValueError(f"invalid feature id {i!r}")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate feature ids")
        if not np.all(np.isfinite(a)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", a)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def index_of(self, feature_id: str) -> int:
        try:
            return self._index[feature_id]
        except AttributeError:
            object.__setattr__(
                self, "_index", {fid: i for i, fid in enumerate(self.ids)}
            )
            return self._index[feature_id]

    def row(self, feature_id: str) -> np.ndarray:
        return self.values[self.index_of(feature_id)].copy()


def load_features(path, fmt: str = "tsv") -> FeatureMatrix:
    """Read a feature matrix from ``path`` in ``tsv`` or ``binary`` format."""
    if fmt == "tsv":
        return _load_tsv(path)
    if fmt == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown feature format {fmt!r}")


def save_features(matrix: FeatureMatrix, path, fmt: str = "tsv") -> None:
    """Write ``matrix`` so that :func:`load_features` can read it back.

    The binary format stores float32 payloads; matrices whose values are
    float32-representable round-trip bit-exactly.
    """
    if matrix.n == 0:
        raise EmptyInput("refusing to write an empty feature matrix")
    if fmt == "tsv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for fid, row in zip(matrix.ids, matrix.values):
                cells = "\t".join(fmt_float(v) for v in row)
                fh.write(f"{fid}\t{cells}\n")
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(FVEC_MAGIC)
            fh.write(struct.pack("<II", matrix.n, matrix.dim))
            fh.write(matrix.values.astype("<f4").tobytes(order="C"))
            for fid in matrix.ids:
                fh.write(fid.encode("utf-8") + b"\n")
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def _load_tsv(path) -> FeatureMatrix:
    ids, rows = [], []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise MalformedFile(f"{path}:{lineno}: expected id and values")
            try:
                row = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise MalformedFile(
                    f"{path}:{lineno}: ragged row ({len(row)} != {dim})"
                )
            ids.append(parts[0])
            rows.append(row)
    if not rows:
        raise MalformedFile(f"{path}: empty feature file")
    return _build_matrix(path, ids, np.asarray(rows, dtype=np.float64))


def _load_binary(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(FVEC_MAGIC):
        raise MalformedFile(f"{path}: bad magic bytes")
    off = len(FVEC_MAGIC)
    if len(blob) < off + 8:
        raise MalformedFile(f"{path}: truncated header")
    n, d = struct.unpack_from("<II", blob, off)
    off += 8
    if n == 0 or d == 0:
        raise MalformedFile(f"{path}: empty matrix rejected (n={n}, d={d})")
    need = n * d * 4
    if len(blob) < off + need:
        raise MalformedFile(f"{path}: truncated payload")
    values = (
        np.frombuffer(blob, dtype="<f4", count=n * d, offset=off)
        .reshape(n, d)
        .astype(np.float64)
    )
    off += need
    tail = blob[off:]
    lines = tail.split(b"\n")
    if len(lines) != n + 1 or lines[-1] != b"":
        raise MalformedFile(f"{path}: expected exactly {n} id lines")
    try:
        ids = [ln.decode("utf-8") for ln in lines[:-1]]
    except UnicodeDecodeError as exc:
        raise MalformedFile(f"{path}: undecodable id line") from exc
    return _build_matrix(path, ids, values)


def _build_matrix(path, ids, values) -> FeatureMatrix:
    try:
        return FeatureMatrix(tuple(ids), values)
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc


def load_labels(path) -> dict:
    """Read ``id<TAB>label`` lines into an id -> set-of-labels mapping."""
    labels: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise MalformedFile(
                    f"{path}:{lineno}: expected 'id<TAB>label'"
                )
            labels.setdefault(parts[0], set()).add(parts[1])
    if not labels:
        raise MalformedFile(f"{path}: empty label file")
    return labels


def save_labels(labels: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fid, val in labels.items():
            vals = sorted(val) if isinstance(val, (set, frozenset)) else [val]
            for v in vals:
                fh.write(f"{fid}\t{v}\n")


def single_labels(labels: dict) -> dict:
    """Collapse a multi-label mapping to single labels, or fail loudly."""
    out = {}
    for fid, val in labels.items():
        if isinstance(val, (set, frozenset, list, tuple)):
            if len(val) != 1:
                raise ValueError(
                    f"id {fid!r} carries {len(val)} labels; expected one"
                )
            out[fid] = next(iter(val))
        else:
            out[fid] = val
    return out


def load_pgm(path) -> PixelGrid:
    """Minimal grayscale PGM loader (P2 ASCII and P5 single-byte binary)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        magic, rest = blob.split(None, 1)
    except ValueError:
        raise MalformedFile(f"{path}: not a PGM file") from None
    if magic not in (b"P2", b"P5"):
        raise MalformedFile(f"{path}: unsupported PGM magic {magic!r}")

    # Header tokens may be interleaved with '#' comment lines.
    tokens = []
    pos = 0
    while len(tokens) < 3:
        while pos < len(rest) and rest[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(rest):
            raise MalformedFile(f"{path}: truncated PGM header")
        if rest[pos : pos + 1] == b"#":
            nl = rest.find(b"\n", pos)
            pos = len(rest) if nl < 0 else nl + 1
            continue
        end = pos
        while end < len(rest) and not rest[end : end + 1].isspace():
            end += 1
        tokens.append(rest[pos:end])
        pos = end
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedFile(f"{path}: non-numeric PGM header") from None
    if width < 1 or height < 1 or maxval < 1:
        raise MalformedFile(f"{path}: degenerate PGM header")

    if magic == b"P5":
        if maxval > 255:
            raise MalformedFile(f"{path}: only single-byte P5 supported")
        data = rest[pos + 1 : pos + 1 + width * height]
        if len(data) != width * height:
            raise MalformedFile(f"{path}: truncated P5 payload")
        pixels = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
    else:
        try:
            pixels = np.asarray(
                [int(t) for t in rest[pos:].split()], dtype=np.float64
            )
        except ValueError:
            raise MalformedFile(f"{path}: non-numeric P2 payload") from None
        if pixels.size != width * height:
            raise MalformedFile(f"{path}: P2 payload size mismatch")
    if pixels.size and pixels.max() > maxval:
        raise MalformedFile(f"{path}: sample exceeds maxval")
    return PixelGrid.from_flat(width, height, pixels / maxval)


def save_pgm(grid: PixelGrid, path, maxval: int = 255) -> None:
    if not 1 <= maxval <= 255:
        raise ValueError("maxval must be in [1, 255]")
    data = np.rint(grid.intensities * maxval).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (grid.width, grid.height, maxval))
        fh.write(data.tobytes(order="C"))
