"""Multi-level spatial-search instance retrieval.

Each image yields i**2 equally sized, overlapping patches at level i
(level 1 is the whole image); a reference indexed at ``h_r`` levels
carries sum(i**2, i=1..h_r) patches.  Patch features are pushed through
the fitted processing chain and stored as float32.  The query-to-
reference distance is the mean, over query patches, of the minimum L2
distance to any reference patch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateImage,
    DimMismatch,
    EmptyInput,
    MalformedFile,
)
from .extractors import (
    ExternalProcessExtractor,
    FileBackedExtractor,
    run_protocol,
)
from .features import (
    FeatureMatrix,
    PixelGrid,
    Rect,
    fmt_float,
    iround,
    smallest_enclosing_square,
)
from .preprocess import (
    PcaWhitenModel,
    PipelineConfig,
    dump_pca_model_text,
    parse_pca_model_text,
    retrieval_pipeline_apply,
    retrieval_pipeline_fit,
)

INDEX_MAGIC = b"OTIDX1\n"


@dataclass(frozen=True)
class SpatialSearchConfig:
    h_r: int = 4
    h_q: int = 3
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.h_r < 1 or self.h_q < 1:
            raise ValueError("h_r and h_q must be at least 1")


@dataclass(frozen=True)
class ReferenceEntry:
    """Processed patch vectors (and their source rects) for one image."""

    ref_id: str
    rects: tuple
    vectors: np.ndarray  # (n_patches, k) float32

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("entry needs at least one patch vector")
        if self.rects and len(self.rects) != v.shape[0]:
            raise ValueError("rect count does not match patch count")
        object.__setattr__(self, "rects", tuple(self.rects))
        object.__setattr__(self, "vectors", v)


@dataclass(frozen=True)
class RetrievalIndex:
    entries: tuple
    model: PcaWhitenModel
    config: SpatialSearchConfig

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        expected = patch_count(self.config.h_r)
        for e in self.entries:
            if e.vectors.shape[0] != expected:
                raise ValueError(
                    f"entry {e.ref_id!r} has {e.vectors.shape[0]} patches, "
                    f"expected {expected}"
                )


def patch_count(levels: int) -> int:
    return sum(i * i for i in range(1, levels + 1))


def patch_grid(width: int, height: int, level: int) -> list:
    """The i**2 overlapping same-size patches of level ``level``.

    Patch side is round(2L / (i + 1)) per axis and the i positions per
    axis run evenly from 0 to L - side, giving roughly 50% overlap and
    full coverage; level 1 is the whole image.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    side_w = iround(width * 2.0 / (level + 1))
    side_h = iround(height * 2.0 / (level + 1))
    if side_w < 1 or side_h < 1:
        raise DegenerateImage(
            f"level {level} patches collapse on a {width}x{height} image"
        )
    if level == 1:
        return [Rect(0, 0, side_w, side_h)]
    xs = [iround(t * (width - side_w) / (level - 1)) for t in range(level)]
    ys = [iround(t * (height - side_h) / (level - 1)) for t in range(level)]
    return [Rect(x, y, side_w, side_h) for y in ys for x in xs]


def level_rects(width: int, height: int, levels: int) -> list:
    out = []
    for i in range(1, levels + 1):
        out.extend(patch_grid(width, height, i))
    return out


def _raw_patches(binding, ref_id, image, levels: int):
    """Rects and raw (pre-pipeline) patch vectors for one image."""
    if isinstance(binding, FileBackedExtractor):
        n = patch_count(levels)
        rows = [binding.extract(f"{ref_id}#{k}") for k in range(n)]
        return (), np.stack(rows)
    if isinstance(binding, ExternalProcessExtractor):
        try:
            path, w, h = image
        except (TypeError, ValueError):
            raise DimMismatch(
                "external extraction needs (path, width, height) entries"
            ) from None
        rects = level_rects(w, h, levels)
        wire = [
            (f"{ref_id}#{k}", path,
             smallest_enclosing_square(r, w, h))
            for k, r in enumerate(rects)
        ]
        matrix = run_protocol(binding.command, wire)
        return tuple(rects), matrix.values.copy()
    if not isinstance(image, PixelGrid):
        raise DimMismatch("toy extraction needs PixelGrid images")
    rects = level_rects(image.width, image.height, levels)
    rows = [
        binding.extract(image, r, square_mode=True) for r in rects
    ]
    return tuple(rects), np.stack(rows)


def build_index(references, config: SpatialSearchConfig, binding
                ) -> RetrievalIndex:
    """Extract all reference patches, fit the chain on them, store both.

    ``references`` is a sequence of (id, image) pairs (see
    :func:`_raw_patches` for what "image" means per binding).
    """
    refs = list(references)
    if len(refs) < 2:
        raise EmptyInput("index construction needs at least two references")
    per_ref = []
    for ref_id, image in refs:
        rects, raw = _raw_patches(binding, ref_id, image, config.h_r)
        per_ref.append((ref_id, rects, raw))
    pooled = np.vstack([raw for _, _, raw in per_ref])
    model = retrieval_pipeline_fit(pooled, config.pipeline)
    entries = []
    for ref_id, rects, raw in per_ref:
        processed = np.stack(
            [retrieval_pipeline_apply(model, config.pipeline, row)
             for row in raw]
        ).astype(np.float32)
        entries.append(ReferenceEntry(ref_id, rects, processed))
    return RetrievalIndex(tuple(entries), model, config)


def patch_to_ref_distance(query_vec, entry_vectors) -> float:
    """Minimum L2 distance from one query patch to any reference patch."""
    q = np.asarray(query_vec, dtype=np.float64)
    r = np.asarray(entry_vectors, dtype=np.float64)
    if r.ndim != 2 or q.shape != (r.shape[1],):
        raise DimMismatch(
            f"query dim {q.shape} vs reference patches {r.shape}"
        )
    d = np.sqrt(((r - q) ** 2).sum(axis=1))
    return float(d.min())


def query_distance(query_vecs, entry_vectors) -> float:
    """Mean over query patches of the min distance to the reference."""
    q = np.asarray(query_vecs, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] < 1:
        raise EmptyInput("need at least one query patch")
    r = np.asarray(entry_vectors, dtype=np.float64)
    if r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise DimMismatch(
            f"query patches {q.shape} vs reference patches {r.shape}"
        )
    d = np.sqrt(((q[:, None, :] - r[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean())


def query_patch_vectors(index: RetrievalIndex, query, binding,
                        h_q: int | None = None) -> np.ndarray:
    """Processed query patch vectors (float32, like the index side)."""
    levels = h_q if h_q is not None else index.config.h_q
    if levels < 1:
        raise ValueError("h_q must be at least 1")
    if isinstance(query, FeatureMatrix):
        raw = query.values
    elif isinstance(query, np.ndarray):
        raw = np.atleast_2d(np.asarray(query, dtype=np.float64))
    else:
        _, raw = _raw_patches(binding, "q", query, levels)
    processed = np.stack(
        [retrieval_pipeline_apply(index.model, index.config.pipeline, row)
         for row in raw]
    )
    return processed.astype(np.float32)


def search(index: RetrievalIndex, query, binding=None, *,
           h_q: int | None = None, top_k: int = 10) -> list:
    """Rank references by ascending distance to the query.

    ``query`` may be an image (extracted through ``binding``) or an
    already-extracted raw patch matrix.  Returns at most ``top_k``
    (reference id, distance) pairs; ties order by reference id.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    q = query_patch_vectors(index, query, binding, h_q)
    scored = [
        (query_distance(q, e.vectors), e.ref_id) for e in index.entries
    ]
    scored.sort()
    return [(ref_id, dist) for dist, ref_id in scored[:top_k]]


def save_index(index: RetrievalIndex, path) -> None:
    """Binary container; reload reproduces rankings bit-exactly."""
    cfg = index.config
    pl = cfg.pipeline
    model_bytes = dump_pca_model_text(index.model).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        cfg_line = (
            f"{cfg.h_r}\t{cfg.h_q}\t{pl.pca_dim}\t{fmt_float(pl.power)}\t"
            f"{fmt_float(pl.epsilon)}\n"
        )
        fh.write(cfg_line.encode("utf-8"))
        fh.write(struct.pack("<I", len(model_bytes)))
        fh.write(model_bytes)
        fh.write(struct.pack("<I", len(index.entries)))
        for e in index.entries:
            fh.write(e.ref_id.encode("utf-8") + b"\n")
            fh.write(struct.pack("<I", len(e.rects)))
            for r in e.rects:
                fh.write(struct.pack("<IIII", r.x, r.y, r.w, r.h))
            n, k = e.vectors.shape
            fh.write(struct.pack("<II", n, k))
            fh.write(e.vectors.astype("<f4").tobytes(order="C"))


def load_index(path) -> RetrievalIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(INDEX_MAGIC):
        raise MalformedFile(f"{path}: bad index magic")
    off = len(INDEX_MAGIC)
    nl = blob.find(b"\n", off)
    if nl < 0:
        raise MalformedFile(f"{path}: missing config line")
    try:
        h_r_s, h_q_s, dim_s, pow_s, eps_s = (
            blob[off:nl].decode("utf-8").split("\t")
        )
        config = SpatialSearchConfig(
            int(h_r_s), int(h_q_s),
            PipelineConfig(int(dim_s), float(pow_s), float(eps_s)),
        )
    except (ValueError, UnicodeDecodeError):
        raise MalformedFile(f"{path}: bad config line") from None
    off = nl + 1

    def _u32(pos):
        if pos + 4 > len(blob):
            raise MalformedFile(f"{path}: truncated index")
        return struct.unpack_from("<I", blob, pos)[0], pos + 4

    mlen, off = _u32(off)
    if off + mlen > len(blob):
        raise MalformedFile(f"{path}: truncated model block")
    model = parse_pca_model_text(
        blob[off : off + mlen].decode("utf-8"), path
    )
    off += mlen
    n_refs, off = _u32(off)
    entries = []
    for _ in range(n_refs):
        nl = blob.find(b"\n", off)
        if nl < 0:
            raise MalformedFile(f"{path}: truncated reference id")
        ref_id = blob[off:nl].decode("utf-8")
        off = nl + 1
        n_rects, off = _u32(off)
        rects = []
        for _ in range(n_rects):
            if off + 16 > len(blob):
                raise MalformedFile(f"{path}: truncated rect block")
            x, y, w, h = struct.unpack_from("<IIII", blob, off)
            rects.append(Rect(x, y, w, h))
            off += 16
        n, off = _u32(off)
        k, off = _u32(off)
        need = n * k * 4
        if off + need > len(blob):
            raise MalformedFile(f"{path}: truncated vector block")
        vectors = np.frombuffer(
            blob, dtype="<f4", count=n * k, offset=off
        ).reshape(n, k)
        off += need
        try:
            entries.append(ReferenceEntry(ref_id, tuple(rects), vectors))
        except ValueError as exc:
            raise MalformedFile(f"{path}: {exc}") from exc
    if off != len(blob):
        raise MalformedFile(f"{path}: trailing bytes")
    try:
        return RetrievalIndex(tuple(entries), model, config)
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc


