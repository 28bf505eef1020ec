"""Pluggable feature-extraction boundary.

Three bindings share one ``extract`` signature:

* :class:`ToyPixelExtractor` pools a region of a :class:`PixelGrid` into a
  g x g grid of mean cell intensities (dimension g**2).
* :class:`FileBackedExtractor` is a pure lookup into a loaded
  :class:`FeatureMatrix`, keyed by representation id.
* :class:`ExternalProcessExtractor` talks the line protocol to a subprocess:
  request ``id<TAB>image_path<TAB>x,y,w,h``, reply ``id<TAB>v1,v2,...``
  (comma-separated decimals), one reply per request in any order; the
  process must exit 0 once stdin is closed.  Rotation/mirror geometry is
  appended to the region field as ``;rot=<deg>;mir=<0|1>``.
"""

from __future__ import annotations

import math
import shlex
import subprocess

import numpy as np

from .errors import ExtractorFailure, ProtocolViolation, UnknownId
from .features import (
    FeatureMatrix,
    PixelGrid,
    Rect,
    smallest_enclosing_square,
)


def format_region(rect: Rect, rotation_degrees: float = 0.0,
                  mirrored: bool = False) -> str:
    """Wire encoding of a region, with geometry suffix when non-trivial."""
    base = f"{rect.x},{rect.y},{rect.w},{rect.h}"
    if rotation_degrees != 0.0 or mirrored:
        base += f";rot={rotation_degrees!r};mir={1 if mirrored else 0}"
    return base


def rotate_nearest(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counterclockwise about the image centre.

    Nearest-neighbour sampling; out-of-frame sources clamp to the edge
    (edge replication).  Output shape equals input shape.
    """
    if degrees == 0.0:
        return image
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dx, dy = xs - cx, ys - cy
    # Inverse mapping of a CCW rotation (y axis points down).
    src_x = cos_t * dx - sin_t * dy + cx
    src_y = sin_t * dx + cos_t * dy + cy
    src_x = np.clip(np.rint(src_x).astype(np.intp), 0, w - 1)
    src_y = np.clip(np.rint(src_y).astype(np.intp), 0, h - 1)
    return image[src_y, src_x]


def _cell_bounds(length: int, cells: int, j: int) -> tuple:
    # Cells partition [0, length) when length >= cells; for smaller
    # regions neighbouring cells share pixels so no cell is ever empty.
    start = min(j * length // cells, length - 1)
    stop = max((j + 1) * length // cells, start + 1)
    return start, stop


class ToyPixelExtractor:
    """Deterministic g x g mean-intensity pooling over pixel regions."""

    def __init__(self, grid_cells: int):
        if grid_cells < 1:
            raise ValueError("grid_cells must be at least 1")
        self.grid_cells = grid_cells

    @property
    def dim(self) -> int:
        return self.grid_cells * self.grid_cells

    def extract(self, image: PixelGrid, region: Rect | None = None, *,
                square_mode: bool = False, rotation_degrees: float = 0.0,
                mirrored: bool = False) -> np.ndarray:
        if not isinstance(image, PixelGrid):
            raise ExtractorFailure(
                "toy extractor requires a PixelGrid image"
            )
        rect = region if region is not None else image.full_rect()
        rect.require_within(image.width, image.height)
        if square_mode:
            rect = smallest_enclosing_square(rect, image.width, image.height)
        pixels = image.intensities
        if rotation_degrees != 0.0:
            pixels = rotate_nearest(pixels, rotation_degrees)
        patch = pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
        if mirrored:
            patch = patch[:, ::-1]
        g = self.grid_cells
        out = np.empty(g * g, dtype=np.float64)
        for r in range(g):
            y0, y1 = _cell_bounds(rect.h, g, r)
            for c in range(g):
                x0, x1 = _cell_bounds(rect.w, g, c)
                out[r * g + c] = patch[y0:y1, x0:x1].mean()
        return out


class FileBackedExtractor:
    """Pure lookup of precomputed vectors by representation id."""

    def __init__(self, matrix: FeatureMatrix):
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.dim

    def extract(self, image, region: Rect | None = None, *,
                square_mode: bool = False, rotation_degrees: float = 0.0,
                mirrored: bool = False) -> np.ndarray:
        if not isinstance(image, str):
            raise ExtractorFailure(
                "file-backed extractor requires a representation id"
            )
        try:
            return self.matrix.row(image)
        except KeyError:
            raise UnknownId(f"no stored vector for id {image!r}") from None


class ExternalProcessExtractor:
    """One-shot line-protocol client around an external command.

    ``square_mode`` is resolved on this side, so it needs the image
    dimensions (``width``/``height`` arguments).
    """

    def __init__(self, command: str):
        if not command.strip():
            raise ValueError("external extractor command is empty")
        self.command = command

    def extract(self, image, region: Rect | None = None, *,
                square_mode: bool = False, rotation_degrees: float = 0.0,
                mirrored: bool = False, width: int | None = None,
                height: int | None = None) -> np.ndarray:
        if not isinstance(image, str):
            raise ExtractorFailure(
                "external extractor requires an image path"
            )
        if region is None:
            if width is None or height is None:
                raise ExtractorFailure(
                    "external extraction of the full image needs explicit "
                    "dimensions"
                )
            region = Rect(0, 0, width, height)
        if square_mode:
            if width is None or height is None:
                raise ExtractorFailure(
                    "square_mode needs image dimensions for an "
                    "external extractor"
                )
            region = smallest_enclosing_square(region, width, height)
        field = format_region(region, rotation_degrees, mirrored)
        matrix = run_protocol(self.command, [("r0", image, field)])
        return matrix.values[0]


def run_protocol(command: str, requests) -> FeatureMatrix:
    """Run one protocol session; ``requests`` are (id, path, region) tuples.

    ``region`` may be a :class:`Rect` or a preformatted region field.
    Replies are matched by id and returned in request order.
    """
    items = []
    for rid, path, region in requests:
        field = format_region(region) if isinstance(region, Rect) else region
        items.append((rid, f"{rid}\t{path}\t{field}\n"))
    if not items:
        raise ValueError("no requests for protocol session")

    argv = shlex.split(command)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
    except OSError as exc:
        raise ExtractorFailure(f"cannot start extractor: {exc}") from exc
    try:
        out, err = proc.communicate("".join(line for _, line in items))
    except Exception as exc:
        proc.kill()
        proc.wait()
        raise ExtractorFailure(f"extractor session failed: {exc}") from exc
    if proc.returncode != 0:
        detail = err.strip().splitlines()[-1] if err.strip() else ""
        raise ExtractorFailure(
            f"extractor exited with status {proc.returncode}: {detail}"
        )

    replies: dict = {}
    for line in out.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ExtractorFailure(f"malformed reply line {line!r}")
        rid, payload = parts
        try:
            vec = np.asarray(
                [float(p) for p in payload.split(",")], dtype=np.float64
            )
        except ValueError:
            raise ExtractorFailure(
                f"malformed reply vector for id {rid!r}"
            ) from None
        if rid in replies:
            raise ProtocolViolation(f"duplicate reply for id {rid!r}")
        replies[rid] = vec

    wanted = [rid for rid, _ in items]
    unknown = set(replies) - set(wanted)
    if unknown:
        raise ProtocolViolation(
            f"reply for unrequested id {sorted(unknown)[0]!r}"
        )
    missing = [rid for rid in wanted if rid not in replies]
    if missing:
        raise ProtocolViolation(f"missing reply for id {missing[0]!r}")
    dims = {replies[rid].size for rid in wanted}
    if len(dims) != 1:
        raise ProtocolViolation(f"mixed reply dimensions {sorted(dims)}")
    rows = np.stack([replies[rid] for rid in wanted])
    if not np.all(np.isfinite(rows)):
        raise ProtocolViolation("non-finite value in extractor reply")
    return FeatureMatrix(tuple(wanted), rows)


def external_protocol_roundtrip(command: str, requests) -> FeatureMatrix:
    """Batch extraction through the external line protocol."""
    return run_protocol(command, requests)


def extract(binding, image, region: Rect | None = None, *,
            square_mode: bool = False, rotation_degrees: float = 0.0,
            mirrored: bool = False, **kwargs) -> np.ndarray:
    """Dispatch a single extraction through any binding."""
    return binding.extract(
        image,
        region,
        square_mode=square_mode,
        rotation_degrees=rotation_degrees,
        mirrored=mirrored,
        **kwargs,
    )
