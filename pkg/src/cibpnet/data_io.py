"""Dataset ingestion and pixel scaling.

Readers for IDX image tensors, PGM images (binary P5 and ASCII P2), and CSV
matrices, plus train/test splitting and missing-data mask construction.
Pixel values are mapped affinely into the open interval (-1, 1) with a
1e-6 margin so the sigmoid inverse of any loaded value stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
OPEN_MARGIN = 1e-6

# dimension sanity bounds for parse errors, far beyond any desk-scale input
_MAX_DIM = 2**31
_MAX_ELEMENTS = 2**40


class DataFormatError(ValueError):
    """Raised for malformed data files, with a message naming the defect."""


def scale_pixels(p: np.ndarray | float, maxval: int = 255) -> np.ndarray:
    """Map integer pixel values in [0, maxval] into the open interval."""
    p = np.asarray(p, dtype=np.float64)
    return (2.0 * p / maxval - 1.0) * (1.0 - OPEN_MARGIN)


def unscale_pixels(u: np.ndarray | float, maxval: int = 255) -> np.ndarray:
    """Exact integer inverse of :func:`scale_pixels` for in-range values."""
    u = np.asarray(u, dtype=np.float64)
    return np.rint((u / (1.0 - OPEN_MARGIN) + 1.0) * maxval / 2.0).astype(np.int64)


def to_pixel_space(u: np.ndarray | float, maxval: int = 255) -> np.ndarray:
    """Continuous pixel-space image of model values, without rounding."""
    u = np.asarray(u, dtype=np.float64)
    return (u / (1.0 - OPEN_MARGIN) + 1.0) * maxval / 2.0


@dataclass
class Dataset:
    """Observations in (-1, 1)^K with optional per-pixel observation masks.

    ``masks`` entries are True where the pixel is observed.  ``image_shape``
    is (height, width) when the vectors are row-major flattened images, and
    ``pixel_maxval`` records the integer scale the data came from.
    """

    observations: np.ndarray
    masks: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None
    pixel_maxval: int | None = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 2:
            raise ValueError(f"observations must be 2-D, got shape {obs.shape}")
        if obs.size and np.max(np.abs(obs)) >= 1.0:
            raise ValueError("observations must lie strictly inside (-1, 1)")
        self.observations = obs
        if self.masks is not None:
            m = np.asarray(self.masks, dtype=bool)
            if m.shape != obs.shape:
                raise ValueError(
                    f"mask shape {m.shape} does not match data shape {obs.shape}"
                )
            self.masks = m
        if self.image_shape is not None:
            h, w = self.image_shape
            if h * w != obs.shape[1]:
                raise ValueError(
                    f"image shape {self.image_shape} does not cover {obs.shape[1]} pixels"
                )

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def width(self) -> int:
        return self.observations.shape[1]

    def copy(self) -> "Dataset":
        return Dataset(
            self.observations.copy(),
            None if self.masks is None else self.masks.copy(),
            self.image_shape,
            self.pixel_maxval,
        )


def load_idx(path: str | Path) -> Dataset:
    """Read a 3-D unsigned-byte IDX image tensor into a Dataset.

    Big-endian header: magic 0x00000803 then three uint32 dimensions.  Images
    are flattened row-major.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"truncated file: {len(raw)} bytes, header needs 4")
    magic = int.from_bytes(raw[:4], "big")
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(
            f"bad magic 0x{magic:08x} (expected 0x{IDX_IMAGE_MAGIC:08x})"
        )
    if len(raw) < 16:
        raise DataFormatError(f"truncated file: {len(raw)} bytes, header needs 16")
    n, h, w = (int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(3))
    if max(n, h, w) >= _MAX_DIM or n * h * w >= _MAX_ELEMENTS:
        raise DataFormatError(f"dimension overflow: {n}x{h}x{w}")
    need = 16 + n * h * w
    if len(raw) < need:
        raise DataFormatError(f"truncated file: expected {need} bytes, got {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=16)
    obs = scale_pixels(pixels.reshape(n, h * w), 255)
    return Dataset(obs, image_shape=(h, w), pixel_maxval=255)


class _PgmScanner:
    """Tokenizer for PGM headers that tracks the byte offset for errors."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def _skip_separators(self):
        while self.pos < len(self.raw):
            c = self.raw[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = self.raw.find(b"\n", self.pos)
                self.pos = len(self.raw) if nl < 0 else nl + 1
            else:
                return

    def token(self) -> tuple[int, bytes]:
        self._skip_separators()
        start = self.pos
        while self.pos < len(self.raw) and not self.raw[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if self.pos == start:
            raise DataFormatError(f"malformed header at byte offset {start}: missing token")
        return start, self.raw[start : self.pos]

    def int_token(self, what: str) -> int:
        start, tok = self.token()
        try:
            return int(tok)
        except ValueError:
            raise DataFormatError(
                f"malformed header at byte offset {start}: bad {what} {tok!r}"
            ) from None


def load_pgm(path: str | Path) -> Dataset:
    """Read one grayscale PGM image (P5 binary or P2 ASCII) as a Dataset."""
    raw = Path(path).read_bytes()
    sc = _PgmScanner(raw)
    _, magic = sc.token()
    if magic not in (b"P2", b"P5"):
        raise DataFormatError(f"malformed header at byte offset 0: magic {magic!r}")
    w = sc.int_token("width")
    h = sc.int_token("height")
    maxval = sc.int_token("maxval")
    if not (0 < maxval < 65536):
        raise DataFormatError(
            f"malformed header at byte offset {sc.pos}: maxval {maxval} outside 1..65535"
        )
    if h * w >= _MAX_ELEMENTS or max(h, w) >= _MAX_DIM:
        raise DataFormatError(f"dimension overflow: {w}x{h}")
    count = h * w
    if magic == b"P5":
        sc.pos += 1  # single whitespace byte after maxval
        bytes_per = 2 if maxval > 255 else 1
        need = sc.pos + count * bytes_per
        if len(raw) < need:
            raise DataFormatError(
                f"truncated file: expected {need} bytes, got {len(raw)}"
            )
        dt = ">u2" if bytes_per == 2 else np.uint8
        pixels = np.frombuffer(raw, dtype=dt, count=count, offset=sc.pos)
        pixels = pixels.astype(np.int64)
    else:
        vals = []
        for _ in range(count):
            vals.append(sc.int_token("pixel"))
        pixels = np.array(vals, dtype=np.int64)
    if pixels.size and (pixels.min() < 0 or pixels.max() > maxval):
        raise DataFormatError(f"pixel value outside 0..{maxval}")
    obs = scale_pixels(pixels.reshape(1, count), maxval)
    return Dataset(obs, image_shape=(h, w), pixel_maxval=maxval)


def write_pgm(path: str | Path, image: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D array of model values in (-1, 1) as a binary PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    pix = np.clip(unscale_pixels(image, maxval), 0, maxval)
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    if maxval > 255:
        body = pix.astype(">u2").tobytes()
    else:
        body = pix.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def load_csv(path: str | Path) -> Dataset:
    """Read a CSV matrix of values already in (-1, 1), one image per row.

    A comment line of the form ``# W,H`` declares the image shape (width then
    height); other ``#`` lines are ignored.
    """
    shape = None
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            parts = [p.strip() for p in body.split(",")]
            if shape is None and len(parts) == 2 and all(p.isdigit() for p in parts):
                w, h = int(parts[0]), int(parts[1])
                shape = (h, w)
            continue
        try:
            rows.append([float(v) for v in s.split(",")])
        except ValueError as e:
            raise DataFormatError(f"bad value on line {i + 1}: {e}") from None
    if not rows:
        raise DataFormatError("no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"ragged rows: widths {sorted(widths)}")
    obs = np.array(rows, dtype=np.float64)
    if np.max(np.abs(obs)) >= 1.0:
        raise DataFormatError("values must lie strictly inside (-1, 1)")
    return Dataset(obs, image_shape=shape)


def save_csv(path: str | Path, dataset: Dataset) -> None:
    lines = []
    if dataset.image_shape is not None:
        h, w = dataset.image_shape
        lines.append(f"# {w},{h}")
    for row in dataset.observations:
        lines.append(",".join(format(v, ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mask_csv(path: str | Path, dataset: Dataset) -> Dataset:
    """Attach a 0/1 CSV mask (1 = observed) matching the data shape."""
    rows = []
    for line in Path(path).read_text().splitlines():
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        rows.append([int(v) for v in s.split(",")])
    m = np.array(rows, dtype=bool)
    if m.shape != dataset.observations.shape:
        raise DataFormatError(
            f"mask shape {m.shape} does not match data shape {dataset.observations.shape}"
        )
    out = dataset.copy()
    out.masks = m
    return out


def mask_bottom_half(dataset: Dataset) -> Dataset:
    """Mark the bottom half of every image missing; top ceil(h/2) rows stay.

    Idempotent: the mask depends only on the image shape.
    """
    if dataset.image_shape is None:
        raise ValueError("mask_bottom_half requires a dataset with an image shape")
    h, w = dataset.image_shape
    observed_rows = math.ceil(h / 2)
    row_mask = np.repeat(np.arange(h) < observed_rows, w)
    out = dataset.copy()
    out.masks = np.tile(row_mask, (dataset.n, 1))
    return out


def split(dataset: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic disjoint exhaustive train/test split under a seed."""
    if n_train > dataset.n:
        raise ValueError(f"n_train {n_train} exceeds dataset size {dataset.n}")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    tr, te = perm[:n_train], perm[n_train:]

    def take(idx):
        return Dataset(
            dataset.observations[idx].copy(),
            None if dataset.masks is None else dataset.masks[idx].copy(),
            dataset.image_shape,
            dataset.pixel_maxval,
        )

    return take(tr), take(te)
