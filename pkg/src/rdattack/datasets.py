"""Dataset container and the IDX / CSV readers."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class DataFormatError(ValueError):
    """A dataset file is malformed or violates the dataset contract."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Flattened samples in [0, 1] with integer labels below ``class_count``."""

    samples: np.ndarray  # (n, m) float32
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float32)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataFormatError(f"samples must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataFormatError(f"{x.shape[0]} samples but labels have shape {y.shape}")
        if self.class_count <= 0:
            raise DataFormatError("class_count must be positive")
        if x.size and not (np.isfinite(x).all() and x.min() >= 0.0 and x.max() <= 1.0):
            raise DataFormatError("sample values must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise DataFormatError(f"labels must lie in [0, {self.class_count})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def m(self):
        return self.samples.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.samples[index], self.labels[index], self.class_count)

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))


def _read_bytes(path):
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, n_dims, magic, what):
    need = 4 * (1 + n_dims)
    if len(raw) < 4:
        raise DataFormatError(f"{what}: byte 0: file too short for the magic number ({len(raw)} bytes)")
    found = struct.unpack_from(">i", raw, 0)[0]
    if found != magic:
        raise DataFormatError(f"{what}: byte 0: bad magic {found}, expected {magic}")
    if len(raw) < need:
        raise DataFormatError(f"{what}: byte {len(raw)}: header truncated, needs {need} bytes")
    dims = struct.unpack_from(f">{n_dims}i", raw, 4)
    for k, d in enumerate(dims):
        if d < 0:
            raise DataFormatError(f"{what}: byte {4 + 4 * k}: negative dimension {d}")
    return dims, need


def _payload(raw, offset, count, what):
    have = len(raw) - offset
    if have < count:
        raise DataFormatError(
            f"{what}: byte {len(raw)}: data truncated, expected {count} bytes from offset {offset}, found {have}"
        )
    if have > count:
        raise DataFormatError(f"{what}: byte {offset + count}: {have - count} unexpected trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)


def load_idx(images_path, labels_path, class_count=None):
    """Read an IDX image/label file pair (plain or gzipped).

    Images are flattened row-major and divided by 255.  ``class_count``
    defaults to the largest label + 1.
    """
    raw = _read_bytes(images_path)
    (n, rows, cols), off = _header(raw, 3, IDX_IMAGES_MAGIC, "images")
    pixels = _payload(raw, off, n * rows * cols, "images")

    raw_l = _read_bytes(labels_path)
    (n_labels,), off_l = _header(raw_l, 1, IDX_LABELS_MAGIC, "labels")
    if n_labels != n:
        raise DataFormatError(f"labels: byte 4: {n_labels} labels but the image file holds {n} images")
    labels = _payload(raw_l, off_l, n_labels, "labels").astype(np.int64)

    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 1
    elif n and labels.max() >= class_count:
        bad = int(np.argmax(labels >= class_count))
        raise DataFormatError(f"labels: byte {off_l + bad}: label {labels[bad]} >= class count {class_count}")
    samples = pixels.reshape(n, rows * cols).astype(np.float32) / np.float32(255.0)
    return Dataset(samples, labels, class_count)


def _parse_csv_header(line):
    fields = {}
    body = line.lstrip("#").split()
    for item in body:
        key, sep, value = item.partition("=")
        if not sep:
            raise DataFormatError(f"line 1: malformed header item {item!r}")
        fields[key] = value
    try:
        m, c = int(fields["m"]), int(fields["C"])
    except (KeyError, ValueError):
        raise DataFormatError("line 1: header must read '# m=<m> C=<C>'") from None
    if m <= 0 or c <= 0:
        raise DataFormatError("line 1: m and C must be positive")
    return m, c


def load_csv(path):
    """Read a ``# m=<m> C=<C>`` headed CSV: m feature columns then the label."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DataFormatError("line 1: missing '# m=<m> C=<C>' header")
    m, c = _parse_csv_header(lines[0])

    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != m + 1:
            raise DataFormatError(f"line {lineno}: expected {m + 1} fields, found {len(cells)}")
        try:
            values = [float(v) for v in cells[:m]]
            label = int(cells[m])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field") from None
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise DataFormatError(f"line {lineno}: value {v} outside [0, 1]")
        if not 0 <= label < c:
            raise DataFormatError(f"line {lineno}: label {label} outside [0, {c})")
        rows.append(values)
        labels.append(label)
    if not rows:
        raise DataFormatError("empty dataset: no data rows after the header")
    return Dataset(np.array(rows, dtype=np.float32), np.array(labels, dtype=np.int64), c)


def save_csv(ds, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# m={ds.m} C={ds.class_count}\n")
        for x, y in zip(ds.samples, ds.labels):
            fh.write(",".join(f"{float(v):.9g}" for v in x) + f",{int(y)}\n")
