"""Labelled image datasets, stratified splitting and IDX archives."""
from __future__ import annotations

import gzip
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, InputError, ParameterError
from ..scenario import ModeSpec
from .raster import to_bytes

TRAIN, TEST, VALIDATION = 1, 2, 3
SPLIT_NAMES = {TRAIN: "train", TEST: "test", VALIDATION: "validation"}

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IDX_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}
SPLIT_SIDECAR = "split.json"


def label_of(mode: ModeSpec) -> int:
    return int(mode.mode_id)


@dataclass
class Dataset:
    """Images ``(n, H, W)`` in [0, 1], labels 1..12 and split tags 1/2/3."""

    images: np.ndarray
    labels: np.ndarray
    split: np.ndarray = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3:
            raise InputError(f"images must be (n, H, W), got shape {self.images.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split is None:
            self.split = np.full(len(self.labels), TRAIN, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        if not len(self.images) == len(self.labels) == len(self.split):
            raise InputError("images, labels and split tags must have the same length")
        if len(self.labels) and (self.labels.min() < 1 or self.labels.max() > 12):
            raise InputError("labels must lie in 1..12")
        if not np.isin(self.split, (TRAIN, TEST, VALIDATION)).all():
            raise InputError("split tags must be 1 (train), 2 (test) or 3 (validation)")

    def __len__(self):
        return len(self.labels)

    def subset(self, tag: int) -> "Dataset":
        keep = self.split == tag
        return Dataset(self.images[keep], self.labels[keep], self.split[keep])

    def counts(self) -> dict:
        """``{split_name: {label: count}}``."""
        out = {}
        for tag, name in SPLIT_NAMES.items():
            labels = self.labels[self.split == tag]
            out[name] = {int(k): int(v) for k, v in zip(*np.unique(labels, return_counts=True))}
        return out

    def quantized(self) -> "Dataset":
        return Dataset(to_bytes(self.images) / 255.0, self.labels.copy(), self.split.copy())


def _check_fraction(name, value):
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")


def shuffle_split(dataset: Dataset, train_frac: float = 5 / 6, val_frac_of_train: float = 0.3,
                  test_frac: float = 1 / 6, seed: int = 0) -> Dataset:
    """Per-label stratified shuffle and train/validation/test tagging.

    For each label with ``n`` items: ``round(n * test_frac)`` go to test, and
    ``round(n_rest * val_frac_of_train)`` of the remainder to validation.
    The returned dataset is globally shuffled.
    """
    for name, value in (("train_frac", train_frac), ("val_frac_of_train", val_frac_of_train),
                        ("test_frac", test_frac)):
        _check_fraction(name, value)
    if abs(train_frac + test_frac - 1.0) > 1e-9:
        raise ParameterError(f"train_frac + test_frac must equal 1, got {train_frac + test_frac}")
    rng = np.random.default_rng(seed)
    split = np.empty(len(dataset), dtype=np.int64)
    for label in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == label)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(len(idx) * test_frac))
        n_val = int(round((len(idx) - n_test) * val_frac_of_train))
        split[idx[:n_test]] = TEST
        split[idx[n_test:n_test + n_val]] = VALIDATION
        split[idx[n_test + n_val:]] = TRAIN
    order = rng.permutation(len(dataset))
    return Dataset(dataset.images[order], dataset.labels[order], split[order])


def _gzip_bytes(payload: bytes) -> bytes:
    buf = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as fh:
        fh.write(payload)
    return buf.getvalue()


def encode_images(images: np.ndarray) -> bytes:
    data = to_bytes(images)
    n, h, w = data.shape
    return struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + data.tobytes()


def encode_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()


def decode_images(raw: bytes, name: str = "images") -> np.ndarray:
    if len(raw) < 16:
        raise FormatError(f"{name}: truncated header at offset {len(raw)} (need 16 bytes)")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{name}: bad magic 0x{magic:08x} at offset 0 (expected 0x{IMAGE_MAGIC:08x})")
    need = 16 + n * h * w
    if len(raw) < need:
        raise FormatError(f"{name}: payload truncated at offset {len(raw)} (expected {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=16).reshape(n, h, w)


def decode_labels(raw: bytes, name: str = "labels") -> np.ndarray:
    if len(raw) < 8:
        raise FormatError(f"{name}: truncated header at offset {len(raw)} (need 8 bytes)")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"{name}: bad magic 0x{magic:08x} at offset 0 (expected 0x{LABEL_MAGIC:08x})")
    if len(raw) < 8 + n:
        raise FormatError(f"{name}: payload truncated at offset {len(raw)} (expected {8 + n} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def write_idx(dataset: Dataset, directory) -> dict:
    """Write the four gzip IDX files plus ``split.json``.

    The train archive holds training and validation items in their original
    order; ``split.json`` records which of them are validation so that
    :func:`read_idx` restores the tags. Returns the written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train_mask = dataset.split != TEST
    paths = {}
    for prefix, mask in (("train", train_mask), ("test", ~train_mask)):
        for kind, payload in (("images", encode_images(dataset.images[mask])),
                              ("labels", encode_labels(dataset.labels[mask]))):
            path = directory / IDX_FILES[f"{prefix}_{kind}"]
            path.write_bytes(_gzip_bytes(payload))
            paths[f"{prefix}_{kind}"] = path
    sidecar = directory / SPLIT_SIDECAR
    sidecar.write_text(json.dumps({"train_file_tags": dataset.split[train_mask].tolist()}))
    paths["split"] = sidecar
    return paths


def _read_gz(path) -> bytes:
    try:
        with gzip.open(path, "rb") as fh:
            return fh.read()
    except (OSError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_idx(directory) -> Dataset:
    directory = Path(directory)
    parts = []
    for prefix, tag in (("train", TRAIN), ("test", TEST)):
        ipath = directory / IDX_FILES[f"{prefix}_images"]
        lpath = directory / IDX_FILES[f"{prefix}_labels"]
        if not ipath.exists() or not lpath.exists():
            raise InputError(f"missing IDX archive in {directory}: {ipath.name} / {lpath.name}")
        images = decode_images(_read_gz(ipath), str(ipath))
        labels = decode_labels(_read_gz(lpath), str(lpath))
        if len(images) != len(labels):
            raise FormatError(f"{prefix}: {len(images)} images but {len(labels)} labels")
        parts.append((images, labels, np.full(len(labels), tag, dtype=np.int64)))
    sidecar = directory / SPLIT_SIDECAR
    if sidecar.exists():
        tags = np.asarray(json.loads(sidecar.read_text())["train_file_tags"], dtype=np.int64)
        if len(tags) != len(parts[0][2]):
            raise FormatError(f"{sidecar}: {len(tags)} tags for {len(parts[0][2])} training items")
        parts[0] = (parts[0][0], parts[0][1], tags)
    shapes = {p[0].shape[1:] for p in parts if len(p[0])}
    if len(shapes) > 1:
        raise FormatError(f"train and test images differ in size: {sorted(shapes)}")
    hw = shapes.pop() if shapes else (parts[0][0].shape[1:])
    images = np.concatenate([p[0].reshape(-1, *hw) for p in parts]).astype(np.float64) / 255.0
    return Dataset(images, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]))
