"""Datasets: synthetic Gaussian blobs, CSV vectors, IDX images."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import STREAM_SYNTH, derive_rng


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    class_count: int | None = None

    def __post_init__(self):
        if self.features.ndim not in (2, 4):
            raise DatasetError("features must be N x d (vectors) or N x H x W x C (images)")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (self.features.shape[0],):
                raise DatasetError("labels must have one entry per sample")
            count = self.class_count if self.class_count is not None else int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= count:
                raise DatasetError(f"labels must lie in [0, {count})")
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "class_count", count)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def is_image(self) -> bool:
        return self.features.ndim == 4

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.features.shape[1:]))

    def subset(self, idx: np.ndarray) -> Dataset:
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.class_count)


def synth_blobs(
    n_blobs: int = 10,
    dim: int = 32,
    per_blob: int = 200,
    separation: float = 4.0,
    sigma: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Isotropic Gaussian blobs with labels = blob id, rows shuffled.

    Centres are random directions at radius ``separation / sqrt(2)``, so in
    moderate dimension the typical centre-to-centre distance is about
    ``separation``.
    """
    if n_blobs < 1 or dim < 1 or per_blob < 1:
        raise DatasetError("n_blobs, dim and per_blob must be positive")
    if sigma < 0 or separation < 0:
        raise DatasetError("sigma and separation must be non-negative")
    rng = derive_rng(seed, STREAM_SYNTH)
    directions = rng.standard_normal((n_blobs, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centres = directions * separation / np.sqrt(2.0)
    labels = np.repeat(np.arange(n_blobs), per_blob)
    features = centres[labels] + sigma * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], n_blobs)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    if dataset.is_image:
        raise DatasetError("CSV holds vector datasets only")
    d = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"f{j}" for j in range(d)] + (["label"] if dataset.labels is not None else [])
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.labels is not None:
                row.append(int(dataset.labels[i]))
            writer.writerow(row)


def load_csv(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration as exc:
            raise DatasetError(f"{path}: empty file") from exc
        has_label = bool(header) and header[-1] == "label"
        feats = header[:-1] if has_label else header
        if not feats or feats != [f"f{j}" for j in range(len(feats))]:
            raise DatasetError(f"{path}: header must be f0..f{{d-1}} with an optional trailing label")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields")
            rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    try:
        features = np.array([[float(v) for v in r[: len(feats)]] for r in rows])
        labels = np.array([int(r[-1]) for r in rows]) if has_label else None
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric field") from exc
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"{path}: non-finite feature values")
    return Dataset(features, labels)


_IDX_UBYTE = 0x08


def save_idx(array: np.ndarray, path: str | Path) -> None:
    """Write an unsigned-byte IDX file: two zero bytes, type 0x08, ndim, big-endian dims, data."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise DatasetError("IDX images must be uint8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, _IDX_UBYTE, arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != _IDX_UBYTE:
        raise DatasetError(f"{path}: not an unsigned-byte IDX file")
    ndim = raw[3]
    shape = struct.unpack_from(f">{ndim}I", raw, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - start != count:
        raise DatasetError(f"{path}: payload size does not match dimensions {shape}")
    return np.frombuffer(raw, dtype=np.uint8, offset=start).reshape(shape).copy()


def load_dataset(path: str | Path, labels_path: str | Path | None = None) -> Dataset:
    """CSV for vectors; IDX (N x H x W [x C]) for images with an optional IDX label file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    images = load_idx(path)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DatasetError(f"{path}: image IDX must be N x H x W or N x H x W x C")
    labels = load_idx(labels_path).astype(np.int64) if labels_path else None
    return Dataset(images, labels)
