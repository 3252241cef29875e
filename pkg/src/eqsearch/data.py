"""Columnar datasets and their on-disk format.

A dataset directory holds one CSV per split (``train.csv``,
``id_valid.csv``, ``ood_valid.csv``) with a header naming the input
columns followed by ``y``, plus a ``metadata.json`` sidecar recording the
benchmark id, generation settings and split sizes.  Floats are written
with ``repr`` so a written file reloads bit-exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

SPLITS = ("train", "id_valid", "ood_valid")
# "full" tags a generated dataset before it is divided into the three splits.
_ALL_SPLITS = SPLITS + ("full",)

METADATA_FILE = "metadata.json"


class DataError(ValueError):
    """Malformed dataset file or directory."""


@dataclass(frozen=True)
class Dataset:
    """n observations of d named inputs with a scalar target each."""

    input_names: tuple[str, ...]
    inputs: np.ndarray  # (n, d) float64
    targets: np.ndarray  # (n,) float64
    split: str = "train"
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        if inputs.ndim != 2 or targets.ndim != 1:
            raise DataError("inputs must be (n, d) and targets (n,)")
        n, d = inputs.shape
        if n < 1 or d < 1 or len(targets) != n:
            raise DataError(f"bad dataset shape: inputs {inputs.shape}, targets {targets.shape}")
        if len(self.input_names) != d:
            raise DataError(f"{len(self.input_names)} input names for {d} columns")
        if len(set(self.input_names)) != d:
            raise DataError("input names must be unique")
        if not (np.isfinite(inputs).all() and np.isfinite(targets).all()):
            raise DataError("dataset contains non-finite entries")
        if self.split not in _ALL_SPLITS:
            raise DataError(f"unknown split {self.split!r}")
        inputs.setflags(write=False)
        targets.setflags(write=False)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.inputs[:, self.input_names.index(name)]

    def equals(self, other: "Dataset") -> bool:
        return (
            self.input_names == other.input_names
            and self.split == other.split
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.targets, other.targets)
        )

    def with_targets(self, targets: np.ndarray, **metadata: Any) -> "Dataset":
        merged = {**self.metadata, **metadata}
        return Dataset(self.input_names, self.inputs, targets, self.split, merged)


def take(ds: Dataset, index: np.ndarray, split: str) -> Dataset:
    return Dataset(ds.input_names, ds.inputs[index], ds.targets[index], split, dict(ds.metadata))


def save_csv(ds: Dataset, path: Path | str) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.input_names) + ["y"])
        for row, y in zip(ds.inputs, ds.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def load_csv(path: Path | str, split: str, metadata: Mapping[str, Any] | None = None) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != "y":
            raise DataError(f"{path}: header must name input columns then 'y'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    return Dataset(tuple(header[:-1]), table[:, :-1], table[:, -1], split, dict(metadata or {}))


def save_splits(splits: Mapping[str, Dataset], out_dir: Path | str, metadata: Mapping[str, Any]) -> None:
    """Write one CSV per split plus the metadata sidecar (idempotent for fixed inputs)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = {}
    for name in SPLITS:
        if name not in splits:
            raise DataError(f"missing split {name!r}")
        save_csv(splits[name], out_dir / f"{name}.csv")
        sizes[name] = splits[name].n
    record = {**metadata, "input_names": list(splits["train"].input_names), "split_sizes": sizes}
    with open(out_dir / METADATA_FILE, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_metadata(data_dir: Path | str) -> dict[str, Any]:
    path = Path(data_dir) / METADATA_FILE
    if not path.exists():
        raise DataError(f"{path}: missing metadata sidecar")
    with open(path) as fh:
        return json.load(fh)


def load_splits(data_dir: Path | str) -> dict[str, Dataset]:
    """Load the three split CSVs from a dataset directory."""
    data_dir = Path(data_dir)
    meta = load_metadata(data_dir)
    out = {}
    for name in SPLITS:
        out[name] = load_csv(data_dir / f"{name}.csv", name, meta)
    return out
