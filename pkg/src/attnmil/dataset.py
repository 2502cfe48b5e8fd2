"""Bags, datasets, instance-row text I/O, standardization and synthetic bags."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from attnmil.nncore import make_rng

DEFAULT_FEATURE_DIM = 103
MAX_BAG_SIZE = 12
STD_FLOOR = 1e-8
DEFAULT_SIGNAL_DIMS = 25


class DatasetError(ValueError):
    """Raised for malformed bags, files or dataset contracts."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Bag:
    """One subject: an id, a binary label and a ``(K, D)`` instance matrix.

    ``padding`` flags duplicated slots added by :func:`pad_bag_duplicate`.
    ``witness`` is generator metadata and is never read by the models.
    """

    bag_id: str
    label: int
    instances: np.ndarray
    padding: np.ndarray | None = None
    witness: int | None = None

    def __post_init__(self):
        x = np.asarray(self.instances, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DatasetError(f"bag {self.bag_id!r} must hold at least one instance")
        if not np.all(np.isfinite(x)):
            raise DatasetError(f"bag {self.bag_id!r} has non-finite feature values")
        if self.label not in (0, 1):
            raise DatasetError(f"bag {self.bag_id!r} has label {self.label!r}, expected 0 or 1")
        object.__setattr__(self, "instances", _frozen(x))
        object.__setattr__(self, "label", int(self.label))
        if self.padding is not None:
            pad = np.array(self.padding, dtype=bool)
            if pad.shape != (x.shape[0],):
                raise DatasetError(f"bag {self.bag_id!r}: padding flags do not match instances")
            pad.setflags(write=False)
            object.__setattr__(self, "padding", pad)

    @property
    def size(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    def is_padding(self) -> np.ndarray:
        if self.padding is None:
            return np.zeros(self.size, dtype=bool)
        return self.padding


@dataclass(frozen=True, eq=False)
class MilDataset:
    bags: tuple[Bag, ...]
    feature_dim: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        bags = tuple(self.bags)
        object.__setattr__(self, "bags", bags)
        if self.feature_dim < 1:
            raise DatasetError("feature_dim must be positive")
        seen = set()
        for bag in bags:
            if bag.bag_id in seen:
                raise DatasetError(f"duplicate bag_id {bag.bag_id!r}")
            seen.add(bag.bag_id)
            if bag.dim != self.feature_dim:
                raise DatasetError(
                    f"bag {bag.bag_id!r} has dimension {bag.dim}, dataset declares {self.feature_dim}"
                )
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != self.feature_dim:
                raise DatasetError("feature_names length does not match feature_dim")
            object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)

    @property
    def bag_ids(self) -> list[str]:
        return [b.bag_id for b in self.bags]

    @property
    def n_instances(self) -> int:
        return sum(b.size for b in self.bags)

    def subset(self, bag_ids: Iterable[str]) -> list[Bag]:
        index = {b.bag_id: b for b in self.bags}
        return [index[i] for i in bag_ids]


# ---------------------------------------------------------------------------
# instance-row text format


def meta_path(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".meta")


def load_dataset(path: str | os.PathLike, feature_dim: int | None = None) -> MilDataset:
    """Read an instance-row CSV (``bag_id,label,f0,...``) into a dataset.

    Rows sharing a ``bag_id`` form one bag, in file order. A ``.meta``
    sidecar next to the file, when present, supplies witness indices.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, no header") from None
        if len(header) < 3 or header[0].strip() != "bag_id" or header[1].strip() != "label":
            raise DatasetError(f"{path}: header must start with 'bag_id,label' and name features")
        names = [h.strip() for h in header[2:]]
        dim = len(names) if feature_dim is None else int(feature_dim)
        if dim != len(names):
            raise DatasetError(f"{path}: header has {len(names)} features, expected {dim}")

        rows: dict[str, list[np.ndarray]] = {}
        labels: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != dim + 2:
                raise DatasetError(f"{path}: row {lineno} has {len(row)} cells, expected {dim + 2}")
            bag_id = row[0].strip()
            try:
                label = int(row[1])
            except ValueError:
                raise DatasetError(f"{path}: row {lineno} has non-integer label {row[1]!r}") from None
            if label not in (0, 1):
                raise DatasetError(f"{path}: row {lineno} has label {label}, expected 0 or 1")
            try:
                feats = np.array([float(c) for c in row[2:]], dtype=np.float64)
            except ValueError:
                raise DatasetError(f"{path}: row {lineno} has a missing or non-numeric feature") from None
            if not np.all(np.isfinite(feats)):
                raise DatasetError(f"{path}: row {lineno} has a non-finite feature")
            if bag_id in labels and labels[bag_id] != label:
                raise DatasetError(f"{path}: bag {bag_id!r} has conflicting labels")
            labels[bag_id] = label
            rows.setdefault(bag_id, []).append(feats)

    if not rows:
        raise DatasetError(f"{path}: no instances")
    witnesses = _read_meta(meta_path(path)) if meta_path(path).exists() else {}
    bags = [
        Bag(bid, labels[bid], np.vstack(inst), witness=witnesses.get(bid))
        for bid, inst in rows.items()
    ]
    return MilDataset(tuple(bags), dim, tuple(names))


def _read_meta(path: Path) -> dict[str, int]:
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "bag_id":
                continue
            out[row[0]] = int(row[1])
    return out


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dataset_to_rows(dataset: MilDataset) -> list[list[str]]:
    names = dataset.feature_names or tuple(f"f{i}" for i in range(dataset.feature_dim))
    rows = [["bag_id", "label", *names]]
    for bag in dataset.bags:
        for inst in bag.instances:
            rows.append([bag.bag_id, str(bag.label), *map(_fmt, inst)])
    return rows


def write_dataset(path: str | os.PathLike, dataset: MilDataset) -> None:
    """Write the instance-row CSV, plus a ``.meta`` sidecar if any bag has a witness."""
    from attnmil.io import atomic_write_rows

    atomic_write_rows(path, dataset_to_rows(dataset))
    meta = [[b.bag_id, str(b.witness)] for b in dataset.bags if b.witness is not None]
    if meta:
        atomic_write_rows(meta_path(path), [["bag_id", "witness_index"], *meta])


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True, eq=False)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        means, stds = _frozen(self.means), _frozen(self.stds)
        if means.shape != stds.shape or means.ndim != 1:
            raise DatasetError("standardizer means and stds must be vectors of equal length")
        if np.any(stds <= 0):
            raise DatasetError("standardizer stds must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def dim(self) -> int:
        return self.means.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))


def fit_standardizer(train_bags: Sequence[Bag]) -> Standardizer:
    """Pooled per-feature mean and sample std (ddof=1); stds below 1e-8 become 1."""
    if not train_bags:
        raise DatasetError("cannot fit a standardizer on zero bags")
    x = np.vstack([b.instances for b in train_bags])
    means = x.mean(axis=0)
    if x.shape[0] > 1:
        stds = x.std(axis=0, ddof=1)
    else:
        stds = np.zeros(x.shape[1])
    stds = np.where(stds < STD_FLOOR, 1.0, stds)
    return Standardizer(means, stds)


def apply_standardizer(s: Standardizer, bag: Bag) -> Bag:
    if bag.dim != s.dim:
        raise DatasetError(f"bag {bag.bag_id!r} has dimension {bag.dim}, standardizer expects {s.dim}")
    return replace(bag, instances=(bag.instances - s.means) / s.stds)


def standardize_bags(s: Standardizer, bags: Iterable[Bag]) -> list[Bag]:
    return [apply_standardizer(s, b) for b in bags]


# ---------------------------------------------------------------------------
# duplication padding


def pad_bag_duplicate(bag: Bag, target_size: int = MAX_BAG_SIZE) -> Bag:
    """Cycle a bag's instances in order until it holds ``target_size`` slots."""
    if bag.padding is not None and bag.padding.any():
        bag = unpad_bag(bag)
    k = bag.size
    if target_size < k:
        raise DatasetError(f"bag {bag.bag_id!r} has {k} instances, cannot pad to {target_size}")
    idx = np.arange(target_size) % k
    return replace(bag, instances=bag.instances[idx], padding=np.arange(target_size) >= k)


def unpad_bag(bag: Bag) -> Bag:
    keep = ~bag.is_padding()
    return replace(bag, instances=bag.instances[keep], padding=None)


# ---------------------------------------------------------------------------
# synthetic bags


@dataclass(frozen=True)
class SyntheticSpec:
    n_pos: int = 82
    n_neg: int = 28
    feature_dim: int = DEFAULT_FEATURE_DIM
    bag_size_range: tuple[int, int] = (1, MAX_BAG_SIZE)
    witness_shift: float = 2.0
    n_signal_dims: int | None = None  # None: min(25, feature_dim)
    seed: int = 0
    n_witnesses: int = 1

    def __post_init__(self):
        lo, hi = self.bag_size_range
        if self.n_pos < 0 or self.n_neg < 0 or self.n_pos + self.n_neg < 2:
            raise DatasetError("need n_pos, n_neg >= 0 and n_pos + n_neg >= 2")
        if self.feature_dim < 1:
            raise DatasetError("feature_dim must be positive")
        if lo < 1 or hi < lo:
            raise DatasetError(f"invalid bag_size_range {self.bag_size_range}")
        if self.n_signal_dims is None:
            object.__setattr__(self, "n_signal_dims", min(DEFAULT_SIGNAL_DIMS, self.feature_dim))
        if not 0 <= self.n_signal_dims <= self.feature_dim:
            raise DatasetError("n_signal_dims must lie in [0, feature_dim]")
        if not np.isfinite(self.witness_shift):
            raise DatasetError("witness_shift must be finite")
        if self.n_witnesses < 1 or self.n_witnesses > lo:
            raise DatasetError("n_witnesses must lie in [1, min bag size]")
        if not 0 <= self.seed < 2**64:
            raise DatasetError("seed must be an unsigned 64-bit integer")


def generate_synthetic(spec: SyntheticSpec) -> MilDataset:
    """Draw standard-normal bags; positives carry shifted witness instances.

    Positive bags come first (``pos0000``...), then negatives (``neg0000``...).
    With ``n_witnesses == 1`` each positive bag records its witness index.
    """
    rng = make_rng(spec.seed)
    lo, hi = spec.bag_size_range
    d = spec.feature_dim
    bags = []
    for i in range(spec.n_pos):
        k = int(rng.integers(lo, hi + 1))
        x = rng.standard_normal((k, d))
        slots = np.sort(rng.choice(k, size=spec.n_witnesses, replace=False))
        x[slots, : spec.n_signal_dims] += spec.witness_shift
        witness = int(slots[0]) if spec.n_witnesses == 1 else None
        bags.append(Bag(f"pos{i:04d}", 1, x, witness=witness))
    for i in range(spec.n_neg):
        k = int(rng.integers(lo, hi + 1))
        bags.append(Bag(f"neg{i:04d}", 0, rng.standard_normal((k, d))))
    return MilDataset(tuple(bags), d, tuple(f"f{i}" for i in range(d)))
