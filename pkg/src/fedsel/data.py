"""Dataset loading and client-side partitioning (IID and Dirichlet non-IID)."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, ParseError
from .rng import keyed_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """A labeled classification dataset.

    features: (n, d) float64 matrix; labels: (n,) int64 vector of class
    indices in [0, num_classes).
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise InvalidSpecError("features must be a 2-D matrix")
        if len(self.features) != len(self.labels):
            raise InvalidSpecError(
                f"feature rows ({len(self.features)}) != labels ({len(self.labels)})"
            )
        if self.num_classes < 2:
            raise InvalidSpecError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidSpecError("labels outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients."""

    num_clients: int
    regime: str  # "iid" | "dirichlet"
    sigma: float = 1.0  # Dirichlet concentration, used when regime == "dirichlet"
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise InvalidSpecError("num_clients must be positive")
        if self.regime not in ("iid", "dirichlet"):
            raise InvalidSpecError(f"unknown partition regime {self.regime!r}")
        if self.regime == "dirichlet" and not self.sigma > 0:
            raise InvalidSpecError("dirichlet concentration must be > 0")


@dataclass(frozen=True)
class ClientShard:
    """The dataset rows owned by one client."""

    client_id: int
    example_indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.example_indices)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussian clusters; linearly separable for large spread."""

    num_classes: int
    dims: int
    samples: int
    cluster_spread: float = 3.0
    seed: int = 0


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a balanced synthetic dataset of Gaussian clusters.

    Class means are drawn once from N(0, spread^2 I); samples are
    mean + N(0, I).  Balanced by construction: samples are dealt to classes
    round-robin.  Deterministic under the spec seed.
    """
    if spec.num_classes < 2:
        raise InvalidSpecError("synthetic dataset needs num_classes >= 2")
    if spec.samples < spec.num_classes:
        raise InvalidSpecError("need at least one sample per class")
    rng = keyed_rng(spec.seed)
    means = rng.normal(0.0, spec.cluster_spread, size=(spec.num_classes, spec.dims))
    labels = np.arange(spec.samples, dtype=np.int64) % spec.num_classes
    features = means[labels] + rng.standard_normal((spec.samples, spec.dims))
    return Dataset(features=features, labels=labels, num_classes=spec.num_classes)


def _read_idx(path: Path, expected_magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated IDX header at byte 0")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x} at byte 0")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise ParseError(f"{path}: truncated IDX dimension header at byte {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) - header_len < count:
        raise ParseError(f"{path}: IDX payload truncated at byte {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_len)
    return data.reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Read an IDX image/label pair (MNIST-style, big-endian)."""
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(
            f"IDX pair mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features=features, labels=labels, num_classes=int(labels.max()) + 1)


def load_csv(path: str | Path) -> Dataset:
    """Read a CSV with a header row containing a 'label' column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file at line 1") from None
        if "label" not in header:
            raise ParseError(f"{path}: no 'label' column in header at line 1")
        label_col = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: wrong field count at line {lineno}")
            try:
                labels.append(int(row[label_col]))
                feats.append([float(v) for i, v in enumerate(row) if i != label_col])
            except ValueError as exc:
                raise ParseError(f"{path}: unparsable value at line {lineno}: {exc}") from None
    if not feats:
        raise ParseError(f"{path}: no data rows after line 1")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(
        features=np.asarray(feats, dtype=np.float64),
        labels=labels_arr,
        num_classes=int(labels_arr.max()) + 1,
    )


def load_dataset(source: dict) -> Dataset:
    """Dispatch on a dataset descriptor.

    Accepted forms:
      {"synthetic": {num_classes, dims, samples, cluster_spread, seed}}
      {"idx_images": path, "idx_labels": path}
      {"csv": path}
    """
    if "synthetic" in source:
        return make_synthetic(SyntheticSpec(**source["synthetic"]))
    if "idx_images" in source:
        return load_idx(source["idx_images"], source["idx_labels"])
    if "csv" in source:
        return load_csv(source["csv"])
    raise InvalidSpecError(f"unrecognized dataset descriptor: {sorted(source)}")


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`, proportional to `proportions`.

    Floors the quotas, then hands leftover units to the largest fractional
    remainders (ties broken by lower client id).
    """
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        remainders = quotas - counts
        # stable sort descending on remainder keeps low ids first among ties
        order = np.argsort(-remainders, kind="stable")
        counts[order[:short]] += 1
    return counts


def partition(dataset: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split a dataset across clients.

    IID: a seeded permutation dealt as evenly as possible (sizes differ by
    at most 1).  Dirichlet: per class, client proportions drawn from
    Dir(sigma, ..., sigma) and applied with largest-remainder rounding;
    clients left empty steal one example from the largest shard so every
    shard is non-empty.
    """
    n = len(dataset)
    if spec.num_clients > n:
        raise InvalidSpecError(f"num_clients ({spec.num_clients}) exceeds dataset size ({n})")
    rng = keyed_rng(spec.seed)
    assigned: list[list[int]] = [[] for _ in range(spec.num_clients)]

    if spec.regime == "iid":
        perm = rng.permutation(n)
        splits = np.array_split(perm, spec.num_clients)
        for cid, idxs in enumerate(splits):
            assigned[cid] = list(idxs)
    else:
        for cls in range(dataset.num_classes):
            cls_idx = np.flatnonzero(dataset.labels == cls)
            props = rng.dirichlet(np.full(spec.num_clients, spec.sigma))
            counts = _largest_remainder_counts(props, len(cls_idx))
            start = 0
            for cid, cnt in enumerate(counts):
                assigned[cid].extend(cls_idx[start : start + cnt])
                start += cnt

    # minimum-size repair: every client must own at least one example
    for cid in range(spec.num_clients):
        if not assigned[cid]:
            donor = max(range(spec.num_clients), key=lambda c: len(assigned[c]))
            assigned[cid].append(assigned[donor].pop())

    return [
        ClientShard(client_id=cid, example_indices=np.asarray(sorted(idxs), dtype=np.int64))
        for cid, idxs in enumerate(assigned)
    ]


def label_histogram(dataset: Dataset, shard: ClientShard) -> np.ndarray:
    """Per-class counts of a shard."""
    return np.bincount(dataset.labels[shard.example_indices], minlength=dataset.num_classes)


def label_entropy(dataset: Dataset, shard: ClientShard) -> float:
    """Shannon entropy (nats) of a shard's label distribution."""
    hist = label_histogram(dataset, shard).astype(np.float64)
    p = hist / hist.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
