"""Sparse origin x destination x month migration count tensor.

Counts are stored as a coordinate list sorted by (origin, destination,
month). The diagonal (origin == destination) is structurally excluded: a
migration has distinct endpoints, so those cells exist neither in storage
nor in the model's likelihood.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .ingestion import CountryRegistry, InputError
from .residence import MigrationEvent


class MigrationTensor:
    """Immutable sparse 3-way count tensor of shape (N, N, M)."""

    def __init__(self, dims: tuple[int, int, int], coords: np.ndarray, counts: np.ndarray):
        N1, N2, M = dims
        if N1 != N2:
            raise ValueError(f"origin/destination dims must match, got {dims}")
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        if coords.shape[0] != counts.shape[0]:
            raise ValueError("coords and counts length mismatch")
        if coords.size:
            if coords.min() < 0 or (coords.max(axis=0) >= np.array(dims)).any():
                raise ValueError("tensor entry index out of range")
            if (coords[:, 0] == coords[:, 1]).any():
                raise ValueError("diagonal entries (origin == destination) are not allowed")
            if (counts <= 0).any():
                raise ValueError("tensor counts must be positive")
        order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
        coords = coords[order]
        counts = counts[order]
        if coords.shape[0] > 1 and (np.diff(coords, axis=0) == 0).all(axis=1).any():
            raise ValueError("duplicate coordinates in tensor entries")
        self.dims = (int(N1), int(N2), int(M))
        self.coords = coords
        self.counts = counts
        self.coords.setflags(write=False)
        self.counts.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dims, dtype=np.int64)
        dense[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = self.counts
        return dense

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MigrationTensor)
            and self.dims == other.dims
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.counts, other.counts)
        )


def build_tensor(events: Iterable[MigrationEvent], registry: CountryRegistry, months: int) -> MigrationTensor:
    """Aggregate migration events into the sparse count tensor.

    Each event contributes one count to its (origin, destination, month)
    cell; the result is independent of event order.
    """
    N = len(registry)
    triples = np.array([(ev.origin, ev.destination, ev.month) for ev in events],
                       dtype=np.int64).reshape(-1, 3)
    if triples.size:
        if triples.min() < 0 or triples[:, :2].max() >= N or triples[:, 2].max() >= months:
            raise ValueError("migration event index out of range for tensor dims")
        coords, counts = np.unique(triples, axis=0, return_counts=True)
    else:
        coords = np.zeros((0, 3), dtype=np.int64)
        counts = np.zeros(0, dtype=np.int64)
    return MigrationTensor((N, N, months), coords, counts)


def mode_marginals(tensor: MigrationTensor) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Totals by origin, destination and month, each summing to the tensor total."""
    N, _, M = tensor.dims
    origin = np.zeros(N, dtype=np.int64)
    destination = np.zeros(N, dtype=np.int64)
    month = np.zeros(M, dtype=np.int64)
    np.add.at(origin, tensor.coords[:, 0], tensor.counts)
    np.add.at(destination, tensor.coords[:, 1], tensor.counts)
    np.add.at(month, tensor.coords[:, 2], tensor.counts)
    return origin, destination, month


def save_tensor(tensor: MigrationTensor, path) -> None:
    """Write ``# dims N N M`` then sorted ``i j t c`` integer lines."""
    N1, N2, M = tensor.dims
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dims {N1} {N2} {M}\n")
        for (i, j, t), c in zip(tensor.coords, tensor.counts):
            fh.write(f"{i} {j} {t} {c}\n")


def load_tensor(path) -> MigrationTensor:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "dims"] or len(header) != 5:
            raise InputError(f"{path}: malformed tensor header")
        dims = tuple(int(x) for x in header[2:])
        rows = [line.split() for line in fh if line.strip()]
    data = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return MigrationTensor(dims, data[:, :3], data[:, 3])
