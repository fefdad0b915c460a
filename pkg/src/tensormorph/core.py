"""Canonical sparse tensor model: the reference form every conversion is
checked against.

A :class:`CanonicalTensor` is a duplicate-free, lexicographically sorted list
of (coordinate, value) entries over known dimension sizes. It is the oracle
substrate: conversions are correct iff the canonical projection of their
output matches the canonical input, and queries are correct iff they match a
brute-force scan of :func:`densify`'s grid.

Coordinates are plain tuples of ints externally and int64 arrays internally;
remapped dimensions (e.g. diagonal offsets ``j - i``) may be negative, which
is why :class:`DimBounds` carries a signed inclusive range.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, CoordOutOfRange, DimMismatch, DuplicateCoord

DEFAULT_DENSE_CAP = 1 << 22


@dataclass(frozen=True)
class DimBounds:
    """Inclusive coordinate range of one (possibly remapped) dimension."""

    lower: int
    upper: int

    def __post_init__(self):
        if self.lower > self.upper + 1:
            raise ValueError(f"bad bounds [{self.lower}, {self.upper}]")

    @property
    def extent(self):
        return self.upper - self.lower + 1


def dense_cap():
    """Cell cap for dense oracle grids; TENSORMORPH_DENSE_CAP overrides."""
    raw = os.environ.get("TENSORMORPH_DENSE_CAP", "")
    return int(raw) if raw else DEFAULT_DENSE_CAP


def _as_arrays(entries, order):
    if isinstance(entries, tuple) and len(entries) == 2 and isinstance(entries[0], np.ndarray):
        coords, values = entries
        coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, order)
        values = np.ascontiguousarray(values, dtype=np.float64)
        return coords, values
    entries = list(entries)
    coords = np.empty((len(entries), order), dtype=np.int64)
    values = np.empty(len(entries), dtype=np.float64)
    for k, (c, v) in enumerate(entries):
        coords[k] = c
        values[k] = v
    return coords, values


def _lex_order(coords):
    # np.lexsort sorts by the last key first; feed columns in reverse.
    return np.lexsort(tuple(coords[:, d] for d in reversed(range(coords.shape[1]))))


class CanonicalTensor:
    """Sorted, duplicate-free entry list plus dimension sizes.

    Instances are immutable by convention; all arrays are private copies.
    """

    __slots__ = ("dims", "coords", "values")

    def __init__(self, dims, coords, values):
        self.dims = tuple(int(d) for d in dims)
        self.coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(self.dims))
        self.values = np.asarray(values, dtype=np.float64)
        self.coords.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def order(self):
        return len(self.dims)

    @property
    def nnz(self):
        return len(self.values)

    @property
    def entries(self):
        return [(tuple(int(x) for x in c), float(v))
                for c, v in zip(self.coords, self.values)]

    def __eq__(self, other):
        if not isinstance(other, CanonicalTensor):
            return NotImplemented
        return (self.dims == other.dims
                and self.coords.shape == other.coords.shape
                and bool(np.array_equal(self.coords, other.coords))
                and bool(np.array_equal(self.values, other.values)))

    def __repr__(self):
        return f"CanonicalTensor(dims={self.dims}, nnz={self.nnz})"


def canonicalize(entries, dims, dup_policy="sum"):
    """Sort entries lexicographically and resolve duplicate coordinates.

    ``entries`` is an iterable of (coord tuple, value) pairs or a
    ``(coords array, values array)`` pair. Policies: ``sum`` adds values of
    equal coordinates (Matrix Market convention), ``last`` keeps the latest
    occurrence, ``error`` rejects duplicates.
    """
    if dup_policy not in ("error", "sum", "last"):
        raise ValueError(f"unknown dup_policy {dup_policy!r}")
    dims = tuple(int(d) for d in dims)
    coords, values = _as_arrays(entries, len(dims))
    if coords.size:
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        for d in range(len(dims)):
            if lo[d] < 0 or hi[d] >= dims[d]:
                bad = int(np.nonzero((coords[:, d] < 0) | (coords[:, d] >= dims[d]))[0][0])
                raise CoordOutOfRange(
                    f"entry {bad} coord {tuple(coords[bad])} outside dims {dims}")
    if len(values) == 0:
        return CanonicalTensor(dims, coords, values)

    order = _lex_order(coords)
    coords = coords[order]
    values = values[order]
    same = np.all(coords[1:] == coords[:-1], axis=1) if len(values) > 1 else \
        np.zeros(0, dtype=bool)
    if same.any():
        if dup_policy == "error":
            bad = int(np.nonzero(same)[0][0])
            raise DuplicateCoord(f"duplicate coordinate {tuple(coords[bad])}")
        starts = np.concatenate(([0], np.nonzero(~same)[0] + 1))
        if dup_policy == "sum":
            values = np.add.reduceat(values, starts)
        else:  # last: lexsort is stable, so the last row of a run is latest
            ends = np.concatenate((starts[1:], [len(values)])) - 1
            values = values[ends]
        coords = coords[starts]
    return CanonicalTensor(dims, coords, values)


def equal_multiset(a, b, zero_policy="strict"):
    """True iff the entry multisets match.

    ``ignore_explicit_zeros`` drops value-0 entries from both sides first,
    which is what conversions through padded formats (DIA/ELL/sky/BCSR)
    preserve.
    """
    if zero_policy not in ("strict", "ignore_explicit_zeros"):
        raise ValueError(f"unknown zero_policy {zero_policy!r}")
    if a.dims != b.dims:
        raise DimMismatch(f"dims differ: {a.dims} vs {b.dims}")
    ca, va = a.coords, a.values
    cb, vb = b.coords, b.values
    if zero_policy == "ignore_explicit_zeros":
        ka = va != 0.0
        kb = vb != 0.0
        ca, va = ca[ka], va[ka]
        cb, vb = cb[kb], vb[kb]
    return (ca.shape == cb.shape
            and bool(np.array_equal(ca, cb))
            and bool(np.array_equal(va, vb)))


def densify(t):
    """Dense value grid with ``grid[c] = v``; refuses grids over the cap."""
    cells = 1
    for d in t.dims:
        cells *= d
    cap = dense_cap()
    if cells > cap:
        raise CapExceeded(f"dense grid of {cells} cells exceeds cap {cap}")
    grid = np.zeros(t.dims, dtype=np.float64)
    if t.nnz:
        grid[tuple(t.coords[:, d] for d in range(t.order))] = t.values
    return grid


def sparsify(grid, dims=None):
    """Inverse of :func:`densify` up to explicit zeros (which a grid cannot
    represent); nonzero cells become entries in lexicographic order."""
    grid = np.asarray(grid, dtype=np.float64)
    dims = grid.shape if dims is None else tuple(dims)
    idx = np.nonzero(grid)
    coords = np.stack(idx, axis=1).astype(np.int64) if grid.ndim else \
        np.zeros((0, 0), np.int64)
    return CanonicalTensor(dims, coords, grid[idx])
