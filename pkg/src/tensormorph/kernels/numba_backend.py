"""Numba-compiled implementations of the hot kernels.

Primary lane. Every kernel is an ``@njit(cache=True)`` loop over int64/float64
arrays, so the first call per process pays a (disk-cached) compile. The
associative grouped-ordinal path reuses the numpy argsort implementation: a
sort beats a hash table at the sizes where the dense table no longer fits.
"""

import numpy as np
from numba import njit

from .numpy_backend import grouped_ordinals_assoc

NAME = "numba"


@njit(cache=True)
def scatter_add(out, idx, weights):
    for k in range(idx.shape[0]):
        out[idx[k]] += weights[k]


@njit(cache=True)
def scatter_count(out, idx):
    for k in range(idx.shape[0]):
        out[idx[k]] += 1


@njit(cache=True)
def scatter_max(out, idx, vals):
    for k in range(idx.shape[0]):
        if vals[k] > out[idx[k]]:
            out[idx[k]] = vals[k]


@njit(cache=True)
def scatter_or(out, idx):
    for k in range(idx.shape[0]):
        out[idx[k]] = 1


@njit(cache=True)
def _grouped_ordinals_table(keys, table_size):
    table = np.zeros(table_size, dtype=np.int64)
    ordinals = np.empty(keys.shape[0], dtype=np.int64)
    for k in range(keys.shape[0]):
        c = table[keys[k]]
        ordinals[k] = c
        table[keys[k]] = c + 1
    return ordinals


def grouped_ordinals(keys, table_size):
    if 0 < table_size <= (1 << 20):
        return _grouped_ordinals_table(keys, table_size)
    return grouped_ordinals_assoc(keys)


@njit(cache=True)
def grouped_ordinals_sorted(keys):
    n = keys.shape[0]
    ordinals = np.empty(n, dtype=np.int64)
    count = 0
    for k in range(n):
        if k > 0:
            if keys[k] < keys[k - 1]:
                return ordinals, k
            if keys[k] != keys[k - 1]:
                count = 0
        ordinals[k] = count
        count += 1
    return ordinals, -1


@njit(cache=True)
def morton_interleave(coords, bits):
    n, nd = coords.shape
    codes = np.zeros(n, dtype=np.int64)
    for k in range(n):
        code = 0
        for b in range(bits):
            for d in range(nd):
                code |= ((coords[k, d] >> b) & 1) << (b * nd + d)
        codes[k] = code
    return codes
