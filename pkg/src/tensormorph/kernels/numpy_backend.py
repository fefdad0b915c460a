"""Pure-numpy implementations of the hot kernels.

Fallback lane for environments without numba (or with
``TENSORMORPH_BACKEND=numpy``). Scatter reductions go through the ufunc
``.at`` methods, which are correct for repeated indices but slow; the
grouped-ordinal kernels use a stable argsort instead of a table.
"""

import numpy as np

NAME = "numpy"


def scatter_add(out, idx, weights):
    np.add.at(out, idx, weights)


def scatter_count(out, idx):
    np.add.at(out, idx, 1)


def scatter_max(out, idx, vals):
    np.maximum.at(out, idx, vals)


def scatter_or(out, idx):
    out[idx] = 1


def grouped_ordinals_assoc(keys):
    """Ordinal of each element within its key group, in iteration order.

    Stable argsort makes elements of a group contiguous while preserving
    their original order, so the within-group rank equals the ordinal.
    """
    n = keys.shape[0]
    ordinals = np.empty(n, dtype=np.int64)
    if n == 0:
        return ordinals
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    np.not_equal(sk[1:], sk[:-1], out=boundary[1:])
    start = np.maximum.accumulate(np.where(boundary, np.arange(n), 0))
    ordinals[order] = np.arange(n) - start
    return ordinals


def grouped_ordinals(keys, table_size):
    # table_size is an optimization hint for the numba lane; ignored here.
    return grouped_ordinals_assoc(keys)


def grouped_ordinals_sorted(keys):
    """Ordinals assuming keys arrive nondecreasing (single reusable counter).

    Returns ``(ordinals, bad)`` where ``bad`` is the index of the first key
    regression, or -1 if the order holds.
    """
    n = keys.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), -1
    drops = np.nonzero(keys[1:] < keys[:-1])[0]
    if drops.size:
        return np.empty(0, dtype=np.int64), int(drops[0]) + 1
    boundary = np.empty(n, dtype=bool)
    boundary[0] = True
    np.not_equal(keys[1:], keys[:-1], out=boundary[1:])
    start = np.maximum.accumulate(np.where(boundary, np.arange(n), 0))
    return np.arange(n) - start, -1


def morton_interleave(coords, bits):
    """Bit-interleave each row of ``coords`` (n x ndims) into one code.

    Dimension d contributes its bit b to output bit ``b * ndims + d``.
    """
    n, nd = coords.shape
    codes = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        for d in range(nd):
            codes |= ((coords[:, d] >> b) & 1) << (b * nd + d)
    return codes
