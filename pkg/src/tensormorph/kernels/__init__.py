"""Backend selection for the hot kernels.

``TENSORMORPH_BACKEND=numba`` (default when numba imports) or ``numpy``
picks the lane at import time. Both backends expose the same functions:

    scatter_add(out, idx, weights)     out[idx[k]] += weights[k]
    scatter_count(out, idx)            out[idx[k]] += 1
    scatter_max(out, idx, vals)        out[idx[k]] = max(out[idx[k]], vals[k])
    scatter_or(out, idx)               out[idx[k]] = 1
    grouped_ordinals(keys, table_size) per-key running count, iteration order
    grouped_ordinals_sorted(keys)      same, single reused counter; reports
                                       the first key regression
    morton_interleave(coords, bits)    row-wise bit interleave

See benchmarks/backend_bench.py for a side-by-side timing of the two lanes.
"""

import os

_requested = os.environ.get("TENSORMORPH_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"TENSORMORPH_BACKEND={_requested!r}: expected 'numba' or 'numpy'"
    )

if _requested in ("", "numba"):
    try:
        from . import numba_backend as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_backend as _impl
else:
    from . import numpy_backend as _impl

BACKEND = _impl.NAME

scatter_add = _impl.scatter_add
scatter_count = _impl.scatter_count
scatter_max = _impl.scatter_max
scatter_or = _impl.scatter_or
grouped_ordinals = _impl.grouped_ordinals
grouped_ordinals_sorted = _impl.grouped_ordinals_sorted
morton_interleave = _impl.morton_interleave


def backend_name():
    return BACKEND
