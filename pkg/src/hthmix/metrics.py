"""External cluster-agreement scoring."""

from __future__ import annotations

from math import comb

import numpy as np

__all__ = ["ari"]


def ari(a, b):
    """Adjusted Rand index between two partitions (Hubert-Arabie).

    Accepts any pair of equal-length label sequences; labels may be
    arbitrary hashables.  Pair counts are accumulated as exact integers and
    divided once at the end, so nearly-cancelling index values stay exact.
    Returns 1 for identical partitions (up to relabelling) and can be
    negative for agreement worse than chance.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two observations")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    n = int(a.size)
    sum_cells = sum(comb(int(x), 2) for x in table.ravel())
    sum_rows = sum(comb(int(x), 2) for x in table.sum(axis=1))
    sum_cols = sum(comb(int(x), 2) for x in table.sum(axis=0))
    total = comb(n, 2)

    # scale numerator and denominator by 2 * total to stay in integers
    numerator = 2 * (sum_cells * total - sum_rows * sum_cols)
    denominator = (sum_rows + sum_cols) * total - 2 * sum_rows * sum_cols
    if denominator == 0:
        # both partitions trivial (all-one-cluster or all-singletons): identical
        return 1.0
    return float(numerator / denominator)
