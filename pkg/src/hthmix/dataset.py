"""Data ingestion and per-column standardization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = ["Dataset", "load_csv", "standardize"]


@dataclass(frozen=True)
class Scaling:
    """Affine record mapping scaled values back to original units."""

    mean: np.ndarray
    sd: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """Numeric matrix with column names and an optional scaling record.

    ``rejected_rows`` lists 1-based data-row numbers dropped during load
    because a selected field was missing or non-numeric.
    """

    values: np.ndarray
    columns: tuple
    scaling: Scaling | None = None
    rejected_rows: tuple = field(default_factory=tuple)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def to_original_units(self, mu=None, sigma=None, lambda_mat=None):
        """Map fitted location/scale/skewness back to pre-scaling units."""
        if self.scaling is None:
            return mu, sigma, lambda_mat
        sd, mean = self.scaling.sd, self.scaling.mean
        out_mu = mean + sd * mu if mu is not None else None
        out_sigma = sigma * np.outer(sd, sd) if sigma is not None else None
        out_lam = sd[:, None] * lambda_mat if lambda_mat is not None else None
        return out_mu, out_sigma, out_lam


def load_csv(path, columns):
    """Load selected numeric columns from a headered CSV file.

    Rows with a missing or non-numeric value in any selected column are
    dropped; their 1-based row numbers are recorded on the dataset and
    reported as a warning.  Unknown column names raise with the available
    headers listed.
    """
    if not columns:
        raise ValueError("no columns selected")
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"input file not found: {path}") from None
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValueError(
            f"columns {missing} not present; available: {list(frame.columns)}"
        )
    selected = frame[list(columns)].apply(pd.to_numeric, errors="coerce")
    bad = selected.isna().any(axis=1).to_numpy()
    if bad.all():
        raise ValueError("every row has a missing or non-numeric selected field")
    rejected = tuple(int(i) + 1 for i in np.nonzero(bad)[0])
    if rejected:
        warnings.warn(
            f"dropped {len(rejected)} row(s) with non-numeric fields: {rejected}",
            UserWarning,
        )
    values = selected.to_numpy(dtype=float)[~bad]
    return Dataset(values=values, columns=tuple(columns), rejected_rows=rejected)


def standardize(d: Dataset):
    """Center and scale each column to zero mean and unit deviation.

    The scaling record composes with any previous one so fitted parameters
    can always be reported in the original units; applying the function to
    already-standardized data is an identity up to rounding.
    """
    mean = d.values.mean(axis=0)
    sd = d.values.std(axis=0, ddof=0)
    zero = sd <= 0
    if np.any(zero):
        names = [d.columns[i] for i in np.nonzero(zero)[0]]
        raise ValueError(f"zero-variance column(s): {names}")
    values = (d.values - mean) / sd
    if d.scaling is None:
        scaling = Scaling(mean=mean, sd=sd)
    else:
        scaling = Scaling(
            mean=d.scaling.mean + d.scaling.sd * mean,
            sd=d.scaling.sd * sd,
        )
    return Dataset(
        values=values,
        columns=d.columns,
        scaling=scaling,
        rejected_rows=d.rejected_rows,
    )
