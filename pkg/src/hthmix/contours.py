"""Planar density grids, contour export and the discrete convexity check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.ndimage import binary_dilation
from scipy.spatial import Delaunay, QhullError

from .dist_core import HthParams, hth_logpdf
from .specfun import MvnSpec, QuadratureSpec

__all__ = ["ContourGrid", "ConvexityReport", "contour_grid", "quasiconcavity_check"]


@dataclass(frozen=True, eq=False)
class ContourGrid:
    """Density values on a uniform planar grid; ``density[i, j]`` is f(x1[i], x2[j])."""

    x1: np.ndarray
    x2: np.ndarray
    density: np.ndarray

    def to_frame(self):
        g1, g2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        return pd.DataFrame(
            {"x1": g1.ravel(), "x2": g2.ravel(), "density": self.density.ravel()}
        )

    def save_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def save_figure(self, path, title=None, levels=12):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5.0, 4.2))
        ax.contour(self.x1, self.x2, self.density.T, levels=levels, linewidths=0.9)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, dpi=180)
        plt.close(fig)


@dataclass(frozen=True)
class ConvexityReport:
    """Per-level discrete convexity violations of upper-level sets."""

    thresholds: tuple
    violations: tuple
    cells_in_level: tuple

    @property
    def total_violations(self):
        return int(sum(self.violations))

    @property
    def ok(self):
        return self.total_violations == 0

    def summary(self):
        lines = ["level threshold    cells  violations"]
        for i, (t, v, c) in enumerate(
            zip(self.thresholds, self.violations, self.cells_in_level)
        ):
            lines.append(f"{i + 1:5d} {t:12.5e} {c:6d} {v:11d}")
        return "\n".join(lines)


def contour_grid(params: HthParams, bounds, resolution, quad=QuadratureSpec(), mvn=MvnSpec()):
    """Density table of a planar HTH distribution on a uniform grid.

    ``bounds`` is ((x1_min, x1_max), (x2_min, x2_max)); only p = 2 parameter
    sets can be gridded (contours are a planar display).
    """
    if params.p != 2:
        raise ValueError("contour grids are defined for p = 2 only")
    if resolution < 10:
        raise ValueError("resolution must be >= 10")
    (a1, b1), (a2, b2) = np.asarray(bounds, dtype=float)
    if not (a1 < b1 and a2 < b2):
        raise ValueError("bounds must be increasing in each coordinate")
    x1 = np.linspace(a1, b1, resolution)
    x2 = np.linspace(a2, b2, resolution)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    dens = np.exp(hth_logpdf(pts, params, quad, mvn)).reshape(resolution, resolution)
    return ContourGrid(x1=x1, x2=x2, density=dens)


def quasiconcavity_check(grid: ContourGrid, level_count=10):
    """Discrete convexity of the upper-level sets of a density grid.

    For each of ``level_count`` density quantile levels, every grid cell
    whose center falls inside the convex hull of the level set's cells must
    itself belong to the set, up to a one-cell boundary tolerance; cells
    failing that are counted as violations.  A convex (quasi-concave)
    density produces zero violations at every level.
    """
    dens = grid.density
    pos = dens[dens > 0]
    if pos.size == 0:
        raise ValueError("grid density is identically zero")
    probs = [(i + 1.0) / (level_count + 1.0) for i in range(level_count)]
    thresholds = tuple(float(np.quantile(pos, p)) for p in probs)

    g1, g2 = np.meshgrid(grid.x1, grid.x2, indexing="ij")
    centers = np.column_stack([g1.ravel(), g2.ravel()])
    cell = np.array([grid.x1[1] - grid.x1[0], grid.x2[1] - grid.x2[0]])

    violations = []
    cells = []
    for thr in thresholds:
        mask = dens >= thr
        cells.append(int(mask.sum()))
        pts = centers[mask.ravel()]
        if pts.shape[0] < 4:
            violations.append(0)
            continue
        try:
            tri = Delaunay(pts)
        except QhullError:
            violations.append(0)  # collinear set: trivially convex
            continue
        inside = tri.find_simplex(centers) >= 0
        # half-cell margin: ignore hull-boundary cells
        shrink = np.all(
            [
                tri.find_simplex(centers + np.array([sx, sy]) * 0.5 * cell) >= 0
                for sx in (-1, 1)
                for sy in (-1, 1)
            ],
            axis=0,
        )
        tolerated = binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
        bad = (inside & shrink) & ~tolerated.ravel()
        violations.append(int(bad.sum()))
    return ConvexityReport(
        thresholds=thresholds,
        violations=tuple(violations),
        cells_in_level=tuple(cells),
    )
