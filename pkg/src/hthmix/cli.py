"""Batch command-line front door: fit grids of models, export contours."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .contours import contour_grid, quasiconcavity_check
from .dataset import load_csv, standardize
from .dist_core import HthParams
from .em_engine import FitConfig, ecm_fit
from .metrics import ari
from .specfun import MvnSpec, QuadratureSpec

__all__ = ["main", "run_fit", "RunConfig"]


def _parse_int_list(text):
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="hthmix",
        description=(
            "Fit hidden truncation hyperbolic mixtures over a (G, q) grid, "
            "select by BIC, and export labels, summaries, contour grids and "
            "figures."
        ),
    )
    ap.add_argument("--input", required=True, help="CSV file with a header row")
    ap.add_argument("--columns", required=True, help="comma-separated numeric columns to model")
    ap.add_argument("--label-column", default=None, help="optional true-label column for ARI")
    ap.add_argument("--G", default="1", help="comma-separated component counts, e.g. 2,3")
    ap.add_argument("--q", default="1", help="comma-separated skewness ranks, e.g. 1,2")
    ap.add_argument("--starts", type=int, default=5, help="k-means starts per fit")
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    ap.add_argument("--no-scale", action="store_true", help="skip per-column standardization")
    ap.add_argument("--tol", type=float, default=1e-6, help="relative log-likelihood tolerance")
    ap.add_argument("--max-iter", type=int, default=1000, help="iteration cap per start")
    ap.add_argument("--out", default="hthmix-out", help="output directory")
    ap.add_argument(
        "--contour",
        default=None,
        metavar="X1MIN,X1MAX,X2MIN,X2MAX,RES",
        help="export a density grid of the BIC-best model (p = 2 data only)",
    )
    ap.add_argument(
        "--check-convexity",
        type=int,
        default=None,
        metavar="LEVELS",
        help="run the upper-level-set convexity check on exported grids",
    )
    return ap


class RunConfig:
    """Parsed CLI request; one fit per (G, q) pair."""

    def __init__(self, args):
        self.input = args.input
        self.columns = [c.strip() for c in args.columns.split(",") if c.strip()]
        self.label_column = args.label_column
        self.G_list = _parse_int_list(args.G)
        self.q_list = _parse_int_list(args.q)
        self.starts = args.starts
        self.seed = args.seed
        self.scale = not args.no_scale
        self.tol = args.tol
        self.max_iter = args.max_iter
        self.out = Path(args.out)
        self.contour = args.contour
        self.check_convexity = args.check_convexity
        if any(g < 1 for g in self.G_list):
            raise ValueError("G values must be >= 1")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _dump_json(payload, path):
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _model_payload(result, dataset):
    comps = []
    for w, comp in zip(result.model.weights, result.model.components):
        mu_o, sigma_o, lam_o = dataset.to_original_units(
            comp.mu, comp.sigma, comp.lambda_mat
        )
        comps.append(
            {
                "weight": float(w),
                "scaled": {
                    "mu": comp.mu,
                    "sigma": comp.sigma,
                    "lambda_mat": comp.lambda_mat,
                    "index": comp.index,
                    "omega": comp.omega,
                },
                "original_units": {
                    "mu": mu_o if mu_o is not None else comp.mu,
                    "sigma": sigma_o if sigma_o is not None else comp.sigma,
                    "lambda_mat": lam_o if lam_o is not None else comp.lambda_mat,
                    "index": comp.index,
                    "omega": comp.omega,
                },
            }
        )
    return {
        "components": comps,
        "bic": float(result.bic),
        "loglik_trace": [float(v) for v in result.loglik_trace],
        "labels": result.labels.tolist(),
        "converged": bool(result.converged),
        "n_iter": int(result.n_iter),
    }


def _trace_figure(result, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(result.loglik_trace, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def _bic_figure(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    qs = sorted({r["q"] for r in rows if np.isfinite(r["bic"])})
    for qv in qs:
        pts = sorted((r["G"], r["bic"]) for r in rows if r["q"] == qv and np.isfinite(r["bic"]))
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"q={qv}")
    ax.set_xlabel("components G")
    ax.set_ylabel("BIC (larger is better)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def run_fit(config: RunConfig):
    """Fit every (G, q) pair, persist artifacts, and return (summary, exit code)."""
    dataset = load_csv(config.input, config.columns)
    labels_true = None
    if config.label_column:
        import pandas as pd

        frame = pd.read_csv(config.input)
        if config.label_column not in frame.columns:
            raise ValueError(f"label column {config.label_column!r} not in input")
        keep = np.ones(len(frame), dtype=bool)
        for i in dataset.rejected_rows:
            keep[i - 1] = False
        labels_true = frame[config.label_column].to_numpy()[keep]
    if config.scale:
        dataset = standardize(dataset)

    config.out.mkdir(parents=True, exist_ok=True)
    rows = []
    results = {}
    failures = 0
    for G in config.G_list:
        for qv in config.q_list:
            tag = f"G{G}_q{qv}"
            try:
                fit_config = FitConfig(
                    max_iter=config.max_iter,
                    loglik_rel_tol=config.tol,
                    n_starts=config.starts,
                    seed=config.seed,
                )
                result = ecm_fit(dataset.values, G, qv, fit_config)
            except Exception as exc:  # noqa: BLE001 - reported per pair
                failures += 1
                rows.append(
                    {"G": G, "q": qv, "bic": float("nan"), "loglik": float("nan"),
                     "ari": None, "error": f"{type(exc).__name__}: {exc}"}
                )
                continue
            payload = _model_payload(result, dataset)
            score = None
            if labels_true is not None:
                score = ari(labels_true, result.labels)
                payload["ari"] = score
            _dump_json(payload, config.out / f"fit_{tag}.json")
            np.savetxt(
                config.out / f"labels_{tag}.csv",
                result.labels,
                fmt="%d",
                header="label",
                comments="",
            )
            _trace_figure(result, config.out / f"trace_{tag}.png")
            rows.append(
                {"G": G, "q": qv, "bic": float(result.bic),
                 "loglik": float(result.loglik_trace[-1]), "ari": score, "error": None}
            )
            results[(G, qv)] = result

    finite = [r for r in rows if np.isfinite(r["bic"])]
    best_row = max(finite, key=lambda r: r["bic"]) if finite else None
    summary = {
        "input": str(config.input),
        "columns": list(config.columns),
        "scaled": config.scale,
        "seed": config.seed,
        "fits": rows,
        "best": {"G": best_row["G"], "q": best_row["q"], "bic": best_row["bic"],
                 "ari": best_row["ari"]} if best_row else None,
    }
    _dump_json(summary, config.out / "summary.json")
    _bic_figure(rows, config.out / "bic_summary.png")

    if config.contour and best_row is not None:
        best = results[(best_row["G"], best_row["q"])]
        vals = [float(v) for v in config.contour.split(",")]
        if len(vals) != 5:
            raise ValueError("--contour wants X1MIN,X1MAX,X2MIN,X2MAX,RES")
        bounds = ((vals[0], vals[1]), (vals[2], vals[3]))
        res = int(vals[4])
        for gi, comp in enumerate(best.model.components):
            grid = contour_grid(comp, bounds, res)
            grid.save_csv(config.out / f"contour_best_c{gi}.csv")
            grid.save_figure(
                config.out / f"contour_best_c{gi}.png",
                title=f"component {gi} (G={best_row['G']}, q={best_row['q']})",
            )
            if config.check_convexity:
                report = quasiconcavity_check(grid, config.check_convexity)
                _dump_json(
                    {
                        "thresholds": list(report.thresholds),
                        "violations": list(report.violations),
                        "cells_in_level": list(report.cells_in_level),
                        "total_violations": report.total_violations,
                    },
                    config.out / f"convexity_best_c{gi}.json",
                )

    exit_code = 0 if failures == 0 else 2
    return summary, exit_code


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig(args)
        summary, code = run_fit(config)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    best = summary.get("best")
    if best:
        line = f"best model: G={best['G']} q={best['q']} BIC={best['bic']:.3f}"
        if best.get("ari") is not None:
            line += f" ARI={best['ari']:.3f}"
        print(line)
    for row in summary["fits"]:
        if row["error"]:
            print(f"fit G={row['G']} q={row['q']} failed: {row['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
