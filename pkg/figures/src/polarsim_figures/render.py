"""Rendering of harness CSV data into figure files.

Rendering is a pure function of the CSV content and the recipe; the returned
series dictionary carries exactly the plotted arrays so reruns can be
compared bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from polarsim_figures.recipes import FigureRecipe  # noqa: E402

PME_LINE = {"pme-tcl": "-", "pme-markov": "-."}
PME_DASHED = {"pme-tcl": "--", "pme-markov": ":"}
COLORS = {"pme-tcl": "tab:blue", "pme-markov": "tab:green", "oracle": "black"}


class RenderError(RuntimeError):
    """The recipe could not be rendered from the given CSV data."""


def load_csv(recipe: FigureRecipe, in_dir) -> pd.DataFrame:
    path = recipe.csv_path(in_dir)
    if not path.exists():
        raise RenderError(f"input CSV not found: {path}")
    frame = pd.read_csv(path, comment="#")
    if frame.empty:
        raise RenderError(f"no data rows in {path}")
    missing = [c for c in recipe.required_columns if c not in frame.columns]
    if missing:
        raise RenderError(f"column {missing[0]!r} missing from {path}")
    return frame


def _pme_tags(frame: pd.DataFrame) -> list:
    return sorted(t for t in frame["source"].unique() if str(t).startswith("pme"))


def _population_series(frame: pd.DataFrame) -> dict:
    series = {}
    for tag in _pme_tags(frame):
        part = frame[frame["source"] == tag]
        series[tag] = (part["t"].to_numpy(), part["sz"].to_numpy())
    oracle = frame[frame["source"] == "oracle"]
    if not oracle.empty:
        series["oracle"] = (oracle["t"].to_numpy(), oracle["sz"].to_numpy())
    return series


def _coherence_series(frame: pd.DataFrame, component: str) -> dict:
    corr, unc = f"s{component}_corrected", f"s{component}_uncorrected"
    series = {}
    for tag in _pme_tags(frame):
        part = frame[frame["source"] == tag]
        series[f"{tag} corrected"] = (part["t"].to_numpy(), part[corr].to_numpy())
        series[f"{tag} uncorrected"] = (part["t"].to_numpy(), part[unc].to_numpy())
    oracle = frame[frame["source"] == "oracle"]
    if not oracle.empty:
        series["oracle"] = (oracle["t"].to_numpy(), oracle[corr].to_numpy())
    return series


def _steady_series(frame: pd.DataFrame, as_temperature: bool) -> dict:
    x = frame["value"].to_numpy()
    if as_temperature:
        x = 1.0 / x
        order = np.argsort(x)
    else:
        order = np.argsort(x)
    return {
        "corrected": (x[order], frame["sx_corrected"].to_numpy()[order]),
        "uncorrected": (x[order], frame["sx_uncorrected"].to_numpy()[order]),
    }


def _style_for(label: str):
    if label == "oracle":
        return dict(linestyle="none", marker="o", markersize=3.5,
                    color=COLORS["oracle"])
    tag = label.split()[0]
    color = COLORS.get(tag, "tab:red")
    if label.endswith("uncorrected"):
        return dict(linestyle=PME_DASHED.get(tag, "--"), color=color)
    return dict(linestyle=PME_LINE.get(tag, "-"), color=color)


def _draw(ax, series: dict, xlabel: str, ylabel: str, xlim) -> None:
    for label, (x, y) in series.items():
        ax.plot(x, y, label=label, **_style_for(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if xlim is not None:
        ax.set_xlim(*xlim)
    ax.legend(fontsize=7)


def render(recipe: FigureRecipe, in_dir, out_path=None) -> dict:
    """Render one figure; returns {panel: {label: (x, y)}} and writes the
    image to recipe.out_path (or out_path)."""
    target = Path(out_path or recipe.out_path or f"{recipe.figure_id}.png")
    frame = load_csv(recipe, in_dir)

    if recipe.figure_id in ("fig2", "fig4"):
        panels = {"population": _population_series(frame)}
        fig, ax = plt.subplots(figsize=(5.2, 3.4))
        _draw(ax, panels["population"], recipe.xlabel, recipe.ylabel, recipe.xlim)
        ax.set_title(recipe.title)
    elif recipe.figure_id == "fig5":
        panels = {"sx": _coherence_series(frame, "x"),
                  "sy": _coherence_series(frame, "y")}
        fig, axes = plt.subplots(1, 2, figsize=(9.6, 3.4))
        _draw(axes[0], panels["sx"], recipe.xlabel,
              r"$\langle\sigma_x\rangle$", recipe.xlim)
        _draw(axes[1], panels["sy"], recipe.xlabel,
              r"$\langle\sigma_y\rangle$", recipe.xlim)
        fig.suptitle(recipe.title)
    elif recipe.figure_id in ("fig3a", "fig3b"):
        panels = {"steady": _steady_series(frame, recipe.figure_id == "fig3b")}
        fig, ax = plt.subplots(figsize=(5.2, 3.4))
        _draw(ax, panels["steady"], recipe.xlabel, recipe.ylabel, recipe.xlim)
        ax.set_title(recipe.title)
    else:  # pragma: no cover - recipe_for guards ids
        raise RenderError(f"no renderer for {recipe.figure_id}")

    fig.tight_layout()
    target.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(target, dpi=160)
    plt.close(fig)
    return panels
