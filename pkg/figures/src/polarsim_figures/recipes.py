"""Figure recipes for the harness CSV output.

Each recipe names the CSV file(s) it consumes inside a harness output
directory, the columns it plots, and the styling convention: corrected
master-equation traces are solid lines, uncorrected ones dashed, and the
influence-functional benchmark is drawn as points.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

FIGURE_IDS = ("fig2", "fig3a", "fig3b", "fig4", "fig5")

#: columns every time-series CSV must provide
TIME_SERIES_COLUMNS = ("t", "sz", "sx_corrected", "sy_corrected",
                       "sx_uncorrected", "sy_uncorrected", "source")
STEADY_COLUMNS = ("param", "value", "sx_corrected", "sx_uncorrected", "source")


@dataclass(frozen=True)
class FigureRecipe:
    figure_id: str
    csv_name: str
    title: str
    xlabel: str
    ylabel: str
    required_columns: tuple
    xlim: tuple | None = None
    out_path: str | None = None

    def csv_path(self, in_dir) -> Path:
        return Path(in_dir) / self.csv_name


RECIPES: dict[str, FigureRecipe] = {
    "fig2": FigureRecipe(
        figure_id="fig2", csv_name="static-dynamics.csv",
        title="Population dynamics",
        xlabel=r"$t\,\Delta$", ylabel=r"$\langle\sigma_z\rangle$",
        required_columns=TIME_SERIES_COLUMNS),
    "fig3a": FigureRecipe(
        figure_id="fig3a", csv_name="steady-sweep-alpha.csv",
        title="Steady-state coherence vs coupling",
        xlabel=r"coupling $\alpha$", ylabel=r"$\langle\sigma_x\rangle_{ss}$",
        required_columns=STEADY_COLUMNS),
    "fig3b": FigureRecipe(
        figure_id="fig3b", csv_name="steady-sweep-temperature.csv",
        title="Steady-state coherence vs temperature",
        xlabel=r"temperature $T/\Delta$", ylabel=r"$\langle\sigma_x\rangle_{ss}$",
        required_columns=STEADY_COLUMNS),
    "fig4": FigureRecipe(
        figure_id="fig4", csv_name="landau-zener.csv",
        title="Bias-sweep population transfer",
        xlabel=r"$t\,\Delta$", ylabel=r"$\langle\sigma_z\rangle$",
        required_columns=TIME_SERIES_COLUMNS),
    "fig5": FigureRecipe(
        figure_id="fig5", csv_name="landau-zener.csv",
        title="Bias-sweep coherence around the crossing",
        xlabel=r"$t\,\Delta$", ylabel="",
        required_columns=TIME_SERIES_COLUMNS, xlim=(-15.0, 15.0)),
}


def recipe_for(figure_id: str, out_path=None, xlim=None) -> FigureRecipe:
    if figure_id not in RECIPES:
        raise ValueError(f"unknown figure id {figure_id!r}; choose from {FIGURE_IDS}")
    base = RECIPES[figure_id]
    updates = {}
    if out_path is not None:
        updates["out_path"] = str(out_path)
    if xlim is not None:
        updates["xlim"] = xlim
    if not updates:
        return base
    from dataclasses import replace
    return replace(base, **updates)
