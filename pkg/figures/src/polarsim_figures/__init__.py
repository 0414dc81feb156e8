"""Figure rendering for polarsim harness CSV output."""

from polarsim_figures.recipes import FIGURE_IDS, FigureRecipe, recipe_for
from polarsim_figures.render import RenderError, render

__version__ = "0.1.0"
