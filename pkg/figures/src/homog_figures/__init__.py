"""Figure rendering for homog experiment outputs."""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, FigureSpec, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "render", "__version__"]
