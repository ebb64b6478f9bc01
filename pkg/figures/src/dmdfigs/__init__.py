"""Figure rendering for benchmark artifacts."""

from .render import render, render_density, render_std

__version__ = "0.1.0"
