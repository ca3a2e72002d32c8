"""Figure scripts over vvcv benchmark CSVs."""

from .figures import PlotSpec, load_csv, plot_box, plot_convergence

__version__ = "0.1.0"

__all__ = ["PlotSpec", "load_csv", "plot_box", "plot_convergence"]
