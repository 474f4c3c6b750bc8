"""Spectral numbers of a two-weighted boundary value problem and the n-widths they equal."""

from .grid import (
    ExponentSet,
    Grid,
    GridFunction,
    GridMismatchError,
    ZeroFunctionError,
    count_sign_changes,
    duality_map,
    integrate,
    make_grid,
    resample,
    sign_change_locations,
    weighted_lp_norm,
)

__version__ = "0.1.0"

__all__ = [
    "ExponentSet",
    "Grid",
    "GridFunction",
    "GridMismatchError",
    "ZeroFunctionError",
    "count_sign_changes",
    "duality_map",
    "integrate",
    "make_grid",
    "resample",
    "sign_change_locations",
    "weighted_lp_norm",
    "__version__",
]
