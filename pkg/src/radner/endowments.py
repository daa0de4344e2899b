"""Builders for terminal values on a tree."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ValidationError


def affine(tree, a: float, b: float) -> np.ndarray:
    """``a B_T + b W_T``."""
    return tree.terminal(lambda B, W: a * B + b * W)


def tabulated(tree, grid_b, grid_w, values, extrapolation: str = "clamp") -> np.ndarray:
    """Bilinear interpolation of a table ``values[i, j] = g(grid_b[i], grid_w[j])``.

    Points outside the grid are either clamped to its boundary
    (``"clamp"``) or rejected (``"error"``).
    """
    gb = np.asarray(grid_b, dtype=float)
    gw = np.asarray(grid_w, dtype=float)
    vals = np.asarray(values, dtype=float)
    if gb.ndim != 1 or gw.ndim != 1 or gb.size < 2 or gw.size < 2:
        raise ValidationError("grids need at least two points each")
    if np.any(np.diff(gb) <= 0) or np.any(np.diff(gw) <= 0):
        raise ValidationError("grids must be strictly increasing")
    if vals.shape != (gb.size, gw.size):
        raise ValidationError(f"table has shape {vals.shape}, expected {(gb.size, gw.size)}")
    if not np.all(np.isfinite(vals)):
        raise ValidationError("table values must be finite")
    B, W = tree.state(tree.N)
    if extrapolation == "error":
        outside = (B < gb[0]) | (B > gb[-1]) | (W < gw[0]) | (W > gw[-1])
        if outside.any():
            raise ValidationError(
                f"{int(outside.sum())} terminal points fall outside the table "
                f"(B in [{B.min():.4g}, {B.max():.4g}], W in [{W.min():.4g}, {W.max():.4g}])"
            )
    elif extrapolation != "clamp":
        raise ValidationError(f"unknown extrapolation {extrapolation!r}")
    interp = RegularGridInterpolator((gb, gw), vals, method="linear")
    pts = np.column_stack([np.clip(B, gb[0], gb[-1]), np.clip(W, gw[0], gw[-1])])
    return interp(pts)


def path_table(tree, values) -> np.ndarray:
    if tree.recombining:
        raise ValidationError("path tables need the non-recombining tree")
    vals = np.asarray(values, dtype=float)
    if vals.shape != (tree.size(tree.N),):
        raise ValidationError(f"path table needs {tree.size(tree.N)} values, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValidationError("path table values must be finite")
    return vals


def functional_1d(x, coef: float | None = None, grid=None, values=None) -> np.ndarray:
    """``coef * x`` or piecewise-linear interpolation of a table (flat outside it)."""
    if coef is not None:
        return coef * np.asarray(x, dtype=float)
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("1-d table needs matching increasing grid and values")
    return np.interp(x, grid, values)
