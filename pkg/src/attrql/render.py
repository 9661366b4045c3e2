"""Grayscale heatmap rendering: attribution maps to binary PGM (P5) images.

Pixel intensity is round(255 * |v| / max|v|); an all-zero map renders all
black. Channelled maps collapse to the spatial grid by summing magnitudes.
Pair results render side by side with a one-pixel white divider.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .attribution import AttributionMap, AttributionResult


class NonSpatialShape(ValueError):
    pass


def _grid(m: AttributionMap) -> np.ndarray:
    if len(m.shape) == 2:
        return np.abs(m.as_array())
    if len(m.shape) == 3:
        return np.abs(m.as_array()).sum(axis=0)
    raise NonSpatialShape(f"shape {m.shape} has no 2-D rendering")


def _to_pixels(grid: np.ndarray) -> np.ndarray:
    peak = grid.max()
    if peak <= 0.0:
        return np.zeros(grid.shape, dtype=np.uint8)
    return np.rint(255.0 * grid / peak).astype(np.uint8)


def _write_pgm(pixels: np.ndarray, out: str | Path) -> None:
    h, w = pixels.shape
    with open(out, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())


def render_heatmap(m: AttributionMap, out: str | Path) -> None:
    _write_pgm(_to_pixels(_grid(m)), out)


def render_result(result: AttributionResult, out: str | Path) -> None:
    """Single maps render directly; multi-map results are normalized jointly
    and concatenated left to right with 1-pixel dividers."""
    if result.kind == "single":
        render_heatmap(result.single, out)
        return
    grids = [_grid(m) for m in result.maps]
    peak = max(g.max() for g in grids)
    panels = []
    for g in grids:
        if peak <= 0.0:
            panels.append(np.zeros(g.shape, dtype=np.uint8))
        else:
            panels.append(np.rint(255.0 * g / peak).astype(np.uint8))
    h = panels[0].shape[0]
    divider = np.full((h, 1), 255, dtype=np.uint8)
    row: list[np.ndarray] = []
    for j, panel in enumerate(panels):
        if j:
            row.append(divider)
        row.append(panel)
    _write_pgm(np.hstack(row), out)
