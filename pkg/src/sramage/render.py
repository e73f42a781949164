"""Image and table emitters for P1/instability maps, scatter data and spectra.

Bitmaps are binary PGM (P5). The square layout is purely presentational and
has no relation to the physical cell arrangement; pixels past the last bit
are filled with mid-gray.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bitcore import InstabilityMap, P1Map
from .errors import InvalidArgumentError

SENTINEL_SHADE = 128
MAXVAL = 255


def grid_shape(num_values: int) -> tuple[int, int]:
    """(rows, cols) of the most-square grid holding ``num_values`` with full rows."""
    cols = math.isqrt(num_values)
    if cols * cols < num_values:
        cols += 1
    rows = -(-num_values // cols)
    return rows, cols


def bitmap_pixels(values, vmax: float, mode: str = "unsorted") -> np.ndarray:
    """Gray levels (``uint8``, rows x cols) for ``values`` scaled so ``vmax`` is white."""
    if mode not in ("unsorted", "row-ranked"):
        raise InvalidArgumentError(f"mode must be 'unsorted' or 'row-ranked', got {mode!r}")
    v = np.asarray(values, dtype=float).reshape(-1)
    rows, cols = grid_shape(v.size)
    shades = np.rint(np.clip(v / vmax, 0.0, 1.0) * MAXVAL).astype(np.uint8)
    img = np.full(rows * cols, SENTINEL_SHADE, dtype=np.uint8)
    img[:v.size] = shades
    img = img.reshape(rows, cols)
    if mode == "row-ranked":
        full = v.size // cols
        img[:full] = np.sort(img[:full], axis=1)
        tail = v.size - full * cols
        if tail:
            img[full, :tail] = np.sort(img[full, :tail])
    return img


def write_pgm(path, pixels: np.ndarray) -> Path:
    pixels = np.asarray(pixels, dtype=np.uint8)
    rows, cols = pixels.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{MAXVAL}\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise InvalidArgumentError("not a binary PGM file")
    cols, rows = int(tokens[1]), int(tokens[2])
    # exactly one whitespace byte separates the header from the raster
    return np.frombuffer(data[pos + 1:pos + 1 + rows * cols], dtype=np.uint8).reshape(rows, cols)


def render_bitmap(stat_map, path, mode: str = "unsorted") -> Path:
    """Write a P1 or instability map as a grayscale image (0 black, type maximum white)."""
    if isinstance(stat_map, P1Map):
        values, vmax = stat_map.values, 1.0
    elif isinstance(stat_map, InstabilityMap):
        values, vmax = stat_map.values, 0.5
    else:
        values = np.asarray(stat_map, dtype=float)
        vmax = float(values.max()) if values.size and values.max() > 0 else 1.0
    return write_pgm(path, bitmap_pixels(values, vmax, mode))


def xy_table(x, columns: Mapping[str, Sequence[float]], x_name: str = "x",
             fit_line: tuple[float, float] | None = None) -> str:
    """Delimiter-separated table; an optional fit is stored as ``# intercept=`` / ``# slope=`` footer lines."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow([x_name] + names)
    x = np.asarray(x, dtype=float).reshape(-1)
    cols = [np.asarray(columns[n], dtype=float).reshape(-1) for n in names]
    if any(c.size != x.size for c in cols):
        raise InvalidArgumentError("every column must have one value per x")
    for i in range(x.size):
        w.writerow([repr(float(x[i]))] + [repr(float(c[i])) for c in cols])
    if fit_line is not None:
        buf.write(f"# intercept={float(fit_line[0])!r}\n# slope={float(fit_line[1])!r}\n")
    return buf.getvalue()


def parse_xy_table(text: str):
    """Inverse of :func:`xy_table`: ``(x_name, x, columns, fit_line)``."""
    body = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    meta = dict(ln[2:].split("=", 1) for ln in text.splitlines() if ln.startswith("# "))
    rows = list(csv.reader(body))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    cols = {name: data[:, j + 1] for j, name in enumerate(header[1:])}
    fit = (float(meta["intercept"]), float(meta["slope"])) if "slope" in meta else None
    return header[0], data[:, 0], cols, fit


def svg_plot(x, columns: Mapping[str, Sequence[float]], fit_line=None, width: int = 480, height: int = 320,
             title: str = "") -> str:
    """Minimal standalone SVG scatter/line plot (cosmetic only)."""
    x = np.asarray(x, dtype=float)
    pad = 40
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    ys = [np.asarray(v, dtype=float) for v in columns.values()]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="12">{title}</text>']
    if x.size:
        allv = np.concatenate(ys) if ys else np.zeros(1)
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(allv.min()), float(allv.max())
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(v):
            return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

        for k, y in enumerate(ys):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            parts.append(f'<polyline fill="none" stroke="{palette[k % len(palette)]}" points="{pts}"/>')
        if fit_line is not None:
            b, m = fit_line
            parts.append(f'<line x1="{sx(x0):.2f}" y1="{sy(b + m * x0):.2f}" x2="{sx(x1):.2f}" '
                         f'y2="{sy(b + m * x1):.2f}" stroke="black" stroke-dasharray="4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_xy(path_stem, x, columns: Mapping[str, Sequence[float]], x_name: str = "x",
              fit_line: tuple[float, float] | None = None, title: str = "") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (always) and ``<stem>.svg``."""
    stem = Path(path_stem)
    csv_path = stem.with_suffix(".csv")
    svg_path = stem.with_suffix(".svg")
    csv_path.write_text(xy_table(x, columns, x_name, fit_line))
    svg_path.write_text(svg_plot(x, columns, fit_line, title=title))
    return csv_path, svg_path
