"""Topology heatmap export (PGM + CSV) and raw prototype dumps."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T


def write_pgm(path, matrix: np.ndarray, cell: int = 8):
    """ASCII graymap; larger values are darker. Each entry becomes a ``cell``-pixel square."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    gray = np.rint(255 * (1.0 - scaled)).astype(int)
    img = np.kron(gray, np.ones((cell, cell), dtype=int))
    rows = [" ".join(str(v) for v in row) for row in img]
    Path(path).write_text(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n" + "\n".join(rows) + "\n")


def write_csv(path, matrix: np.ndarray):
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    Path(path).write_text("\n".join(",".join(repr(float(v)) for v in row) for row in m) + "\n")


def read_csv(path) -> np.ndarray:
    return np.array([[float(v) for v in line.split(",")] for line in Path(path).read_text().splitlines() if line])


def channel_mean(topology: np.ndarray) -> np.ndarray:
    """Collapse an ``(N, N, C)`` topology to ``N x N`` by averaging channels."""
    return np.asarray(topology).mean(axis=-1)


def write_topology(topology: np.ndarray, out_dir, stem: str = "topology") -> np.ndarray:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mat = channel_mean(topology)
    write_csv(out / f"{stem}.csv", mat)
    write_pgm(out / f"{stem}.pgm", mat)
    return mat


def final_topology(model, coords: np.ndarray) -> np.ndarray:
    """Last layer's refined ``(N, N, C)`` topology for a single ``(N, T, C_in)`` sequence."""
    with T.no_grad():
        _, _, tops = model.forward(np.asarray(coords, dtype=model.dtype)[None], return_topologies=True)
    return tops[-1].data[0]


def export_topology(model, coords: np.ndarray, out_dir, stem: str = "topology") -> np.ndarray:
    """Write the channel-averaged final topology and every layer's ``W_memory``."""
    mat = write_topology(final_topology(model, coords), out_dir, stem)
    for i, layer in enumerate(model.layers):
        if layer.use_prn:
            write_csv(Path(out_dir) / f"w_memory_layer{i}.csv", layer.memory.w_memory.data)
    return mat
