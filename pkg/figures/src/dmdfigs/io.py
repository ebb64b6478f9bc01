"""Readers for the benchmark's CSV/JSON artifacts.

These parse the documented file formats directly; the figures package has no
dependency on the benchmark library itself.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def read_density(csv_path, meta_path=None) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Read a density CSV plus sidecar; returns (re_coords, im_coords, values,
    meta) with ``values[j, i]`` at (re_coords[i], im_coords[j])."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    re_min, re_max = meta["re_range"]
    im_min, im_max = meta["im_range"]
    res = meta["resolution"]
    n_re = int(round((re_max - re_min) / res)) + 1
    n_im = int(round((im_max - im_min) / res)) + 1
    values = np.zeros((n_im, n_re))
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for re_s, im_s, dens_s in reader:
            i = int(round((float(re_s) - re_min) / res))
            j = int(round((float(im_s) - im_min) / res))
            values[j, i] = float(dens_s)
    re_coords = re_min + res * np.arange(n_re)
    im_coords = im_min + res * np.arange(n_im)
    return re_coords, im_coords, values, meta


def read_binstats(csv_path) -> list[dict]:
    with Path(csv_path).open(newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def density_panels_from_manifest(manifest_path, algorithm: str) -> list[dict]:
    """Panel grid from a run manifest: one row per dataset shape, one column
    per system grid point, for the chosen algorithm."""
    manifest_path = Path(manifest_path)
    payload = read_manifest(manifest_path)
    root = manifest_path.parent
    cells = [
        c
        for c in payload["cells"]
        if c["algorithm"] == algorithm and c.get("status") == "ok"
    ]
    if not cells:
        raise ValueError(f"manifest has no completed cells for {algorithm!r}")
    shapes = sorted({tuple(c["shape"]) for c in cells}, key=lambda s: (-s[0], s[1]))
    systems = []
    for c in cells:
        if c["system"] not in systems:
            systems.append(c["system"])
    rows = []
    for shape in shapes:
        panels = []
        for system in systems:
            match = [
                c
                for c in cells
                if tuple(c["shape"]) == shape and c["system"] == system
            ]
            if match:
                panels.append(
                    {
                        "csv": str(root / f"{match[0]['id']}_density.csv"),
                        "title": system,
                    }
                )
            else:
                panels.append({"csv": None, "title": system})
        rows.append({"label": f"N={shape[0]} L={shape[1]}", "panels": panels})
    return rows
