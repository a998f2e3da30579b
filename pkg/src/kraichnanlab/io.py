"""Snapshot and table export: binary payloads with JSON sidecars, CSV tables.

Field snapshots are raw little-endian complex128 coefficient dumps next to a
JSON header carrying (kind, d, k_max, grid_size, time, shape); densities are
raw float64 dumps with the box geometry in the header.  Measures go to a long
CSV (cell_ix, bin_ix, weight) plus a JSON header with the cell geometry, bin
edges and overflow mass.
"""

import csv
import json

import numpy as np

from .measures import BBins, GriddedYoungMeasure
from .scalar import SpectralScalarField
from .vector import SpectralVectorField
from .vlasov import BGridDensity


def save_field_snapshot(field, time, path_base, grid_size=0):
    """Write <base>.bin (coefficients) and <base>.json (metadata)."""
    coeffs = np.ascontiguousarray(field.coeffs, dtype=np.complex128)
    with open(path_base + ".bin", "wb") as fh:
        fh.write(coeffs.tobytes())
    header = {
        "kind": "vector" if isinstance(field, SpectralVectorField) else "scalar",
        "d": field.d,
        "k_max": field.k_max,
        "grid_size": grid_size,
        "time": time,
        "shape": list(coeffs.shape),
        "dtype": "complex128",
    }
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_field_snapshot(path_base):
    """Read a snapshot pair; returns (field, time)."""
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    raw = np.fromfile(path_base + ".bin", dtype=np.complex128)
    coeffs = raw.reshape(header["shape"])
    if header["kind"] == "vector":
        field = SpectralVectorField(coeffs, header["k_max"])
    else:
        field = SpectralScalarField(coeffs, header["k_max"], header["d"])
    return field, header["time"]


def save_density_snapshot(rho, time, path_base):
    with open(path_base + ".bin", "wb") as fh:
        fh.write(np.ascontiguousarray(rho.values, dtype=np.float64).tobytes())
    header = {
        "kind": "b-density",
        "half_width": rho.half_width,
        "m": rho.m,
        "time": time,
        "dtype": "float64",
    }
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_density_snapshot(path_base):
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    values = np.fromfile(path_base + ".bin", dtype=np.float64).reshape(
        (header["m"],) * 3
    )
    return BGridDensity(header["half_width"], header["m"], values), header["time"]


def save_measure(measure, path_base):
    """Long-format CSV (cell_ix, bin_ix, weight) + JSON geometry header."""
    with open(path_base + ".csv", "w", newline="") as fh:
        fh.write("# schema=1\n")
        writer = csv.writer(fh)
        writer.writerow(["cell_ix", "bin_ix", "weight"])
        for c in range(measure.n_cells):
            row = measure.weights[c]
            for b in np.nonzero(row)[0]:
                writer.writerow([c, int(b), f"{row[b]:.17g}"])
    header = {
        "d": measure.d,
        "m_cells": measure.m_cells,
        "bin_lo": measure.bins.lo.tolist(),
        "bin_hi": measure.bins.hi.tolist(),
        "bin_counts": measure.bins.counts.tolist(),
        "overflow_mass": measure.overflow_mass(),
    }
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_measure(path_base):
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    bins = BBins(
        lo=np.array(header["bin_lo"]),
        hi=np.array(header["bin_hi"]),
        counts=np.array(header["bin_counts"]),
    )
    n_cells = header["m_cells"] ** header["d"]
    weights = np.zeros((n_cells, bins.n_total))
    with open(path_base + ".csv") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        weights[int(rec["cell_ix"]), int(rec["bin_ix"])] = float(rec["weight"])
    return GriddedYoungMeasure(
        d=header["d"], m_cells=header["m_cells"], bins=bins, weights=weights
    )
