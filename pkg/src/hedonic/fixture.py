"""Synthetic city listings with a known additive log-price surface.

The generator stands in for real listing exports. Its ground truth is
nonlinear in latitude, living area and construction year, so additive
spline models have something to find that linear and low-order polynomial
models cannot fully capture. A fixed block of deliberately invalid rows
exercises the ingestion filters.

Bundled copies generated with ``DEFAULT_SEED`` live in ``hedonic/data``.
"""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

import numpy as np

from .geo import nearest_distance

DEFAULT_SEED = 2021
N_ROWS = 2000
N_OFFENDERS = 150
LAT_RANGE = (47.50, 47.75)
LON_RANGE = (-122.45, -122.25)
NOISE_SD = 0.25

# (column, bad value, expected rejection reason), cycled over every 50th row
INVALID_ROWS = (
    ("price", "40000", "price below min $50K"),
    ("latitude", "95.0", "latitude 95 outside [-90, 90]"),
    ("beds", "0", "beds below min 1"),
    ("indoors", "n/a", "unparseable indoors 'n/a'"),
)
N_INVALID = 40

HEADER = ("price", "dwelling", "beds", "baths", "indoors", "lot", "year", "days", "hoa",
          "latitude", "longitude", "waterfront", "accessible", "green", "air_cond")


def truth_components(lat, lon, indoors, year):
    """The nonlinear parts of the ground-truth log price."""
    u_lat = (np.asarray(lat) - LAT_RANGE[0]) / (LAT_RANGE[1] - LAT_RANGE[0])
    u_lon = (np.asarray(lon) - LON_RANGE[0]) / (LON_RANGE[1] - LON_RANGE[0])
    return {
        "latitude": 0.35 * np.sin(3.0 * np.pi * u_lat),
        "longitude": 0.30 * u_lon,
        "indoors": 0.90 * np.tanh((np.asarray(indoors) - 1600.0) / 600.0),
        "year": (0.25 * np.exp(-((np.asarray(year) - 1925.0) / 12.0) ** 2)
                 + 0.20 / (1.0 + np.exp(-(np.asarray(year) - 2008.0) / 3.0))),
    }


def generate(seed: int = DEFAULT_SEED, n_rows: int = N_ROWS, n_offenders: int = N_OFFENDERS):
    """Return ``(listing rows, offender rows)`` as lists of CSV string rows."""
    rng = np.random.default_rng(seed)
    n = n_rows
    dwelling = rng.choice(["SingleFamily", "Condo", "Townhouse", "MultiFamily"], size=n,
                          p=[0.55, 0.20, 0.15, 0.10])
    condo = dwelling == "Condo"
    lat = rng.uniform(*LAT_RANGE, size=n)
    lon = rng.uniform(*LON_RANGE, size=n)
    indoors = np.round(np.exp(rng.normal(np.log(1700.0), 0.40, size=n)))
    indoors[condo] = np.round(indoors[condo] * 0.6)
    indoors = np.maximum(indoors, 300.0)
    beds = np.clip(np.round(indoors / 600.0 + rng.normal(0, 0.6, size=n)), 1, 7)
    baths = np.clip(np.round(2.0 * (indoors / 900.0 + rng.normal(0, 0.4, size=n))) / 2.0, 1.0, 5.0)
    lot = np.where(condo, 0.0, np.round(np.exp(rng.normal(np.log(5000.0), 0.5, size=n))))
    lot = np.where((lot > 0) & (lot < 400), 400.0, lot)
    year = rng.integers(1900, 2022, size=n).astype(float)
    days = np.floor(rng.exponential(35.0, size=n))
    hoa = np.where(condo, np.round(rng.uniform(150, 900, size=n)),
                   np.where(dwelling == "Townhouse", np.round(rng.uniform(0, 300, size=n)), 0.0))
    waterfront = rng.random(n) < 0.05
    accessible = rng.random(n) < 0.10
    green = rng.random(n) < 0.08
    air_cond = rng.random(n) < 0.40

    off_lat = rng.uniform(*LAT_RANGE, size=n_offenders)
    off_lon = rng.uniform(*LON_RANGE, size=n_offenders)
    distance = nearest_distance(np.column_stack([lat, lon]), np.column_stack([off_lat, off_lon]))

    comp = truth_components(lat, lon, indoors, year)
    dwell_eff = {"SingleFamily": 0.0, "Condo": -0.15, "Townhouse": -0.05, "MultiFamily": 0.05}
    logp = (12.7 + sum(comp.values())
            + 0.03 * beds + 0.08 * baths + 0.10 * np.log1p(lot / 5000.0)
            - 0.002 * days - 0.0003 * hoa + 0.05 * np.log1p(distance)
            + np.array([dwell_eff[d] for d in dwelling])
            + 0.20 * waterfront + 0.05 * green + 0.04 * air_cond
            + rng.normal(0.0, NOISE_SD, size=n))
    price = np.round(np.exp(np.clip(logp, 11.2, 15.5)), -2)

    rows = []
    for i in range(n):
        rows.append([
            f"{price[i]:.0f}", dwelling[i], f"{beds[i]:.0f}", f"{baths[i]:g}", f"{indoors[i]:.0f}",
            "" if lot[i] == 0 else f"{lot[i]:.0f}", f"{year[i]:.0f}", f"{days[i]:.0f}",
            f"{hoa[i]:.0f}", f"{lat[i]:.6f}", f"{lon[i]:.6f}",
            str(int(waterfront[i])), str(int(accessible[i])), str(int(green[i])), str(int(air_cond[i])),
        ])
    for k in range(N_INVALID):
        col, bad, _ = INVALID_ROWS[k % len(INVALID_ROWS)]
        rows[k * (n // N_INVALID)][HEADER.index(col)] = bad
    offenders = [[f"{off_lat[i]:.6f}", f"{off_lon[i]:.6f}"] for i in range(n_offenders)]
    return rows, offenders


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_fixture(out_dir, seed: int = DEFAULT_SEED) -> tuple[Path, Path]:
    """Write ``listings.csv`` and ``offenders.csv`` into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, offenders = generate(seed)
    listings = out / "listings.csv"
    off = out / "offenders.csv"
    listings.write_text(_csv_text(HEADER, rows), encoding="utf-8")
    off.write_text(_csv_text(("latitude", "longitude"), offenders), encoding="utf-8")
    return listings, off


def bundled_paths() -> tuple[Path, Path]:
    """Paths of the bundled fixture (generated with ``DEFAULT_SEED``)."""
    base = resources.files("hedonic") / "data"
    return Path(str(base / "fixture_listings.csv")), Path(str(base / "fixture_offenders.csv"))
