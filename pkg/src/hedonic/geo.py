"""Great-circle distances and the nearest-offender Distance factor."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_KM = 6371.0088


class GeoError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise GeoError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise GeoError(f"longitude {self.longitude} outside [-180, 180]")


def _haversine(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Elementwise haversine distance in km for broadcastable degree arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    # the symmetric form keeps haversine(a, b) == haversine(b, a) bit-for-bit
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    return float(_haversine(np.array([a.latitude]), np.array([a.longitude]),
                            np.array([b.latitude]), np.array([b.longitude]))[0])


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
        return arr[:, 0].copy(), arr[:, 1].copy()
    lat = np.array([p.latitude for p in points], dtype=float)
    lon = np.array([p.longitude for p in points], dtype=float)
    return lat, lon


def _row_distances(lat_i: float, lon_i: float, olat: np.ndarray, olon: np.ndarray) -> np.ndarray:
    return _haversine(np.full(olat.size, lat_i), np.full(olat.size, lon_i), olat, olon)


def nearest_distance(listings, offenders, method: str = "brute") -> np.ndarray:
    """Distance (km) from each listing to its nearest offender.

    ``method="brute"`` scans all pairs. ``method="tree"`` shortlists
    candidates with a KD-tree on unit-sphere chord length (monotone in
    great-circle distance) and then evaluates haversine on every candidate
    tied within rounding of the chord minimum, so both methods return the
    same numbers.

    Points may be sequences of :class:`GeoPoint` or ``(n, 2)`` arrays of
    ``(latitude, longitude)``.
    """
    llat, llon = _as_arrays(listings)
    olat, olon = _as_arrays(offenders)
    if olat.size == 0:
        raise GeoError("offender list is empty; Distance cannot be computed")
    out = np.empty(llat.size)
    if method == "brute":
        for i in range(llat.size):
            out[i] = _row_distances(llat[i], llon[i], olat, olon).min()
        return out
    if method != "tree":
        raise GeoError(f"unknown method {method!r}")

    tree = cKDTree(_unit_vectors(olat, olon))
    lvec = _unit_vectors(llat, llon)
    chord, _ = tree.query(lvec, k=1)
    for i in range(llat.size):
        radius = chord[i] * (1.0 + 1e-9) + 1e-12
        cand = np.asarray(tree.query_ball_point(lvec[i], radius), dtype=int)
        out[i] = _row_distances(llat[i], llon[i], olat[cand], olon[cand]).min()
    return out


def _unit_vectors(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    phi, lam = np.radians(lat), np.radians(lon)
    return np.column_stack([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)])


def read_points(path) -> list[GeoPoint]:
    """Read a ``latitude,longitude`` CSV."""
    pts = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in reader.fieldnames or []]
        reader.fieldnames = fields
        if "latitude" not in fields or "longitude" not in fields:
            raise GeoError(f"{path}: header must contain latitude,longitude")
        for i, row in enumerate(reader, start=1):
            try:
                pts.append(GeoPoint(float(row["latitude"]), float(row["longitude"])))
            except (TypeError, ValueError) as exc:
                raise GeoError(f"{path}: bad coordinate on row {i}: {exc}") from None
    return pts
