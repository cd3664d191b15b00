"""Great-circle distances and one-mile covering meshes over metro regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

EARTH_RADIUS_MILES = 3958.7613


class InvalidRegion(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 < self.lon <= 180.0) or math.isnan(self.lon):
            raise ValueError(f"longitude out of range: {self.lon}")


def haversine_miles(a: GeoPoint, b: GeoPoint) -> float:
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * math.asin(math.sqrt(min(1.0, h)))


def haversine_miles_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Broadcasting haversine over degree arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dlat = p2 - p1
    dlon = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dlat / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def miles_to_lat_degrees(miles: float) -> float:
    return miles * 180.0 / (math.pi * EARTH_RADIUS_MILES)


def lon_half_width_degrees(center_lat: float, miles: float) -> float | None:
    """Largest longitude offset reachable within ``miles`` of a point at
    ``center_lat``; None if the disc contains a pole."""
    a = miles / EARTH_RADIUS_MILES
    c = math.cos(math.radians(center_lat))
    if a >= math.pi / 2 or math.sin(a) >= c:
        return None
    return math.degrees(math.asin(math.sin(a) / c))


@dataclass(frozen=True)
class BoundingBox:
    southwest: GeoPoint
    northeast: GeoPoint

    def __post_init__(self):
        if self.southwest.lat > self.northeast.lat:
            raise InvalidRegion("southwest latitude above northeast latitude")
        if self.southwest.lon > self.northeast.lon:
            raise InvalidRegion("region crosses the antimeridian")

    def bounds(self) -> tuple[GeoPoint, GeoPoint]:
        return self.southwest, self.northeast

    def contains(self, p: GeoPoint) -> bool:
        sw, ne = self.southwest, self.northeast
        return sw.lat <= p.lat <= ne.lat and sw.lon <= p.lon <= ne.lon


@dataclass(frozen=True)
class CenterRadius:
    center: GeoPoint
    radius_miles: float

    def __post_init__(self):
        if not self.radius_miles > 0:
            raise InvalidRegion("radius must be positive")
        dlon = lon_half_width_degrees(self.center.lat, self.radius_miles)
        if dlon is None:
            raise InvalidRegion("region contains a pole")
        dlat = miles_to_lat_degrees(self.radius_miles)
        if self.center.lat + dlat > 90 or self.center.lat - dlat < -90:
            raise InvalidRegion("region contains a pole")
        if self.center.lon - dlon <= -180 or self.center.lon + dlon > 180:
            raise InvalidRegion("region crosses the antimeridian")

    def bounds(self) -> tuple[GeoPoint, GeoPoint]:
        dlat = miles_to_lat_degrees(self.radius_miles)
        dlon = lon_half_width_degrees(self.center.lat, self.radius_miles)
        c = self.center
        return GeoPoint(c.lat - dlat, c.lon - dlon), GeoPoint(c.lat + dlat, c.lon + dlon)

    def contains(self, p: GeoPoint) -> bool:
        return haversine_miles(self.center, p) <= self.radius_miles


Region = Union[BoundingBox, CenterRadius]


def region_from_config(cfg: dict) -> Region:
    """Build a region from ``{"sw": [lat, lon], "ne": [lat, lon]}`` or
    ``{"center": [lat, lon], "radius_miles": r}``."""
    try:
        if "sw" in cfg or "ne" in cfg:
            return BoundingBox(GeoPoint(*cfg["sw"]), GeoPoint(*cfg["ne"]))
        if "center" in cfg:
            return CenterRadius(GeoPoint(*cfg["center"]), float(cfg["radius_miles"]))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidRegion(f"bad region {cfg!r}: {e}") from e
    raise InvalidRegion(f"bad region {cfg!r}: expected sw/ne or center/radius_miles")


def region_to_config(region: Region) -> dict:
    if isinstance(region, BoundingBox):
        return {"sw": [region.southwest.lat, region.southwest.lon],
                "ne": [region.northeast.lat, region.northeast.lon]}
    return {"center": [region.center.lat, region.center.lon], "radius_miles": region.radius_miles}


@dataclass
class Mesh:
    spacing_miles: float
    points: list[GeoPoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _centered_steps(lo: float, hi: float, step: float) -> list[float]:
    # Whole steps inside [lo, hi], centred so each edge gap is < step / 2.
    span = hi - lo
    if step <= 0 or span <= 0:
        return [(lo + hi) / 2]
    n = int(math.floor(span / step + 1e-6)) + 1
    offset = max(0.0, (span - (n - 1) * step) / 2)
    return [min(hi, lo + offset + k * step) for k in range(n)]


def generate_mesh(region: Region, spacing_miles: float = 1.0) -> Mesh:
    """Rectangular lat/lon grid with ``spacing_miles`` between neighbours.

    Rows are spaced along the meridian; within a row the longitude step is
    widened by 1/cos(lat). Rows and columns are centred in the region so the
    leftover margin at each edge stays below half a step, which keeps every
    location of a box within ``spacing * sqrt(2) / 2`` of a mesh point.
    Ordering is south to north, then west to east.
    """
    if not spacing_miles > 0:
        raise ValueError("spacing_miles must be positive")
    sw, ne = region.bounds()
    dlat = miles_to_lat_degrees(spacing_miles)
    points = []
    for lat in _centered_steps(sw.lat, ne.lat, dlat):
        c = math.cos(math.radians(lat))
        dlon = dlat / c if c > 1e-12 else 0.0
        for lon in _centered_steps(sw.lon, ne.lon, dlon):
            p = GeoPoint(lat, lon)
            if region.contains(p):
                points.append(p)
    return Mesh(spacing_miles, points)
