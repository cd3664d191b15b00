"""2d-style geospatial index, geoNear, mesh covering scans and density grids."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Protocol

import numpy as np

from .docmodel import canonical_bytes, user_id_of
from .geodesy import (
    GeoPoint,
    Region,
    generate_mesh,
    haversine_miles,
    lon_half_width_degrees,
    miles_to_lat_degrees,
)

logger = logging.getLogger(__name__)

GEONEAR_BYTE_BUDGET = 16 * 2**20


class Geo2dIndex:
    """Flat bucket grid over (lat, lon) in degrees.

    Sparse: only documents that carry a point are ever added.
    """

    def __init__(self, cell_size_deg: float = 0.02):
        if not cell_size_deg > 0:
            raise ValueError("cell_size_deg must be positive")
        self.cell_size_deg = cell_size_deg
        self.n_cols = int(math.ceil(360.0 / cell_size_deg))
        self.buckets: dict[tuple[int, int], dict[int, GeoPoint]] = {}
        self._cell_of: dict[int, tuple[int, int]] = {}

    def __len__(self):
        return len(self._cell_of)

    def __contains__(self, doc_id):
        return doc_id in self._cell_of

    def _row(self, lat: float) -> int:
        return int(math.floor((lat + 90.0) / self.cell_size_deg))

    def _col(self, lon: float) -> int:
        return int(math.floor((lon + 180.0) / self.cell_size_deg)) % self.n_cols

    def cell(self, p: GeoPoint) -> tuple[int, int]:
        return self._row(p.lat), self._col(p.lon)

    def add(self, doc_id: int, point: GeoPoint) -> None:
        if doc_id in self._cell_of:
            self.remove(doc_id)
        c = self.cell(point)
        self.buckets.setdefault(c, {})[doc_id] = point
        self._cell_of[doc_id] = c

    def remove(self, doc_id: int) -> None:
        c = self._cell_of.pop(doc_id, None)
        if c is None:
            return
        b = self.buckets[c]
        del b[doc_id]
        if not b:
            del self.buckets[c]

    def items(self) -> Iterator[tuple[int, GeoPoint]]:
        for b in self.buckets.values():
            yield from b.items()

    def _cells_for(self, center: GeoPoint, radius_miles: float):
        # Bounding ring of the disc, widened in longitude by 1/cos(lat).
        dlat = miles_to_lat_degrees(radius_miles) * (1 + 1e-9) + 1e-12
        r0 = self._row(max(-90.0, center.lat - dlat))
        r1 = self._row(min(90.0, center.lat + dlat))
        dlon = lon_half_width_degrees(center.lat, radius_miles)
        if dlon is None or dlon >= 180.0:
            cols = None
        else:
            dlon = dlon * (1 + 1e-9) + 1e-12
            c0 = int(math.floor((center.lon - dlon + 180.0) / self.cell_size_deg))
            c1 = int(math.floor((center.lon + dlon + 180.0) / self.cell_size_deg))
            cols = {c % self.n_cols for c in range(c0, c1 + 1)}
        return r0, r1, cols

    def candidates(self, center: GeoPoint, radius_miles: float) -> Iterator[tuple[int, GeoPoint]]:
        """Every indexed point in a bucket intersecting the query ring."""
        r0, r1, cols = self._cells_for(center, radius_miles)
        n_rows = r1 - r0 + 1
        n_cells = n_rows * (len(cols) if cols is not None else self.n_cols)
        if n_cells > len(self.buckets):
            for (r, c), b in self.buckets.items():
                if r0 <= r <= r1 and (cols is None or c in cols):
                    yield from b.items()
            return
        for r in range(r0, r1 + 1):
            for c in (cols if cols is not None else range(self.n_cols)):
                b = self.buckets.get((r, c))
                if b:
                    yield from b.items()


class SupportsCandidates(Protocol):
    def candidates(self, center: GeoPoint, radius_miles: float) -> Iterable[tuple[int, GeoPoint]]: ...


@dataclass(frozen=True)
class GeoNearParams:
    center: GeoPoint
    max_distance_miles: float = 1.0
    max_results: int = 100
    byte_budget: int = GEONEAR_BYTE_BUDGET

    def __post_init__(self):
        if not self.max_distance_miles > 0:
            raise ValueError("max_distance_miles must be positive")
        if not self.max_results > 0:
            raise ValueError("max_results must be positive")
        if not self.byte_budget > 0:
            raise ValueError("byte_budget must be positive")


@dataclass
class GeoNearResult:
    hits: list[tuple[int, float]] = field(default_factory=list)
    truncated: bool = False
    scanned: int = 0
    bytes: int = 0


def geo_near(index: SupportsCandidates, params: GeoNearParams,
             fetch: Optional[Callable[[int], object]] = None,
             size_of: Optional[Callable[[int], int]] = None) -> GeoNearResult:
    """Documents within ``max_distance_miles`` of ``center``, nearest first.

    Ties at equal distance go to the lower doc id. Emission stops, with
    ``truncated`` set, as soon as the next hit would push the summed
    canonical size of the returned documents past ``byte_budget`` or when
    ``max_results`` is reached with more hits pending. Document sizes come
    from ``size_of`` when given, else from serializing ``fetch(doc_id)``.
    """
    if size_of is None:
        if fetch is None:
            raise ValueError("geo_near needs fetch or size_of to enforce the byte budget")
        size_of = lambda doc_id: len(canonical_bytes(fetch(doc_id)))  # noqa: E731

    center, radius = params.center, params.max_distance_miles
    scanned = 0
    found = []
    for doc_id, p in index.candidates(center, radius):
        scanned += 1
        d = haversine_miles(center, p)
        if d <= radius:
            found.append((d, doc_id))
    found.sort()

    res = GeoNearResult(scanned=scanned)
    for d, doc_id in found:
        if len(res.hits) >= params.max_results:
            res.truncated = True
            break
        size = size_of(doc_id)
        if res.bytes + size > params.byte_budget:
            res.truncated = True
            break
        res.bytes += size
        res.hits.append((doc_id, d))
    return res


@dataclass
class UserGeoActivity:
    geo_count: int = 0
    distinct_points: set = field(default_factory=set)
    doc_ids: set = field(default_factory=set)


def covering_scan(view, region: Region, spacing_miles: float = 1.0, radius_miles: float = 1.0,
                  max_results: int = 2**62, byte_budget: int = GEONEAR_BYTE_BUDGET
                  ) -> dict[int, UserGeoActivity]:
    """Run geo_near at every mesh point and aggregate the union per user.

    ``view`` is anything exposing ``candidates``, ``size_of``, ``fetch`` and
    ``point_of`` over doc ids, e.g. :meth:`Cluster.geo_view`. Overlapping
    discs are deduplicated by doc id.
    """
    mesh = generate_mesh(region, spacing_miles)
    seen: set[int] = set()
    users: dict[int, UserGeoActivity] = {}
    truncated = 0
    for pt in mesh:
        res = geo_near(view, GeoNearParams(pt, radius_miles, max_results, byte_budget),
                       size_of=view.size_of)
        truncated += res.truncated
        for doc_id, _ in res.hits:
            if doc_id in seen:
                continue
            seen.add(doc_id)
            doc = view.fetch(doc_id)
            uid = user_id_of(doc)
            if uid is None:
                continue
            agg = users.setdefault(uid, UserGeoActivity())
            agg.geo_count += 1
            agg.distinct_points.add(view.point_of(doc_id))
            agg.doc_ids.add(doc_id)
    if truncated:
        logger.warning("covering scan: %d of %d geoNear queries truncated", truncated, len(mesh))
    return users


@dataclass
class DensityGrid:
    counts: np.ndarray  # (rows, cols), row 0 is the southern edge
    lat_edges: np.ndarray
    lon_edges: np.ndarray
    cell_miles: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> Iterator[tuple[int, int, float, float, int]]:
        for r in range(self.counts.shape[0]):
            lat_c = (self.lat_edges[r] + self.lat_edges[r + 1]) / 2
            for c in range(self.counts.shape[1]):
                lon_c = (self.lon_edges[c] + self.lon_edges[c + 1]) / 2
                yield r, c, float(lat_c), float(lon_c), int(self.counts[r, c])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "lat_center", "lon_center", "count"])
        for row in self.rows():
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text


def density_grid(points: Iterable[GeoPoint], region: Region, cell_miles: float) -> DensityGrid:
    """Bin points that fall inside ``region`` onto a ``cell_miles`` grid.

    Columns use the longitude step at the region's mid-latitude so that
    cells are square at its centre.
    """
    if not cell_miles > 0:
        raise ValueError("cell_miles must be positive")
    sw, ne = region.bounds()
    dlat = miles_to_lat_degrees(cell_miles)
    mid = math.cos(math.radians((sw.lat + ne.lat) / 2))
    dlon = dlat / max(mid, 1e-12)
    n_rows = max(1, int(math.ceil((ne.lat - sw.lat) / dlat - 1e-9)))
    n_cols = max(1, int(math.ceil((ne.lon - sw.lon) / dlon - 1e-9)))
    lat_edges = sw.lat + dlat * np.arange(n_rows + 1)
    lon_edges = sw.lon + dlon * np.arange(n_cols + 1)
    counts = np.zeros((n_rows, n_cols), dtype=np.int64)
    inside = [p for p in points if region.contains(p)]
    if inside:
        lat = np.array([p.lat for p in inside])
        lon = np.array([p.lon for p in inside])
        r = np.minimum(((lat - sw.lat) / dlat).astype(np.int64), n_rows - 1)
        c = np.minimum(((lon - sw.lon) / dlon).astype(np.int64), n_cols - 1)
        np.add.at(counts, (r, c), 1)
    return DensityGrid(counts, lat_edges, lon_edges, cell_miles)
