"""Geometry primitives shared across the pipeline.

All threshold distance tests use exact haversine on WGS84. Spatial indexes
(k-d trees, grids) work on earth-centered 3D coordinates, where the chord
length is a monotone function of great-circle distance, so candidate
generation can be made a strict superset of the haversine ball and then
verified exactly.
"""

import math

import numpy as np

EARTH_RADIUS_M = 6371000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters. Accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def ecef(lat, lon):
    """Earth-centered cartesian coordinates (meters), shape (..., 3)."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    cos_lat = np.cos(lat)
    return np.stack(
        [EARTH_RADIUS_M * cos_lat * np.cos(lon),
         EARTH_RADIUS_M * cos_lat * np.sin(lon),
         EARTH_RADIUS_M * np.sin(lat)],
        axis=-1,
    )


def chord_m(great_circle_m: float) -> float:
    """Chord length corresponding to a great-circle distance on the sphere."""
    return 2.0 * EARTH_RADIUS_M * math.sin(great_circle_m / (2.0 * EARTH_RADIUS_M))


def meters_per_degree(lat0: float):
    """Local equirectangular scale (m/deg lat, m/deg lon) at latitude lat0."""
    m_lat = EARTH_RADIUS_M * math.pi / 180.0
    return m_lat, m_lat * math.cos(math.radians(lat0))


class Ring:
    """A closed polygon ring given as lon/lat vertex arrays.

    The input chain need not repeat the first vertex; closure is implied.
    """

    def __init__(self, lons, lats):
        lons = np.asarray(lons, dtype=float)
        lats = np.asarray(lats, dtype=float)
        if len(lons) != len(lats):
            raise ValueError("lon/lat length mismatch")
        if len(lons) > 1 and lons[0] == lons[-1] and lats[0] == lats[-1]:
            lons, lats = lons[:-1], lats[:-1]
        if len(lons) < 3:
            raise ValueError("ring needs at least 3 distinct vertices")
        self.lons = lons
        self.lats = lats
        self.bbox = (lats.min(), lats.max(), lons.min(), lons.max())

    def __len__(self):
        return len(self.lons)

    def validate(self):
        """Reject degenerate or self-intersecting rings."""
        n = len(self)
        pts = set(zip(self.lons.tolist(), self.lats.tolist()))
        if len(pts) < 3:
            raise ValueError("ring has fewer than 3 distinct vertices")
        ax, ay = self.lons, self.lats
        bx, by = np.roll(ax, -1), np.roll(ay, -1)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue  # shared endpoint with a neighbor segment is fine
                if _segments_cross(ax[i], ay[i], bx[i], by[i], ax[j], ay[j], bx[j], by[j]):
                    raise ValueError("self-intersecting ring")

    def contains(self, lat: float, lon: float) -> bool:
        """Point-in-polygon by ray casting; points on an edge count as inside."""
        return bool(self.contains_many(np.asarray([lat]), np.asarray([lon]))[0])

    def contains_many(self, lats, lons):
        """Vectorized containment for many points against this ring."""
        inside, on_edge = self._raycast(lats, lons)
        return inside | on_edge

    def contains_strict_many(self, lats, lons):
        """Containment excluding the boundary."""
        inside, on_edge = self._raycast(lats, lons)
        return inside & ~on_edge

    def _raycast(self, lats, lons):
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        x, y = lons, lats
        inside = np.zeros(len(x), dtype=bool)
        on_edge = np.zeros(len(x), dtype=bool)
        xs, ys = self.lons, self.lats
        n = len(xs)
        j = n - 1
        for i in range(n):
            xi, yi, xj, yj = xs[i], ys[i], xs[j], ys[j]
            # exact on-edge test: zero cross product and inside the segment bbox
            cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi)
            on_seg = (cross == 0.0) \
                & (x >= min(xi, xj)) & (x <= max(xi, xj)) \
                & (y >= min(yi, yj)) & (y <= max(yi, yj))
            on_edge |= on_seg
            crosses = ((yi > y) != (yj > y))
            if np.any(crosses):
                x_int = xi + (y - yi) * (xj - xi) / (yj - yi)
                inside ^= crosses & (x < x_int)
            j = i
        return inside, on_edge

    def area_m2(self) -> float:
        """Shoelace area in a local equirectangular projection (good for small polygons)."""
        lat0 = float(self.lats.mean())
        m_lat, m_lon = meters_per_degree(lat0)
        x = self.lons * m_lon
        y = self.lats * m_lat
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        return float(abs(np.sum(x * y2 - x2 * y)) / 2.0)

    def centroid(self):
        """Area centroid, returned as (lat, lon)."""
        lat0 = float(self.lats.mean())
        m_lat, m_lon = meters_per_degree(lat0)
        x = self.lons * m_lon
        y = self.lats * m_lat
        x2, y2 = np.roll(x, -1), np.roll(y, -1)
        cross = x * y2 - x2 * y
        a = np.sum(cross) / 2.0
        if a == 0.0:
            return float(self.lats.mean()), float(self.lons.mean())
        cx = np.sum((x + x2) * cross) / (6.0 * a)
        cy = np.sum((y + y2) * cross) / (6.0 * a)
        return cy / m_lat, cx / m_lon


def _segments_cross(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    """True when segments AB and CD properly intersect or overlap collinearly."""
    d1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d2 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
    d3 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
    d4 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    if d1 == 0 and d2 == 0:  # collinear: overlap iff projections overlap
        if min(ax, bx) > max(cx, dx) or min(cx, dx) > max(ax, bx):
            return False
        if min(ay, by) > max(cy, dy) or min(cy, dy) > max(ay, by):
            return False
        return True
    return False


def point_to_chain_dist_m(lat, lon, chain_lats, chain_lons):
    """Min distance (meters) from points to a polyline, vectorized over points.

    Segment projection runs in a local equirectangular frame; for the short
    distances this is used with (tens of meters) the planar result matches
    haversine to well under measurement noise.
    """
    lats = np.asarray(lat, dtype=float)
    lons = np.asarray(lon, dtype=float)
    lat0 = float(np.mean(chain_lats))
    m_lat, m_lon = meters_per_degree(lat0)
    px = lons * m_lon
    py = lats * m_lat
    cx = np.asarray(chain_lons, dtype=float) * m_lon
    cy = np.asarray(chain_lats, dtype=float) * m_lat
    best = np.full(len(px), np.inf)
    for k in range(len(cx) - 1):
        ax, ay, bx, by = cx[k], cy[k], cx[k + 1], cy[k + 1]
        vx, vy = bx - ax, by - ay
        seg2 = vx * vx + vy * vy
        if seg2 == 0.0:
            d2 = (px - ax) ** 2 + (py - ay) ** 2
        else:
            t = np.clip(((px - ax) * vx + (py - ay) * vy) / seg2, 0.0, 1.0)
            d2 = (px - (ax + t * vx)) ** 2 + (py - (ay + t * vy)) ** 2
        best = np.minimum(best, d2)
    return np.sqrt(best)


def medoid_index(lats, lons) -> int:
    """Index of the point minimizing total haversine distance to the others."""
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    n = len(lats)
    if n == 0:
        raise ValueError("medoid of empty set")
    if n == 1:
        return 0
    total = np.zeros(n)
    # chunk rows to bound the pairwise matrix memory
    step = max(1, int(4e6) // n)
    for s in range(0, n, step):
        e = min(n, s + step)
        d = haversine_m(lats[s:e, None], lons[s:e, None], lats[None, :], lons[None, :])
        total[s:e] = d.sum(axis=1)
    return int(np.argmin(total))


class GridIndex:
    """Uniform-cell index over feature bounding boxes for candidate lookup."""

    def __init__(self, bboxes, cell_deg: float = None, pad_deg: float = 0.0):
        """bboxes: iterable of (lat_min, lat_max, lon_min, lon_max)."""
        self.bboxes = [(b[0] - pad_deg, b[1] + pad_deg, b[2] - pad_deg, b[3] + pad_deg) for b in bboxes]
        if not self.bboxes:
            self.cell = 1.0
            self.cells = {}
            return
        arr = np.asarray(self.bboxes, dtype=float)
        if cell_deg is None:
            spans = np.maximum(arr[:, 1] - arr[:, 0], arr[:, 3] - arr[:, 2])
            cell_deg = max(1e-6, float(np.median(spans)) or 1e-3)
        self.cell = cell_deg
        self.cells = {}
        for idx, (lat_min, lat_max, lon_min, lon_max) in enumerate(self.bboxes):
            for ci in range(int(np.floor(lat_min / cell_deg)), int(np.floor(lat_max / cell_deg)) + 1):
                for cj in range(int(np.floor(lon_min / cell_deg)), int(np.floor(lon_max / cell_deg)) + 1):
                    self.cells.setdefault((ci, cj), []).append(idx)

    def candidates(self, lat: float, lon: float):
        """Feature indices whose padded bbox may contain the point."""
        key = (int(np.floor(lat / self.cell)), int(np.floor(lon / self.cell)))
        out = []
        for idx in self.cells.get(key, ()):
            b = self.bboxes[idx]
            if b[0] <= lat <= b[1] and b[2] <= lon <= b[3]:
                out.append(idx)
        return out

    def candidates_many(self, lats, lons):
        """List of candidate index lists, one per point."""
        return [self.candidates(float(la), float(lo)) for la, lo in zip(lats, lons)]
