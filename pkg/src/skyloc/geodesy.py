"""Conversion between geographic coordinates and a local metric frame.

All rendering, pose quantization and pose recovery run in a local
east-north-up frame anchored at a recorded geographic origin. Distances on
the sphere are mapped to the tangent plane with an equirectangular
approximation, which is accurate to well under a millimeter over the
kilometer-scale areas this package targets.
"""

import math
from dataclasses import dataclass

# IUGG mean earth radius in meters.
EARTH_RADIUS_M = 6_371_008.8


@dataclass(frozen=True)
class GeoPoint:
    """Geographic position: latitude/longitude in degrees, altitude in meters."""

    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon < 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180)")
        if not math.isfinite(self.alt):
            raise ValueError("altitude must be finite")


@dataclass(frozen=True)
class LocalFrame:
    """Local tangent frame anchored at ``origin``; x east, y north, z up."""

    origin: GeoPoint
    earth_radius: float = EARTH_RADIUS_M

    def __post_init__(self):
        if self.earth_radius <= 0:
            raise ValueError("earth_radius must be positive")


@dataclass(frozen=True)
class LocalPoint:
    """Metric position in a LocalFrame: x east, y north, z up (meters)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError("local coordinates must be finite")


def geo_to_local(p: GeoPoint, f: LocalFrame) -> LocalPoint:
    """Project a geographic point into the local metric frame.

    x = R*cos(lat0)*dlon, y = R*dlat (angles in radians), z = alt - alt0.
    """
    lat0 = math.radians(f.origin.lat)
    dlat = math.radians(p.lat - f.origin.lat)
    dlon = math.radians(p.lon - f.origin.lon)
    return LocalPoint(
        x=f.earth_radius * math.cos(lat0) * dlon,
        y=f.earth_radius * dlat,
        z=p.alt - f.origin.alt,
    )


def local_to_geo(q: LocalPoint, f: LocalFrame) -> GeoPoint:
    """Exact algebraic inverse of :func:`geo_to_local` for the same frame."""
    lat0 = math.radians(f.origin.lat)
    dlat = q.y / f.earth_radius
    dlon = q.x / (f.earth_radius * math.cos(lat0))
    return GeoPoint(
        lat=f.origin.lat + math.degrees(dlat),
        lon=f.origin.lon + math.degrees(dlon),
        alt=f.origin.alt + q.z,
    )
