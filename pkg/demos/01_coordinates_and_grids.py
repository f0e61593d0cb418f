"""Coordinate frames, camera models, and pose-grid sizing.

Walks through the geographic <-> local conversion that anchors the whole
pipeline, then uses the grid sizing rules to pick database parameters for
a given camera and flight height.
"""

import math

from skyloc import (
    GeoPoint,
    GridSpec,
    LocalFrame,
    camera_from_fov,
    elevation_band,
    enumerate_poses,
    geo_to_local,
    local_to_geo,
    nadir_footprint,
    suggest_heading_count,
    suggest_spacing,
)

# A local frame is anchored at a recorded geographic origin; everything
# else (rendering, pose recovery) happens in meters east/north/up.
frame = LocalFrame(origin=GeoPoint(lat=37.8716, lon=-122.2727, alt=10.0))
p = GeoPoint(lat=37.8741, lon=-122.2689, alt=82.0)
q = geo_to_local(p, frame)
print(f"geographic {p.lat:.4f}, {p.lon:.4f}, {p.alt} m")
print(f"  -> local x={q.x:.2f} m east, y={q.y:.2f} m north, z={q.z:.2f} m up")
back = local_to_geo(q, frame)
print(f"  -> back to geographic: {back.lat:.7f}, {back.lon:.7f} (round trip)")

# A wide-angle 4:3 camera, described by its horizontal field of view.
cam = camera_from_fov(640, 480, math.radians(84.0))
print(f"\ncamera 640x480, hfov 84 deg: fx = {cam.fx:.2f} px, vfov = {math.degrees(cam.vfov):.2f} deg")

# Sizing rules for the pose grid, from the camera and nominal height:
elevation = 70.0
fw, fh = nadir_footprint(cam, elevation)
print(f"nadir footprint at {elevation:.0f} m: {fw:.1f} x {fh:.1f} m")
print(f"suggested spacing (quarter of shorter side): {suggest_spacing(cam, elevation):.1f} m")
print(f"suggested headings (>=50% overlap): {suggest_heading_count(cam)}")
lo, hi = elevation_band(cam, elevation)
print(f"single-layer working band: {lo:.1f} - {hi:.1f} m")

# The grid spec carries explicit values; counts multiply out directly.
grid = GridSpec(
    area=(0.0, 0.0, 400.0, 400.0),
    spacing_xy=10.0,
    elevations=(70.0,),
    headings=12,
    pitches=(math.radians(45.0),),
)
poses = enumerate_poses(grid)
print(f"\n400x400 m at 10 m spacing, 12 headings, one pitch: {len(poses)} poses")
print(f"first pose: ({poses[0].position.x}, {poses[0].position.y}), heading {poses[0].heading}")
