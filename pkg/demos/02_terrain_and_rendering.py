"""Synthetic terrain and the color+depth renderer.

Generates a seeded terrain, renders a tilted view, and writes the image,
depth raster and terrain files so they can be inspected (any PPM viewer
works; depth is the SLDM binary format).
"""

import math
import os

from skyloc import LocalPoint, PoseSE3, camera_from_fov, generate_terrain, render, sample_height, save_terrain
from skyloc.database import write_depth
from skyloc.images import write_ppm

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

terrain = generate_terrain(seed=7, extent=(600.0, 600.0), cell_size=2.0)
print(f"terrain: {terrain.heightmap.shape[1]}x{terrain.heightmap.shape[0]} nodes, "
      f"heights {terrain.height_range[0]:.1f}..{terrain.height_range[1]:.1f} m, "
      f"texture {terrain.texture.shape[1]}x{terrain.texture.shape[0]} px")
print(f"height at the origin: {sample_height(terrain, 0.0, 0.0):.2f} m")

cam = camera_from_fov(640, 480, math.radians(84.0))
pose = PoseSE3(LocalPoint(0.0, -40.0, 70.0), heading=math.radians(20.0), pitch=math.radians(45.0))
view = render(terrain, pose, cam)

ground = view.depth[view.depth > 0]
print(f"\nrendered {cam.width}x{cam.height} view: sky fraction {view.sky_fraction():.1%}, "
      f"depth {ground.min():.1f}..{ground.max():.1f} m")
print(f"depth at principal point: {view.depth[cam.height // 2, cam.width // 2]:.2f} m")

write_ppm(os.path.join(OUT, "view.ppm"), view.color)
write_depth(os.path.join(OUT, "view_depth.bin"), view.depth, stride=1)
save_terrain(terrain, os.path.join(OUT, "terrain"))
print(f"\nwrote view.ppm, view_depth.bin and terrain.[sltr|ppm] under {OUT}")
