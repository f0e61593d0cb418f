"""Shared fixtures: a small terrain and a seeded localization database.

The database is deliberately small (3x3 positions x 8 headings) but uses
the same camera geometry family as the full-scale configurations, so the
whole pipeline is exercised for real.
"""

import math

import numpy as np
import pytest

from skyloc import database, features, world
from skyloc.geodesy import GeoPoint, LocalFrame
from skyloc.geometry import camera_from_fov
from skyloc.images import to_grayscale
from skyloc.posegrid import GridSpec, enumerate_poses

TEST_CAMERA = camera_from_fov(320, 240, math.radians(84))
TEST_ORIGIN = GeoPoint(37.8716, -122.2727, 10.0)


def train_codebook(terrain, grid, cam, seed=0, sample_views=12):
    poses = enumerate_poses(grid)
    step = max(1, len(poses) // sample_views)
    chunks = []
    for pose in poses[::step][:sample_views]:
        gray = to_grayscale(world.render(terrain, pose, cam).color)
        feats = features.describe_local(gray, features.detect_keypoints(gray))
        if feats:
            chunks.append(features.descriptor_matrix(feats))
    return features.build_codebook(np.vstack(chunks), k=64, seed=seed)


@pytest.fixture(scope="session")
def terrain():
    return world.generate_terrain(11, (700.0, 700.0), 2.0)


@pytest.fixture(scope="session")
def camera():
    return TEST_CAMERA


@pytest.fixture(scope="session")
def frame():
    return LocalFrame(origin=TEST_ORIGIN)


@pytest.fixture(scope="session")
def grid():
    return GridSpec(
        area=(-45.0, -45.0, 45.0, 45.0),
        spacing_xy=30.0,
        elevations=(70.0,),
        headings=8,
        pitches=(math.radians(45.0),),
    )


@pytest.fixture(scope="session")
def db_dir(tmp_path_factory, terrain, grid, camera, frame):
    out = tmp_path_factory.mktemp("db")
    codebook = train_codebook(terrain, grid, camera, seed=3)
    database.build_database(terrain, grid, camera, frame, codebook, str(out))
    (out / "terrain").mkdir(exist_ok=True)
    world.save_terrain(terrain, str(out / "terrain" / "terrain"))
    return out


@pytest.fixture(scope="session")
def db(db_dir):
    return database.load_database(str(db_dir))
