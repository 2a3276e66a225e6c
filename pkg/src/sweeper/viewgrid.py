"""The 42-pose sampling grid: 14 orbit directions x 3 inspection radii."""

from __future__ import annotations

from dataclasses import dataclass

from .assets import Aabb, MeshModel
from .errors import DegenerateExtent
from .renderer import CameraPose, SampledView, render_view

# Three latitude rings of four stations plus straight-down and straight-up.
RING_ELEVATIONS = (30.0, 0.0, -30.0)
AZIMUTHS = (0.0, 90.0, 180.0, 270.0)
TOP_DIRECTION = 0
BOTTOM_DIRECTION = 13
DIRECTION_COUNT = 14
RADIUS_COUNT = 3
VIEW_COUNT = DIRECTION_COUNT * RADIUS_COUNT


def sample_radii(d: float) -> tuple[float, float, float]:
    """Close, medium, and far inspection distances for a bbox diagonal d."""
    if d <= 0:
        raise DegenerateExtent("bounding box diagonal must be positive")
    return (0.5 * d + 0.1, 0.5 * d + 0.2, 0.5 * d + 0.5)


def directions() -> tuple[tuple[float, float], ...]:
    """The 14 (alpha, beta) pairs: top, three rings of four, bottom."""
    dirs: list[tuple[float, float]] = [(90.0, 0.0)]
    for elevation in RING_ELEVATIONS:
        for azimuth in AZIMUTHS:
            dirs.append((elevation, azimuth))
    dirs.append((-90.0, 0.0))
    return tuple(dirs)


@dataclass(frozen=True)
class LatticeSite:
    """Grid coordinates of one pose plus its adjacent pose indices."""

    direction: int
    radius: int
    neighbors: tuple[int, ...]


@dataclass(frozen=True)
class ViewGrid:
    poses: tuple[CameraPose, ...]
    radii: tuple[float, float, float]
    directions: tuple[tuple[float, float], ...]
    lattice: tuple[LatticeSite, ...]

    def neighbors(self, index: int) -> tuple[int, ...]:
        return self.lattice[index].neighbors

    def is_bottom(self, index: int) -> bool:
        return self.lattice[index].direction == BOTTOM_DIRECTION

    def to_json(self) -> dict:
        return {
            "radii": list(self.radii),
            "directions": [list(d) for d in self.directions],
            "poses": [
                {
                    "index": i,
                    "target": list(p.target),
                    "alpha": p.alpha,
                    "beta": p.beta,
                    "r": p.r,
                    "direction": s.direction,
                    "radius": s.radius,
                    "neighbors": list(s.neighbors),
                }
                for i, (p, s) in enumerate(zip(self.poses, self.lattice))
            ],
        }


def pose_index(direction: int, radius: int) -> int:
    return radius * DIRECTION_COUNT + direction


def build_view_grid(aabb: Aabb) -> ViewGrid:
    """42 poses around the bbox center, radius-major, with lattice adjacency.

    Neighbors differ by one step in exactly one of elevation ring, azimuth
    (wrapping), or radius; the top/bottom poses adjoin all four azimuths of
    the nearest ring at the same radius plus their own radius neighbors.
    """
    d = aabb.d
    if d <= 0:
        raise DegenerateExtent("bounding box diagonal must be positive")
    radii = sample_radii(d)
    target = tuple(float(c) for c in aabb.center)
    dirs = directions()

    poses = tuple(
        CameraPose(target=target, alpha=alpha, beta=beta, r=radii[ri])
        for ri in range(RADIUS_COUNT)
        for (alpha, beta) in dirs
    )

    sites = []
    for ri in range(RADIUS_COUNT):
        for di in range(DIRECTION_COUNT):
            nbrs = [pose_index(di, rj) for rj in (ri - 1, ri + 1) if 0 <= rj < RADIUS_COUNT]
            if di == TOP_DIRECTION:
                ring = 0
                nbrs += [pose_index(_ring_dir(ring, az), ri) for az in range(len(AZIMUTHS))]
            elif di == BOTTOM_DIRECTION:
                ring = len(RING_ELEVATIONS) - 1
                nbrs += [pose_index(_ring_dir(ring, az), ri) for az in range(len(AZIMUTHS))]
            else:
                ring, az = _ring_coords(di)
                n_az = len(AZIMUTHS)
                nbrs.append(pose_index(_ring_dir(ring, (az - 1) % n_az), ri))
                nbrs.append(pose_index(_ring_dir(ring, (az + 1) % n_az), ri))
                nbrs.append(
                    pose_index(TOP_DIRECTION if ring == 0 else _ring_dir(ring - 1, az), ri)
                )
                nbrs.append(
                    pose_index(
                        BOTTOM_DIRECTION
                        if ring == len(RING_ELEVATIONS) - 1
                        else _ring_dir(ring + 1, az),
                        ri,
                    )
                )
            sites.append(
                LatticeSite(direction=di, radius=ri, neighbors=tuple(sorted(nbrs)))
            )

    return ViewGrid(poses=poses, radii=radii, directions=dirs, lattice=tuple(sites))


def _ring_dir(ring: int, azimuth: int) -> int:
    return 1 + ring * len(AZIMUTHS) + azimuth


def _ring_coords(direction: int) -> tuple[int, int]:
    k = direction - 1
    return k // len(AZIMUTHS), k % len(AZIMUTHS)


def render_grid(mesh: MeshModel, grid: ViewGrid) -> list[SampledView]:
    """Render all 42 views, ordered by view index."""
    return [render_view(mesh, pose, index=i) for i, pose in enumerate(grid.poses)]
