"""Obstacle geometry, simulated lidar and occupancy-grid mapping (2D)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, SensorPoseError
from .metric import _disk_dist_sq_eig, as_matrix, dist_sq_to_point_cloud


@dataclass(frozen=True)
class ObstacleSet:
    """Disks and wall segments inside an axis-aligned workspace.

    The workspace boundary counts as an obstacle for clearance and sensing,
    since the free space is the workspace minus the obstacles.
    """

    disks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))  # rows: cx, cy, r
    segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # rows: ax, ay, bx, by
    bounds: tuple = (0.0, 0.0, 10.0, 10.0)  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        disks = np.asarray(self.disks, dtype=float).reshape(-1, 3)
        segs = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        if np.any(disks[:, 2] <= 0):
            raise ConfigurationError("disk radii must be positive")
        xmin, ymin, xmax, ymax = (float(b) for b in self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise ConfigurationError(f"workspace bounds are empty: {self.bounds}")
        object.__setattr__(self, "disks", disks)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "bounds", (xmin, ymin, xmax, ymax))
        xmin, ymin, xmax, ymax = self.bounds
        border = np.array([
            [xmin, ymin, xmax, ymin],
            [xmax, ymin, xmax, ymax],
            [xmax, ymax, xmin, ymax],
            [xmin, ymax, xmin, ymin],
        ])
        object.__setattr__(self, "_walls", np.vstack([segs, border]))

    @property
    def walls(self) -> np.ndarray:
        """Wall segments including the four workspace edges."""
        return self._walls

    def inside_bounds(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin < p[0] < xmax and ymin < p[1] < ymax

    def clearance(self, p) -> float:
        """Euclidean distance from p to the nearest obstacle or workspace edge (0 if inside one)."""
        p = np.asarray(p, dtype=float)
        best = _seg_dist_sq(np.eye(2), p, self._walls).min()
        best = math.sqrt(best)
        if len(self.disks):
            dd = np.hypot(self.disks[:, 0] - p[0], self.disks[:, 1] - p[1]) - self.disks[:, 2]
            best = min(best, max(0.0, float(dd.min())))
        return best if self.inside_bounds(p) else 0.0

    def clearance_many(self, pts) -> np.ndarray:
        """Vectorized clearance for an (m, 2) array of points."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        w = self._walls
        a = w[:, :2]
        d = w[:, 2:] - a
        den = np.einsum("ij,ij->i", d, d)
        rel = pts[:, None, :] - a[None]  # (m, W, 2)
        t = np.clip(np.einsum("mwj,wj->mw", rel, d) / np.where(den > 0, den, 1.0), 0.0, 1.0)
        t = np.where(den > 0, t, 0.0)
        diff = rel - t[..., None] * d[None]
        best = np.sqrt(np.einsum("mwj,mwj->mw", diff, diff).min(axis=1))
        if len(self.disks):
            dd = np.hypot(pts[:, None, 0] - self.disks[None, :, 0], pts[:, None, 1] - self.disks[None, :, 1])
            best = np.minimum(best, np.maximum(0.0, (dd - self.disks[None, :, 2]).min(axis=1)))
        xmin, ymin, xmax, ymax = self.bounds
        inside = (pts[:, 0] > xmin) & (pts[:, 0] < xmax) & (pts[:, 1] > ymin) & (pts[:, 1] < ymax)
        return np.where(inside, best, 0.0)

    def dist_sq(self, q, g) -> float:
        """Squared Q-distance from g to the obstacle set (min over all primitives)."""
        q = as_matrix(q)
        g = np.asarray(g, dtype=float)
        if not self.inside_bounds(g):
            return 0.0
        best = float(_seg_dist_sq(q, g, self._walls).min())
        if len(self.disks):
            lam, vecs = np.linalg.eigh(q)
            gaps = np.hypot(self.disks[:, 0] - g[0], self.disks[:, 1] - g[1]) - self.disks[:, 2]
            if np.any(gaps <= 0):
                return 0.0
            lower = lam[0] * gaps**2
            for i in np.argsort(lower):
                if lower[i] >= best:
                    break
                d = _disk_dist_sq_eig(lam, vecs, g, self.disks[i, :2], self.disks[i, 2])
                best = min(best, d)
        return best


def _seg_dist_sq(q, g, segs):
    a = segs[:, :2]
    d = segs[:, 2:] - a
    qd = d @ q
    den = np.einsum("ij,ij->i", d, qd)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0, np.einsum("ij,ij->i", g - a, qd) / np.where(den > 0, den, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    p = a + t[:, None] * d - g
    return np.einsum("ij,jk,ik->i", p, q, p)


def is_free(obs: ObstacleSet, p) -> bool:
    p = np.asarray(p, dtype=float)
    if not obs.inside_bounds(p):
        return False
    if len(obs.disks):
        dd = np.hypot(obs.disks[:, 0] - p[0], obs.disks[:, 1] - p[1])
        if np.any(dd <= obs.disks[:, 2]):
            return False
    if len(obs.segments):
        if np.any(_seg_dist_sq(np.eye(2), p, obs.segments) <= 0.0):
            return False
    return True


# ---------------------------------------------------------------------------
# lidar


@dataclass(frozen=True)
class LidarScan:
    origin: np.ndarray
    angles: np.ndarray
    ranges: np.ndarray
    range_max: float

    def endpoints(self, hits_only=True) -> np.ndarray:
        r = self.ranges
        keep = r < self.range_max if hits_only else np.ones_like(r, dtype=bool)
        ang = self.angles[keep]
        return self.origin + r[keep, None] * np.column_stack([np.cos(ang), np.sin(ang)])

    def dist_sq(self, q, g) -> float:
        return dist_sq_to_point_cloud(q, g, self.endpoints())


def ray_cast_many(obs: ObstacleSet, origin, angles, range_max) -> np.ndarray:
    o = np.asarray(origin, dtype=float)
    angles = np.asarray(angles, dtype=float)
    u = np.column_stack([np.cos(angles), np.sin(angles)])  # (B, 2)
    best = np.full(len(angles), float(range_max))

    if len(obs.disks):
        oc = o - obs.disks[:, :2]  # (D, 2)
        b = u @ oc.T  # (B, D)
        c = np.einsum("ij,ij->i", oc, oc) - obs.disks[:, 2] ** 2
        disc = b**2 - c[None, :]
        with np.errstate(invalid="ignore"):
            sq = np.sqrt(disc)
        t = -b - sq
        t = np.where((disc >= 0) & (t >= 0), t, np.inf)
        best = np.minimum(best, t.min(axis=1))

    walls = obs.walls
    a = walls[:, :2]
    e = walls[:, 2:] - a  # (W, 2)
    # o + t u = a + s e  ->  t (u x e) = (a - o) x e,  s (u x e) = (a - o) x u
    ao = a - o
    den = u[:, 0:1] * e[None, :, 1] - u[:, 1:2] * e[None, :, 0]  # (B, W)
    num_t = ao[:, 0] * e[:, 1] - ao[:, 1] * e[:, 0]  # (W,)
    num_s = ao[None, :, 0] * u[:, 1:2] - ao[None, :, 1] * u[:, 0:1]  # (B, W)
    ok = np.abs(den) > 1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok, num_t[None, :] / den, np.inf)
        s = np.where(ok, num_s / den, -1.0)
    hit = ok & (t >= 0) & (s >= 0) & (s <= 1)
    t = np.where(hit, t, np.inf)
    best = np.minimum(best, t.min(axis=1))
    return np.minimum(best, float(range_max))


def ray_cast(obs: ObstacleSet, origin, angle, range_max) -> float:
    return float(ray_cast_many(obs, origin, [angle], range_max)[0])


def simulate_lidar(obs, origin, beam_count=360, range_max=10.0, noise_std=0.0, rng=None) -> LidarScan:
    origin = np.asarray(origin, dtype=float)
    if not is_free(obs, origin):
        raise SensorPoseError(f"lidar origin {origin.tolist()} is not in free space")
    angles = np.arange(beam_count) * (2.0 * math.pi / beam_count)
    ranges = ray_cast_many(obs, origin, angles, range_max)
    if noise_std > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        hit = ranges < range_max
        noisy = ranges + rng.normal(0.0, noise_std, size=ranges.shape)
        ranges = np.where(hit, np.clip(noisy, 1e-6, range_max), ranges)
    return LidarScan(origin=origin, angles=angles, ranges=ranges, range_max=float(range_max))


def directional_clearance(source, q, g, obs_or_scan) -> float:
    """d^2_Q(g, O) from exact geometry ("geometric") or from lidar endpoints ("lidar")."""
    if source == "geometric":
        return obs_or_scan.dist_sq(q, g)
    if source == "lidar":
        return dist_sq_to_point_cloud(q, g, obs_or_scan.endpoints())
    raise ConfigurationError(f"unknown clearance source {source!r}")


# ---------------------------------------------------------------------------
# occupancy grid


class Cell(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


PGM_LEVELS = {Cell.OCCUPIED: 0, Cell.UNKNOWN: 128, Cell.FREE: 255}


@dataclass(frozen=True)
class OccupancyGrid:
    """cells[iy, ix]; cell (ix, iy) covers [origin + i*res, origin + (i+1)*res)."""

    resolution: float
    origin: np.ndarray
    cells: np.ndarray
    inflation_radius: float = 0.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigurationError(f"grid resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @classmethod
    def empty(cls, bounds, resolution, inflation_radius=0.0, fill=Cell.UNKNOWN):
        xmin, ymin, xmax, ymax = bounds
        nx = int(math.ceil((xmax - xmin) / resolution - 1e-9))
        ny = int(math.ceil((ymax - ymin) / resolution - 1e-9))
        cells = np.full((ny, nx), int(fill), dtype=np.int8)
        return cls(resolution, np.array([xmin, ymin]), cells, inflation_radius)

    @property
    def shape(self):
        return self.cells.shape

    def to_cell(self, p):
        p = np.asarray(p, dtype=float)
        ij = np.floor((p - self.origin) / self.resolution).astype(int)
        return int(ij[0]), int(ij[1])

    def to_cells(self, pts):
        return np.floor((np.asarray(pts, dtype=float) - self.origin) / self.resolution).astype(int)

    def center(self, ix, iy):
        return self.origin + (np.array([ix, iy], dtype=float) + 0.5) * self.resolution

    def in_grid(self, ix, iy) -> bool:
        ny, nx = self.cells.shape
        return 0 <= ix < nx and 0 <= iy < ny

    def with_cells(self, cells):
        return replace(self, cells=cells)


def rasterize(obs: ObstacleSet, resolution, inflation_radius=0.0) -> OccupancyGrid:
    """Grid of a fully known world: cells whose center lies in an obstacle are occupied."""
    grid = OccupancyGrid.empty(obs.bounds, resolution, inflation_radius, fill=Cell.FREE)
    ny, nx = grid.shape
    xs = grid.origin[0] + (np.arange(nx) + 0.5) * resolution
    ys = grid.origin[1] + (np.arange(ny) + 0.5) * resolution
    px, py = np.meshgrid(xs, ys)
    occ = np.zeros((ny, nx), dtype=bool)
    for cx, cy, r in obs.disks:
        occ |= np.hypot(px - cx, py - cy) <= r
    half = 0.5 * resolution * math.sqrt(2)
    for ax, ay, bx, by in obs.segments:
        dx, dy = bx - ax, by - ay
        den = dx * dx + dy * dy
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / den, 0, 1) if den > 0 else 0.0
        occ |= np.hypot(px - (ax + t * dx), py - (ay + t * dy)) <= half
    cells = grid.cells.copy()
    cells[occ] = Cell.OCCUPIED
    return grid.with_cells(cells)


def bresenham_batch(x0, y0, x1, y1):
    """Cells of Bresenham lines from (x0, y0) to each (x1[i], y1[i]).

    Returns (xs, ys, beam_index, is_last) flat arrays. The minor coordinate at
    major step k is the nearest integer to k * minor / major, ties rounded
    toward the start.
    """
    x1 = np.asarray(x1, dtype=np.int64)
    y1 = np.asarray(y1, dtype=np.int64)
    dx = x1 - x0
    dy = y1 - y0
    steps = np.maximum(np.abs(dx), np.abs(dy))
    total = int(steps.sum() + len(steps))
    beam = np.repeat(np.arange(len(steps)), steps + 1)
    starts = np.cumsum(steps + 1) - (steps + 1)
    k = np.arange(total) - np.repeat(starts, steps + 1)
    st = np.repeat(steps, steps + 1)
    safe = np.where(st > 0, st, 1)

    def minor(delta):
        dd = np.repeat(delta, steps + 1)
        num = 2 * k * np.abs(dd)
        # round(k*|d|/st) with ties toward the start
        off = (num + safe - 1) // (2 * safe)
        return np.sign(dd) * off

    xs = x0 + minor(dx)
    ys = y0 + minor(dy)
    is_last = k == st
    return xs, ys, beam, is_last


def integrate_scan(grid: OccupancyGrid, scan: LidarScan) -> OccupancyGrid:
    """New grid with beams traced free and hit cells occupied; occupied is never cleared."""
    ox, oy = grid.to_cell(scan.origin)
    ends = scan.origin + scan.ranges[:, None] * np.column_stack([np.cos(scan.angles), np.sin(scan.angles)])
    ec = grid.to_cells(ends)
    hit = scan.ranges < scan.range_max
    xs, ys, beam, last = bresenham_batch(ox, oy, ec[:, 0], ec[:, 1])
    ny, nx = grid.shape
    inside = (xs >= 0) & (xs < nx) & (ys >= 0) & (ys < ny)
    cells = grid.cells.copy()
    occ_mark = last & hit[beam] & inside
    free_mark = ~(last & hit[beam]) & inside
    fx, fy = xs[free_mark], ys[free_mark]
    keep = cells[fy, fx] != Cell.OCCUPIED
    cells[fy[keep], fx[keep]] = Cell.FREE
    cells[ys[occ_mark], xs[occ_mark]] = Cell.OCCUPIED
    return grid.with_cells(cells)


def disk_footprint(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells + 1e-9))
    i, j = np.mgrid[-r : r + 1, -r : r + 1]
    return i * i + j * j <= radius_cells * radius_cells + 1e-9


def inflate(grid: OccupancyGrid, unknown_as_occupied=False) -> OccupancyGrid:
    """Copy of the grid with occupied cells grown by the inflation radius."""
    occ = grid.cells == Cell.OCCUPIED
    if unknown_as_occupied:
        occ |= grid.cells == Cell.UNKNOWN
    rc = grid.inflation_radius / grid.resolution
    if rc > 0 and occ.any():
        occ = ndimage.binary_dilation(occ, structure=disk_footprint(rc))
    cells = grid.cells.copy()
    cells[occ] = Cell.OCCUPIED
    return grid.with_cells(cells)


def to_pgm(grid: OccupancyGrid) -> str:
    """Plain (P2) graymap, top image row = largest y."""
    lut = np.zeros(3, dtype=int)
    for cell, level in PGM_LEVELS.items():
        lut[int(cell)] = level
    img = lut[grid.cells[::-1]]
    ny, nx = img.shape
    rows = "\n".join(" ".join(str(v) for v in row) for row in img)
    return f"P2\n{nx} {ny}\n255\n{rows}\n"
