"""A* on an inflated occupancy grid and the replanning rule."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import PlanningFailure
from .world import Cell, OccupancyGrid, bresenham_batch

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
# deterministic neighbour order: axis moves first, then diagonals
NEIGHBOURS = ((1, 0, 1.0), (0, 1, 1.0), (-1, 0, 1.0), (0, -1, 1.0),
              (1, 1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2), (1, -1, SQRT2))


@dataclass(frozen=True)
class PlanRequest:
    start: np.ndarray
    goal: np.ndarray
    grid: OccupancyGrid  # already inflated


@dataclass(frozen=True)
class PlanResult:
    waypoints: np.ndarray
    cells: list
    cost: float
    start_snapped: bool = False


def octile(ax, ay, bx, by):
    dx, dy = abs(ax - bx), abs(ay - by)
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def astar_cells(free: np.ndarray, start, goal):
    """Cell path and cost on a boolean traversability mask (free[iy, ix]).

    8-connected with octile costs; ties in f broken toward larger g.
    """
    ny, nx = free.shape
    sx, sy = start
    gx, gy = goal
    g_cost = {start: 0.0}
    parent = {start: None}
    closed = set()
    counter = 0
    heap = [(octile(sx, sy, gx, gy), 0.0, counter, start)]
    while heap:
        _, neg_g, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            return path[::-1], g_cost[goal]
        closed.add(cur)
        cx, cy = cur
        gc = g_cost[cur]
        for dx, dy, w in NEIGHBOURS:
            x, y = cx + dx, cy + dy
            if not (0 <= x < nx and 0 <= y < ny) or not free[y, x]:
                continue
            # no corner cutting through blocked cells on diagonal moves
            if dx and dy and not (free[cy, x] and free[y, cx]):
                continue
            nb = (x, y)
            ng = gc + w
            if ng < g_cost.get(nb, math.inf) - 1e-12:
                g_cost[nb] = ng
                parent[nb] = cur
                counter += 1
                heapq.heappush(heap, (ng + octile(x, y, gx, gy), -ng, counter, nb))
    return None, math.inf


def line_of_sight(free: np.ndarray, a, b) -> bool:
    xs, ys, _, _ = bresenham_batch(a[0], a[1], np.array([b[0]]), np.array([b[1]]))
    ny, nx = free.shape
    if np.any((xs < 0) | (xs >= nx) | (ys < 0) | (ys >= ny)):
        return False
    return bool(free[ys, xs].all())


def shortcut(free, cells):
    """Greedy line-of-sight pruning of a cell path."""
    if len(cells) <= 2:
        return list(cells)
    out = [cells[0]]
    i = 0
    while i < len(cells) - 1:
        j = len(cells) - 1
        while j > i + 1 and not line_of_sight(free, cells[i], cells[j]):
            j -= 1
        out.append(cells[j])
        i = j
    return out


def _nearest_free(free, cell):
    ys, xs = np.nonzero(free)
    if len(xs) == 0:
        return None
    d2 = (xs - cell[0]) ** 2 + (ys - cell[1]) ** 2
    k = int(np.argmin(d2))
    return int(xs[k]), int(ys[k])


def astar_plan(req: PlanRequest) -> PlanResult:
    grid = req.grid
    free = grid.cells != Cell.OCCUPIED
    start = grid.to_cell(req.start)
    goal = grid.to_cell(req.goal)
    if not grid.in_grid(*goal) or not free[goal[1], goal[0]]:
        raise PlanningFailure(f"goal {np.asarray(req.goal).tolist()} (cell {goal}) is not free in the inflated grid")
    snapped = False
    if not grid.in_grid(*start) or not free[start[1], start[0]]:
        snap = _nearest_free(free, start)
        if snap is None:
            raise PlanningFailure("no free cell to start from")
        log.info("start cell %s blocked after inflation; snapped to %s", start, snap)
        start, snapped = snap, True
    cells, cost = astar_cells(free, start, goal)
    if cells is None:
        raise PlanningFailure(f"no path from cell {start} to cell {goal}")
    pruned = shortcut(free, cells)
    pts = [grid.center(ix, iy) for ix, iy in pruned]
    # exact endpoints: the path starts at the requester's position and ends at the goal
    pts[0] = np.asarray(req.start, dtype=float)
    if len(pts) == 1:
        pts.append(np.asarray(req.goal, dtype=float))
    else:
        pts[-1] = np.asarray(req.goal, dtype=float)
    return PlanResult(waypoints=np.array(pts), cells=cells, cost=cost, start_snapped=snapped)


def path_blocked(grid: OccupancyGrid, waypoints, skip_radius=0.0, resolution_factor=0.5) -> bool:
    """True if a sampled point of the polyline falls in an occupied cell.

    Points within ``skip_radius`` of the first waypoint are ignored: the path
    starts at the governor, whose own neighbourhood may be inflated.
    """
    free = grid.cells != Cell.OCCUPIED
    ny, nx = free.shape
    step = grid.resolution * resolution_factor
    start = waypoints[0]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
        pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
        pts = pts[np.hypot(*(pts - start).T) > skip_radius]
        ij = grid.to_cells(pts)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < nx) & (ij[:, 1] >= 0) & (ij[:, 1] < ny)
        if np.any(~free[ij[ok, 1], ij[ok, 0]]):
            return True
    return False


def replan_policy(tick: int, grid_changed: bool, path_blocked: bool, period: int = 20) -> bool:
    """Replan when ``tick`` (control steps since the last plan) reaches ``period``,
    or at once when the current path is blocked."""
    del grid_changed  # the map changing alone waits for the periodic replan
    return path_blocked or tick >= period
