"""Directional matrices, quadratic norms and directional distances to obstacles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError

ZERO_DIRECTION_TOL = 1e-12


@dataclass(frozen=True)
class DirectionalWeights:
    c1: float = 1.0  # along the direction of motion
    c2: float = 4.0  # lateral

    def __post_init__(self):
        if not (np.isfinite(self.c1) and np.isfinite(self.c2)):
            raise ConfigurationError(f"directional weights must be finite, got c1={self.c1}, c2={self.c2}")
        if self.c1 <= 0 or self.c1 >= self.c2:
            raise ConfigurationError(f"directional weights need 0 < c1 < c2, got c1={self.c1}, c2={self.c2}")


@dataclass(frozen=True)
class DirectionalMatrix:
    q: np.ndarray
    weights: DirectionalWeights
    direction: np.ndarray

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class Ellipsoid:
    """Set {p : (p - center)^T shape (p - center) <= level}."""

    center: np.ndarray
    shape: np.ndarray
    level: float
    _eps: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        if not self.level >= 0:
            raise ConfigurationError(f"ellipsoid level must be nonnegative, got {self.level}")

    def contains(self, p) -> bool:
        d = np.asarray(p, dtype=float) - self.center
        return float(d @ self.shape @ d) <= self.level + self._eps


def make_directional_matrix(v, w: DirectionalWeights) -> DirectionalMatrix:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.size
    nrm2 = float(v @ v)
    if np.sqrt(nrm2) > ZERO_DIRECTION_TOL:
        q = w.c2 * np.eye(n) + (w.c1 - w.c2) * np.outer(v, v) / nrm2
        # exact symmetry regardless of rounding in the outer product
        q = 0.5 * (q + q.T)
    else:
        q = w.c1 * np.eye(n)
    return DirectionalMatrix(q=q, weights=w, direction=v.copy())


def as_matrix(q) -> np.ndarray:
    if isinstance(q, DirectionalMatrix):
        return q.q
    return np.asarray(q, dtype=float)


def quad_norm_sq(q, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ as_matrix(q) @ x)


def dist_sq_to_point_cloud(q, g, pts) -> float:
    """Smallest squared Q-distance from g to a set of points; +inf for an empty set."""
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        return float("inf")
    pts = pts.reshape(-1, np.asarray(g).size)
    d = pts - np.asarray(g, dtype=float)
    vals = np.einsum("ij,jk,ik->i", d, as_matrix(q), d)
    return float(max(vals.min(), 0.0))


def _disk_dist_sq_eig(lam, vecs, g, center, radius, max_iter=100):
    w = vecs.T @ (np.asarray(g, dtype=float) - np.asarray(center, dtype=float))
    wn = float(np.linalg.norm(w))
    if wn <= radius:
        return 0.0
    lw = lam * w

    def h_norm(mu):
        return float(np.sqrt(np.sum((lw / (lam + mu)) ** 2)))

    # psi(mu) = 1/r - 1/||h(mu)|| is nearly linear in mu; root is the multiplier
    lo, hi = 0.0, float(lam.max()) * wn / radius
    mu = 0.0
    for _ in range(max_iter):
        hn = h_norm(mu)
        psi = 1.0 / radius - 1.0 / hn
        if abs(hn - radius) <= 1e-14 * radius:
            break
        if psi > 0:
            lo = mu
        else:
            hi = mu
        # d||h||/dmu = -sum(lw^2/(lam+mu)^3)/||h||
        dh = -np.sum(lw**2 / (lam + mu) ** 3) / hn
        dpsi = dh / hn**2
        step_ok = dpsi != 0
        cand = mu - psi / dpsi if step_ok else np.nan
        if not (step_ok and lo < cand < hi):
            cand = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, hi):
            mu = cand
            break
        mu = cand
    else:
        raise NumericalError(
            f"disk distance multiplier did not converge: bracket=({lo}, {hi}), mu={mu}, "
            f"g={g}, center={center}, radius={radius}"
        )
    return float(mu**2 * np.sum(lam * w**2 / (lam + mu) ** 2))


def dist_sq_to_disk(q, g, center, radius) -> float:
    """Squared Q-distance from g to a closed disk (ball in n dimensions).

    Solves the Lagrange condition Q(a - g) + mu (a - c) = 0 for the multiplier
    in the eigenbasis of Q, then evaluates the minimum in closed form.
    """
    if radius <= 0:
        raise ConfigurationError(f"disk radius must be positive, got {radius}")
    lam, vecs = np.linalg.eigh(as_matrix(q))
    return _disk_dist_sq_eig(lam, vecs, g, center, radius)


def dist_sq_to_segment(q, g, a, b) -> float:
    q = as_matrix(q)
    g = np.asarray(g, dtype=float)
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    qd = q @ d
    den = float(d @ qd)
    if den <= 0.0:
        return quad_norm_sq(q, a - g)
    t = min(1.0, max(0.0, float((g - a) @ qd) / den))
    return quad_norm_sq(q, a + t * d - g)


def ellipsoid_segment_max_param(e: Ellipsoid, a, b):
    """Largest t in [0, 1] with a + t (b - a) inside e, or None if the segment misses it."""
    q = as_matrix(e.shape)
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    r = a - e.center
    qa = float(d @ q @ d)
    qb = float(d @ q @ r)
    qc = float(r @ q @ r) - e.level
    if qa <= 0.0:
        return 0.0 if qc <= e._eps else None
    disc = qb * qb - qa * qc
    if disc < 0.0:
        # tangency lost to rounding; accept if the closest point is inside
        t_min = -qb / qa
        if 0.0 <= t_min <= 1.0 and qa * t_min**2 + 2 * qb * t_min + qc <= e._eps:
            return t_min
        return None
    sq = np.sqrt(disc)
    t_lo = (-qb - sq) / qa
    t_hi = (-qb + sq) / qa
    if t_hi < 0.0 or t_lo > 1.0:
        # allow the slack of the membership test at the endpoints
        if t_hi < 0.0 and qc <= e._eps:
            return 0.0
        if t_lo > 1.0 and qa + 2 * qb + qc <= e._eps:
            return 1.0
        return None
    return float(min(t_hi, 1.0))
