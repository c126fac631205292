"""Workspaces, primitive obstacles and the exact collision oracle.

Obstacles are closed sets: a point on the boundary is occupied.  All
predicates accept an optional ``margin`` that inflates every obstacle (and
shrinks the workspace bounds) by that distance, which the planners use to
make interpolated edge checks conservative.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be vectors of equal length")
        if np.any(lo > hi):
            raise ValueError(f"box min corner {lo} exceeds max corner {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        return np.all((points >= self.lo - margin) & (points <= self.hi + margin), axis=-1)

    def intersects_box(self, lo, hi) -> bool:
        return bool(np.all(self.lo <= hi) and np.all(self.hi >= lo))

    def to_dict(self) -> dict:
        return {"type": "box", "min": self.lo.tolist(), "max": self.hi.tolist()}


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.ndim != 1:
            raise ValueError("sphere center must be a vector")
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        d2 = np.sum((points - self.center) ** 2, axis=-1)
        return d2 <= (self.radius + margin) ** 2

    def intersects_box(self, lo, hi) -> bool:
        nearest = np.clip(self.center, lo, hi)
        return bool(np.sum((nearest - self.center) ** 2) <= self.radius**2)

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


Obstacle = Box | Sphere


@dataclass(frozen=True)
class Query:
    start: np.ndarray
    goal: np.ndarray

    def to_dict(self) -> dict:
        return {"start": np.asarray(self.start).tolist(), "goal": np.asarray(self.goal).tolist()}


@dataclass(frozen=True)
class Environment:
    """Immutable workspace description.

    ``robot`` is the raw manipulator block from an environment file (or None
    for a point robot moving directly in the workspace); see
    :func:`pdmp.kinematics.robot_for_env`.
    """

    name: str
    lo: np.ndarray
    hi: np.ndarray
    obstacles: tuple = ()
    queries: tuple = ()
    robot: dict | None = None
    _boxes: tuple = field(default=None, repr=False, compare=False)
    _spheres: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("bounds must satisfy min < max componentwise")
        if lo.size not in (2, 3):
            raise ValueError("workspace dimension must be 2 or 3")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(
            self, "queries",
            tuple(Query(np.asarray(q.start, float), np.asarray(q.goal, float)) for q in self.queries),
        )
        for ob in self.obstacles:
            if ob.dim != lo.size:
                raise ValueError(f"obstacle dimension {ob.dim} != workspace dimension {lo.size}")
            if not ob.intersects_box(lo, hi):
                raise ValueError(f"obstacle {ob} does not intersect the workspace bounds")
        # packed arrays for the vectorised oracle
        boxes = [ob for ob in self.obstacles if isinstance(ob, Box)]
        spheres = [ob for ob in self.obstacles if isinstance(ob, Sphere)]
        d = lo.size
        object.__setattr__(self, "_boxes", (
            np.array([b.lo for b in boxes]).reshape(-1, d),
            np.array([b.hi for b in boxes]).reshape(-1, d),
        ))
        object.__setattr__(self, "_spheres", (
            np.array([s.center for s in spheres]).reshape(-1, d),
            np.array([s.radius for s in spheres]),
        ))
        if self.free_fraction(grid=32 if d == 3 else 64) == 0.0:
            raise ValueError("environment has no free space")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def occupied(self, points, margin: float = 0.0) -> np.ndarray:
        """Vectorised obstacle membership for an (..., d) array of points."""
        pts = np.asarray(points, dtype=float)
        hit = np.zeros(pts.shape[:-1], dtype=bool)
        blo, bhi = self._boxes
        if len(blo):
            p = pts[..., None, :]
            hit |= np.any(np.all((p >= blo - margin) & (p <= bhi + margin), axis=-1), axis=-1)
        c, r = self._spheres
        if len(c):
            d2 = np.sum((pts[..., None, :] - c) ** 2, axis=-1)
            hit |= np.any(d2 <= (r + margin) ** 2, axis=-1)
        return hit

    def in_bounds(self, points, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= self.lo + margin) & (pts <= self.hi - margin), axis=-1)

    def free_fraction(self, grid: int = 256) -> float:
        """Fraction of cell centres on a regular grid that are obstacle-free."""
        axes = [self.lo[k] + (np.arange(grid) + 0.5) * self.extent[k] / grid for k in range(self.dim)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return float(1.0 - self.occupied(pts).mean())

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "bounds": {"min": self.lo.tolist(), "max": self.hi.tolist()},
            "obstacles": [ob.to_dict() for ob in self.obstacles],
            "queries": [q.to_dict() for q in self.queries],
        }
        if self.robot is not None:
            out["manipulator"] = self.robot
        return out


def point_in_collision(env: Environment, p, margin: float = 0.0) -> bool:
    p = np.asarray(p, dtype=float)
    if p.shape != (env.dim,):
        raise ValueError(f"expected a {env.dim}-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    return bool(env.occupied(p[None], margin)[0])


def points_in_collision(env: Environment, points, margin: float = 0.0) -> np.ndarray:
    return env.occupied(points, margin)


@dataclass(frozen=True)
class OccupancyDataset:
    points: np.ndarray
    labels: np.ndarray
    seed: int | None = None

    def __len__(self):
        return len(self.labels)

    def split(self, frac: float = 0.8, seed: int = 0):
        """Random train/held-out split."""
        idx = np.random.default_rng(seed).permutation(len(self))
        k = int(round(frac * len(self)))
        a, b = idx[:k], idx[k:]
        return (OccupancyDataset(self.points[a], self.labels[a], self.seed),
                OccupancyDataset(self.points[b], self.labels[b], self.seed))

    def to_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + ["label"])
            for p, y in zip(self.points, self.labels):
                w.writerow([repr(float(v)) for v in p] + [int(y)])

    @classmethod
    def from_csv(cls, path) -> "OccupancyDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        return cls(body[:, :-1], body[:, -1].astype(np.int8))


def generate_dataset(env: Environment, n: int, seed: int) -> OccupancyDataset:
    """Uniform samples over the bounds, labelled by the exact oracle."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(env.lo, env.hi, size=(n, env.dim))
    return OccupancyDataset(pts, env.occupied(pts).astype(np.int8), seed)


# --- environment files ---------------------------------------------------

def _obstacle_from_dict(d: dict):
    kind = d.get("type")
    if kind == "box":
        return Box(d["min"], d["max"])
    if kind == "sphere":
        return Sphere(d["center"], d["radius"])
    raise ValueError(f"unknown obstacle type {kind!r}")


def env_from_dict(d: dict) -> Environment:
    return Environment(
        name=d.get("name", "unnamed"),
        lo=d["bounds"]["min"],
        hi=d["bounds"]["max"],
        obstacles=[_obstacle_from_dict(o) for o in d.get("obstacles", [])],
        queries=[Query(q["start"], q["goal"]) for q in d.get("queries", [])],
        robot=d.get("manipulator"),
    )


def load_env(path) -> Environment:
    return env_from_dict(json.loads(Path(path).read_text()))


def save_env(env: Environment, path) -> None:
    Path(path).write_text(json.dumps(env.to_dict(), indent=2))


def resolve_env(name_or_path) -> Environment:
    """Benchmark name (``divider2d`` ...) or path to an environment file."""
    if str(name_or_path) in BENCHMARK_ENVS:
        return make_benchmark_env(str(name_or_path))
    p = Path(name_or_path)
    if not p.exists():
        raise ValueError(f"unknown environment {name_or_path!r}")
    return load_env(p)


# --- benchmark scenes ----------------------------------------------------
# Unit-square desk scenes for a point robot.  They keep the topology of the
# manipulator scenes (narrow passage, compartments, clutter), not their size.

def _divider2d() -> Environment:
    # every edge sits on a 1/16 lattice, so coarse grid cells are either
    # fully blocked or have free area well away from any edge
    u = 1.0 / 16.0
    cells = [
        (7, 0, 8, 7), (7, 8, 8, 16),                     # wall, gap at y in [7u, 8u]
        (0, 2, 5, 3), (2, 5, 7, 6),                      # slalom up to the gap
        (8, 9, 14, 10), (10, 12, 16, 13),                # slalom from the gap to the goal
        (1, 9, 6, 10), (1, 11, 6, 12), (1, 13, 6, 14), (1, 15, 6, 16),   # shelving, upper left
        (9, 1, 15, 2), (9, 3, 15, 4), (9, 5, 15, 6),                     # shelving, lower right
    ]
    obstacles = [Box([x0 * u, y0 * u], [x1 * u, y1 * u]) for x0, y0, x1, y1 in cells]
    queries = [Query([0.06, 0.06], [0.94, 0.94]), Query([0.30, 0.30], [0.70, 0.70])]
    return Environment("divider2d", [0.0, 0.0], [1.0, 1.0], obstacles, queries)


def _shelves2d() -> Environment:
    t = 0.05  # wall thickness
    obstacles = [
        # cupboard carcass with an opening on the left of each shelf level
        Box([0.30, 0.10], [0.90, 0.10 + t]),
        Box([0.30, 0.90 - t], [0.90, 0.90]),
        Box([0.90 - t, 0.10], [0.90, 0.90]),
        Box([0.30, 0.10], [0.30 + t, 0.26]),
        Box([0.30, 0.34], [0.30 + t, 0.62]),
        Box([0.30, 0.70], [0.30 + t, 0.90]),
        # shelves with a small gap at the back
        Box([0.30, 0.37], [0.74, 0.37 + t]),
        Box([0.42, 0.60], [0.85, 0.60 + t]),
        Sphere([0.10, 0.50], 0.06),
    ]
    queries = [Query([0.10, 0.95], [0.60, 0.25]), Query([0.60, 0.48], [0.60, 0.75])]
    return Environment("shelves2d", [0.0, 0.0], [1.0, 1.0], obstacles, queries)


def _clutter2d() -> Environment:
    centers = [(0.20, 0.20), (0.50, 0.15), (0.80, 0.22), (0.18, 0.52), (0.48, 0.46),
               (0.80, 0.55), (0.25, 0.82), (0.55, 0.78), (0.84, 0.86), (0.62, 0.30)]
    radii = [0.09, 0.07, 0.10, 0.08, 0.11, 0.09, 0.10, 0.08, 0.07, 0.05]
    obstacles = [Sphere(c, r) for c, r in zip(centers, radii)]
    queries = [Query([0.05, 0.05], [0.95, 0.95]), Query([0.05, 0.95], [0.95, 0.05])]
    return Environment("clutter2d", [0.0, 0.0], [1.0, 1.0], obstacles, queries)


def _empty2d() -> Environment:
    return Environment("empty2d", [0.0, 0.0], [1.0, 1.0], [], [Query([0.1, 0.1], [0.9, 0.9])])


BENCHMARK_ENVS = {"divider2d": _divider2d, "shelves2d": _shelves2d, "clutter2d": _clutter2d,
                  "empty2d": _empty2d}


def make_benchmark_env(name: str) -> Environment:
    try:
        return BENCHMARK_ENVS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark environment {name!r}; "
                         f"choose from {sorted(BENCHMARK_ENVS)}") from None
