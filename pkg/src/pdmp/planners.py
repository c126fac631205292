"""Main-thread sampling-based planners: RRT* and bidirectional RRT*-Connect.

Both consume a :class:`~pdmp.sampler.SampleSource`; they never integrate the
flow themselves and never wait on the producers.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .flow import FlowSpec
from .sampler import (CallableSource, PriorSampler, SampleBucket, SampleSource, SamplerStats,
                      start_producers, stop_and_join)

EDGE_RESOLUTION = 0.02
LINEAR_SCAN_BELOW = 64


# --- collision checking --------------------------------------------------

def configs_in_collision(m, env, Q, margin: float = 0.0) -> np.ndarray:
    pts = m.check_positions(np.asarray(Q, dtype=float))
    return env.occupied(pts, margin).any(axis=1) | ~env.in_bounds(pts, margin).all(axis=1)


def config_in_collision(m, env, q, margin: float = 0.0) -> bool:
    q = np.asarray(q, dtype=float)
    if q.shape != (m.n,):
        raise ValueError(f"expected a {m.n}-vector configuration, got shape {q.shape}")
    return bool(configs_in_collision(m, env, q[None], margin)[0])


def interpolate(q1, q2, resolution: float = EDGE_RESOLUTION, include_start: bool = True) -> np.ndarray:
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    steps = max(1, math.ceil(float(np.max(np.abs(q2 - q1))) / resolution))
    ts = np.arange(0 if include_start else 1, steps + 1) / steps
    return q1 + ts[:, None] * (q2 - q1)


def edge_in_collision(m, env, q1, q2, resolution: float = EDGE_RESOLUTION, margin: float = 0.0,
                      include_start: bool = True) -> bool:
    """True if any configuration on the straight C-space segment, sampled with
    at most ``resolution`` change per joint, is in collision."""
    return bool(configs_in_collision(m, env, interpolate(q1, q2, resolution, include_start), margin).any())


class CollisionChecker:
    """Conservative edge checks used inside the planners.

    Obstacles are inflated by the robot's sweep margin for the edge
    resolution, so an edge accepted here stays collision-free when
    re-checked at any finer resolution without inflation.
    """

    def __init__(self, m, env, resolution: float = EDGE_RESOLUTION):
        self.m, self.env, self.resolution = m, env, resolution
        self.margin = m.sweep_margin(resolution)
        self.edge_checks = 0

    def edge_free(self, q1, q2) -> bool:
        self.edge_checks += 1
        return not edge_in_collision(self.m, self.env, q1, q2, self.resolution, self.margin,
                                     include_start=False)


# --- trees ---------------------------------------------------------------

class NearestIndex:
    """k-d tree over a prefix of the points plus a linear scan of the rest.

    The tree is rebuilt whenever the point count doubles; below
    ``LINEAR_SCAN_BELOW`` points everything is a linear scan.
    """

    def __init__(self, data_ref):
        self._data = data_ref  # callable returning (array, size)
        self.built = 0
        self.kd = None

    def _maybe_rebuild(self, pts, size):
        if size >= LINEAR_SCAN_BELOW and size >= 2 * max(self.built, LINEAR_SCAN_BELOW // 2):
            self.kd = cKDTree(pts[:size].copy())
            self.built = size

    def nearest(self, x):
        pts, size = self._data()
        self._maybe_rebuild(pts, size)
        best_d, best_i = math.inf, -1
        if self.kd is not None:
            d, i = self.kd.query(x)
            best_d, best_i = float(d), int(i)
        tail = pts[self.built:size]
        if len(tail):
            dt = np.sqrt(np.sum((tail - x) ** 2, axis=1))
            j = int(np.argmin(dt))
            if dt[j] < best_d:
                best_d, best_i = float(dt[j]), self.built + j
        return best_i, best_d

    def within(self, x, r):
        pts, size = self._data()
        out = []
        if self.kd is not None and r > 0:
            out = self.kd.query_ball_point(x, r)
        tail = pts[self.built:size]
        if len(tail):
            dt = np.sqrt(np.sum((tail - x) ** 2, axis=1))
            out = list(out) + (np.nonzero(dt <= r)[0] + self.built).tolist()
        return sorted(out)


class Tree:
    def __init__(self, root, capacity: int = 1024):
        root = np.asarray(root, dtype=float)
        self.q = np.empty((capacity, root.size))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.children = [[]]
        self.q[0] = root
        self.size = 1
        self.index = NearestIndex(lambda: (self.q, self.size))

    def __len__(self):
        return self.size

    def _grow(self):
        cap = 2 * len(self.q)
        self.q = np.concatenate([self.q, np.empty_like(self.q)])[:cap]
        self.parent = np.concatenate([self.parent, np.full(len(self.parent), -1, dtype=np.int64)])
        self.cost = np.concatenate([self.cost, np.zeros(len(self.cost))])

    def add(self, q, parent: int, edge_cost: float) -> int:
        if self.size == len(self.q):
            self._grow()
        i = self.size
        self.q[i] = q
        self.parent[i] = parent
        self.cost[i] = self.cost[parent] + edge_cost
        self.children.append([])
        self.children[parent].append(i)
        self.size += 1
        return i

    def reparent(self, j: int, new_parent: int, edge_cost: float):
        old = self.parent[j]
        self.children[old].remove(j)
        self.children[new_parent].append(j)
        self.parent[j] = new_parent
        delta = self.cost[new_parent] + edge_cost - self.cost[j]
        stack = [j]
        while stack:
            k = stack.pop()
            self.cost[k] += delta
            stack.extend(self.children[k])

    def path(self, i: int):
        out = []
        while i != -1:
            out.append(i)
            i = int(self.parent[i])
        return out[::-1]

    def validate(self, tol: float = 1e-9):
        """Raise if parent pointers are cyclic or costs disagree with edge lengths."""
        seen_root = False
        for i in range(self.size):
            p = int(self.parent[i])
            if p == -1:
                if seen_root or i != 0:
                    raise AssertionError("tree must have a single root at index 0")
                seen_root = True
                continue
            expect = self.cost[p] + float(np.linalg.norm(self.q[i] - self.q[p]))
            if abs(self.cost[i] - expect) > tol * max(1.0, expect):
                raise AssertionError(f"cost of node {i} inconsistent with its edge")
        # acyclicity: every node reaches the root in < size steps
        depth = np.full(self.size, -1)
        depth[0] = 0
        for i in range(self.size):
            chain = []
            k = i
            while depth[k] < 0:
                chain.append(k)
                k = int(self.parent[k])
                if len(chain) > self.size:
                    raise AssertionError("cycle in parent pointers")
            for c in reversed(chain):
                depth[c] = depth[self.parent[c]] + 1


# --- requests and results ------------------------------------------------

@dataclass
class PlanRequest:
    start: np.ndarray
    goal: np.ndarray
    time_budget: float = 2.0
    planner: str = "rrt_star"
    goal_tolerance: float = 1e-3
    seed: int = 0
    step: float | None = None           # steering step; default 0.02 * C-space diameter
    gamma: float | None = None          # rewiring constant; default gamma_star(limits)
    resolution: float = EDGE_RESOLUTION
    stop_on_first: bool = False
    max_iterations: int | None = None
    debug: bool = False

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if not self.time_budget > 0:
            raise ValueError("time_budget must be positive")
        self.planner = self.planner.replace("-", "_")
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}")


@dataclass
class PlanResult:
    success: bool
    path: np.ndarray
    cost: float
    time_to_solution: float
    iterations: int
    elapsed: float = 0.0
    sample_stats: SamplerStats = field(default_factory=SamplerStats)
    feasible_sample_pct: dict = field(default_factory=dict)
    cost_history: list = field(default_factory=list)   # (time, iteration, best cost)
    tree_size: int = 0
    draw_log: tuple | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        s = self.sample_stats
        return {
            "success": self.success,
            "time_to_solution": self.time_to_solution if self.success else None,
            "cost": self.cost if self.success else None,
            "iterations": self.iterations,
            "elapsed": self.elapsed,
            "tree_size": self.tree_size,
            "path": self.path.tolist(),
            "stats": {"pushed": s.pushed, "popped_morphed": s.popped_morphed,
                      "popped_prior": s.popped_prior, "dropped": s.dropped},
            "feasible_sample_pct": self.feasible_sample_pct,
        }


class PlanningError(ValueError):
    pass


def default_step(m) -> float:
    lim = np.asarray(m.limits, dtype=float)
    return 0.2 * float(np.linalg.norm(lim[:, 1] - lim[:, 0])) / 10.0


def gamma_star(limits) -> float:
    """Smallest asymptotically optimal RRT* rewiring constant, taking the whole
    C-space box as an upper bound on the free volume."""
    lim = np.asarray(limits, dtype=float)
    d = len(lim)
    vol = float(np.prod(lim[:, 1] - lim[:, 0]))
    unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return 2.0 * (1.0 + 1.0 / d) ** (1.0 / d) * (vol / unit_ball) ** (1.0 / d)


def _steer(a, b, eta):
    d = b - a
    n = float(np.sqrt(np.dot(d, d)))
    if n <= eta:
        return b.copy(), n
    return a + d * (eta / n), eta


class _Planner:
    def __init__(self, req: PlanRequest, source, m, env):
        if not isinstance(source, SampleSource):
            source = CallableSource(source, m.limits)
        self.req, self.source, self.m, self.env = req, source, m, env
        for name, q in (("start", req.start), ("goal", req.goal)):
            if q.shape != (m.n,):
                raise PlanningError(f"{name} must be a {m.n}-vector")
            if config_in_collision(m, env, q):
                raise PlanningError(f"{name} configuration is in collision")
        self.check = CollisionChecker(m, env, req.resolution)
        self.eta = req.step or default_step(m)
        self.gamma = req.gamma or gamma_star(m.limits)
        self.dim = m.n
        self.lim = np.asarray(m.limits, dtype=float)
        self.best_cost = math.inf
        self.tts = math.inf
        self.history = []

    def radius(self, n):
        if n < 2:
            return 0.0
        return min(self.gamma * (math.log(n) / n) ** (1.0 / self.dim), self.eta)

    def insert(self, tree: Tree, q_new, i_near, d_near):
        """Add ``q_new`` under the cheapest collision-free neighbour and rewire."""
        near = tree.index.within(q_new, self.radius(tree.size + 1))
        best_p, best_c = i_near, tree.cost[i_near] + d_near
        cands = []
        for j in near:
            if j == i_near:
                continue
            d = float(np.linalg.norm(tree.q[j] - q_new))
            c = tree.cost[j] + d
            if c < best_c:
                cands.append((c, j, d))
        cands.sort()
        for c, j, d in cands:
            if self.check.edge_free(tree.q[j], q_new):
                best_p, best_c = j, c
                break
        d_parent = d_near if best_p == i_near else float(np.linalg.norm(tree.q[best_p] - q_new))
        k = tree.add(q_new, best_p, d_parent)
        for j in near:
            if j == best_p:
                continue
            d = float(np.linalg.norm(tree.q[j] - q_new))
            if tree.cost[k] + d < tree.cost[j] - 1e-12 and self.check.edge_free(q_new, tree.q[j]):
                tree.reparent(j, k, d)
        return k

    def extend(self, tree: Tree, target):
        i, _ = tree.index.nearest(target)
        q_new, d = _steer(tree.q[i], target, self.eta)
        if d < 1e-12 or not self.check.edge_free(tree.q[i], q_new):
            return None
        return self.insert(tree, q_new, i, d)

    def done(self, it, t):
        r = self.req
        if r.max_iterations is not None and it >= r.max_iterations:
            return True
        if r.stop_on_first and self.best_cost < math.inf:
            return True
        return t >= r.time_budget

    def record(self, cost, t, it):
        if cost < self.best_cost - 1e-12:
            if self.best_cost == math.inf:
                self.tts = t
            self.best_cost = cost
            self.history.append((t, it, cost))

    def finish(self, path, it, elapsed, trees):
        for tr in trees:
            tr.validate()
        src = self.source
        times, flags, samples = src.log()
        feas = {}
        if len(samples):
            free = ~configs_in_collision(self.m, self.env, samples)
            feas["overall"] = 100.0 * float(free.mean())
            feas["prior"] = 100.0 * float(free[~flags].mean()) if (~flags).any() else None
            feas["morphed"] = 100.0 * float(free[flags].mean()) if flags.any() else None
        ok = path is not None
        return PlanResult(
            success=ok,
            path=np.asarray(path if ok else np.empty((0, self.dim))),
            cost=self.best_cost,
            time_to_solution=self.tts,
            iterations=it,
            elapsed=elapsed,
            sample_stats=src.stats(),
            feasible_sample_pct=feas,
            cost_history=self.history,
            tree_size=sum(len(t) for t in trees),
            draw_log=(times, flags, samples),
        )


class _RRTStar(_Planner):
    def run(self) -> PlanResult:
        req = self.req
        t0 = time.perf_counter()
        self.source.reset_clock()
        tree = Tree(req.start)
        goal = req.goal
        tol = req.goal_tolerance
        if np.linalg.norm(goal - req.start) <= tol:
            self.record(0.0, time.perf_counter() - t0, 0)
            return self.finish(np.array([req.start]), 0, time.perf_counter() - t0, [tree])
        links = []  # (node, distance to goal) pairs with a free connection
        it = 0
        while True:
            t = time.perf_counter() - t0
            if self.done(it, t):
                break
            it += 1
            q_rand, _ = self.source.draw()
            k = self.extend(tree, np.asarray(q_rand, dtype=float))
            if k is not None:
                dg = float(np.linalg.norm(tree.q[k] - goal))
                if dg <= tol:
                    links.append((k, 0.0))
                elif dg <= 2 * self.eta and self.check.edge_free(tree.q[k], goal):
                    links.append((k, dg))
            if links:
                best = min(tree.cost[i] + d for i, d in links)
                self.record(best, time.perf_counter() - t0, it)
            if self.req.debug:
                tree.validate()
        elapsed = time.perf_counter() - t0
        path = None
        if links:
            i, d = min(links, key=lambda l: tree.cost[l[0]] + l[1])
            path = tree.q[tree.path(i)]
            if d > 0:
                path = np.vstack([path, goal])
            self.best_cost = float(tree.cost[i] + d)
        return self.finish(path, it, elapsed, [tree])


class _RRTConnect(_Planner):
    def connect(self, tree: Tree, target):
        """Repeatedly steer ``tree`` toward ``target``; returns its node there or None."""
        while True:
            i, d = tree.index.nearest(target)
            if d < 1e-12:
                return i
            q_new, step = _steer(tree.q[i], target, self.eta)
            if not self.check.edge_free(tree.q[i], q_new):
                return None
            k = self.insert(tree, q_new, i, step)
            if step == d:
                return k

    def run(self) -> PlanResult:
        req = self.req
        t0 = time.perf_counter()
        self.source.reset_clock()
        ts, tg = Tree(req.start), Tree(req.goal)
        if np.linalg.norm(req.goal - req.start) <= req.goal_tolerance:
            self.record(0.0, time.perf_counter() - t0, 0)
            return self.finish(np.array([req.start]), 0, time.perf_counter() - t0, [ts, tg])
        links = []  # (start-tree node, goal-tree node) at the same configuration
        a, b = ts, tg
        it = 0
        while True:
            t = time.perf_counter() - t0
            if self.done(it, t):
                break
            it += 1
            q_rand, _ = self.source.draw()
            k = self.extend(a, np.asarray(q_rand, dtype=float))
            if k is not None:
                j = self.connect(b, a.q[k].copy())
                if j is not None:
                    links.append((k, j) if a is ts else (j, k))
            if links:
                best = min(ts.cost[i] + tg.cost[j] for i, j in links)
                self.record(best, time.perf_counter() - t0, it)
            if self.req.debug:
                ts.validate()
                tg.validate()
            a, b = b, a
        elapsed = time.perf_counter() - t0
        path = None
        if links:
            i, j = min(links, key=lambda l: ts.cost[l[0]] + tg.cost[l[1]])
            back = tg.path(j)[::-1]
            path = np.vstack([ts.q[ts.path(i)], tg.q[back[1:]]])
            self.best_cost = float(ts.cost[i] + tg.cost[j])
        return self.finish(path, it, elapsed, [ts, tg])


def rrt_star(req: PlanRequest, source, m, env) -> PlanResult:
    return _RRTStar(req, source, m, env).run()


def rrt_connect(req: PlanRequest, source, m, env) -> PlanResult:
    return _RRTConnect(req, source, m, env).run()


PLANNERS = {"rrt_star": rrt_star, "rrt_connect": rrt_connect}


def feasibility_census(source, m, env, n: int) -> dict:
    """Draw ``n`` samples and tabulate collision-free percentages by origin."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(source, SampleSource):
        source = CallableSource(source, m.limits)
    Q = np.empty((n, m.n))
    morphed = np.zeros(n, dtype=bool)
    for r in range(n):
        q, src = source.draw()
        Q[r] = q
        morphed[r] = src == "morphed"
    free = ~configs_in_collision(m, env, Q)

    def pct(mask):
        return 100.0 * float(free[mask].mean()) if mask.any() else None

    return {
        "total": n,
        "feasible_pct": pct(np.ones(n, dtype=bool)),
        "by_source": {
            "prior": {"count": int((~morphed).sum()), "feasible_pct": pct(~morphed)},
            "morphed": {"count": int(morphed.sum()), "feasible_pct": pct(morphed)},
        },
    }


def plan(req: PlanRequest, m, env, field=None, flow: FlowSpec | None = None, workers: int | None = 1,
         batch_size: int = 256, capacity: int = 4096, epsilon: float = 0.0,
         limit_policy: str = "clamp") -> PlanResult:
    """Run one planning query, with background producers unless ``field`` is
    None or ``workers`` is 0 (plain uniform sampling)."""
    prior = PriorSampler(m.limits, req.seed)
    handle = None
    if field is not None and workers != 0:
        bucket = SampleBucket(capacity)
        handle = start_producers(bucket, prior, field, flow, workers, batch_size, limit_policy)
        source = SampleSource(prior.fallback(), bucket, epsilon)
    else:
        source = SampleSource(prior)
    try:
        result = PLANNERS[req.planner](req, source, m, env)
    finally:
        final = stop_and_join(handle)
    if handle is not None:
        result.sample_stats = final
    return result
