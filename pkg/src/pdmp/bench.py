"""Benchmark harness: planner ensembles across seeds, CSV tables and SVG curves."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowSpec
from .geometry import Environment, generate_dataset, resolve_env
from .kinematics import CSpaceField, robot_for_env
from .occupancy import NetArch, OccupancyNet, TrainConfig, accuracy, train_net, zero_net
from .planners import PLANNERS, PlanRequest, configs_in_collision, edge_in_collision, plan

log = logging.getLogger(__name__)

SAMPLERS = ("uniform", "pdmp")
TABLE1_COLUMNS = ["env", "planner", "sampler", "runs", "total_samples", "from_prior", "from_morphed",
                  "samples_per_run_mean", "samples_per_run_std", "total_feasible_pct",
                  "prior_feasible_pct", "morphed_feasible_pct"]
TABLE2_COLUMNS = ["env", "planner", "sampler", "runs", "successes", "success_pct",
                  "tts_mean", "tts_std", "tts_median", "path_violations"]
SERIES_POINTS = 51
DESK_FLOW = FlowSpec(0.05, 5, 5.0)


@dataclass
class NetSettings:
    hidden: tuple = (32, 32)
    epochs: int = 400
    n_points: int = 20000
    train_frac: float = 0.8


@dataclass
class SamplerSettings:
    workers: int = 1
    batch_size: int = 256
    capacity: int = 1024
    epsilon: float = 0.0
    limit_policy: str = "clamp"


@dataclass
class BenchConfig:
    """What to run.  ``planners`` lists (planner kind, sampler) pairs.

    The defaults are the desk-scale settings: a small net, a short flow with
    a loose clip and a 2 s budget.  ``repeats`` re-runs every seed that many
    times (interleaving the samplers); per-seed comparisons use the median.
    """
    environments: list = field(default_factory=lambda: ["divider2d"])
    planners: list = field(default_factory=lambda: [(p, s) for p in ("rrt_star", "rrt_connect") for s in SAMPLERS])
    seeds: int = 30
    budget: float = 2.0
    root_seed: int = 0
    repeats: int = 1
    query: int = 0
    stop_on_first: bool = True
    flow: FlowSpec = DESK_FLOW
    net: NetSettings = field(default_factory=NetSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    models: dict = field(default_factory=dict)   # env name -> saved model path

    def __post_init__(self):
        if self.seeds < 1 or self.repeats < 1:
            raise ValueError("seeds and repeats must be >= 1")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        pl = []
        for p, s in self.planners:
            p = p.replace("-", "_")
            if p not in PLANNERS or s not in SAMPLERS:
                raise ValueError(f"unknown planner variant ({p!r}, {s!r})")
            pl.append((p, s))
        self.planners = pl
        for name in self.environments:
            resolve_env(name)
        for name, path in self.models.items():
            if not Path(path).exists():
                raise ValueError(f"model file for {name!r} not found: {path}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        d = dict(d)
        if "flow" in d:
            f = d["flow"]
            d["flow"] = FlowSpec(f.get("t", f.get("horizon_t", 1.0)), f.get("steps", f.get("steps_K", 20)),
                                 f.get("grad_clip", 1.0), f.get("method", "euler"))
        if "net" in d:
            d["net"] = NetSettings(**{**d["net"], "hidden": tuple(d["net"].get("hidden", (32, 32)))})
        if "sampler" in d:
            d["sampler"] = SamplerSettings(**d["sampler"])
        if "planners" in d:
            d["planners"] = [tuple(p) if not isinstance(p, dict) else (p["planner"], p["sampler"])
                             for p in d["planners"]]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def cell_seed(root: int, env_idx: int, planner: str, seed_idx: int) -> int:
    """Planner seed for one cell.  Both samplers of a planner share it, so the
    uniform and morphed runs start from the same prior stream."""
    key = (env_idx, sorted(PLANNERS).index(planner), seed_idx)
    return int(np.random.SeedSequence(root, spawn_key=key).generate_state(1)[0] >> 1)


def train_env_model(env: Environment, net: NetSettings | None = None, seed: int = 0):
    """(net, held-out accuracy).  An obstacle-free scene gets the constant net."""
    net = net or NetSettings()
    arch = NetArch(env.dim, net.hidden)
    if not env.obstacles:
        return zero_net(arch, env.lo, env.hi), 1.0
    train, test = generate_dataset(env, net.n_points, seed).split(net.train_frac, seed)
    model = train_net(train, arch, TrainConfig(epochs=net.epochs, seed=seed), env.lo, env.hi)
    return model, accuracy(model, test.points, test.labels)


@dataclass
class CellResult:
    env: str
    planner: str
    sampler: str
    tts: np.ndarray                 # (seeds, repeats), inf where unsolved
    samples: np.ndarray             # (seeds, repeats) total draws
    from_prior: np.ndarray
    feasible: np.ndarray            # collision-free draws
    feasible_prior: np.ndarray
    path_violations: int = 0
    second_half_prior_share: list = field(default_factory=list)
    series_t: np.ndarray | None = None
    series_prior: np.ndarray | None = None     # mean cumulative prior draws over runs
    series_morphed: np.ndarray | None = None
    errors: list = field(default_factory=list)

    @property
    def runs(self) -> int:
        return self.tts.size

    @property
    def successes(self) -> int:
        return int(np.isfinite(self.tts).sum())

    @property
    def success_pct(self) -> float:
        return 100.0 * self.successes / self.runs if self.runs else 0.0

    def seed_median_tts(self) -> np.ndarray:
        return np.median(self.tts, axis=1)


@dataclass
class BenchReport:
    config: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)
    model_accuracy: dict = field(default_factory=dict)

    @property
    def errors(self) -> list:
        return [e for c in self.cells for e in c.errors]

    def cell(self, env: str, planner: str, sampler: str) -> CellResult:
        for c in self.cells:
            if (c.env, c.planner, c.sampler) == (env, planner.replace("-", "_"), sampler):
                return c
        raise KeyError((env, planner, sampler))


def _path_violations(path, m, env, resolution) -> int:
    return sum(edge_in_collision(m, env, a, b, resolution) for a, b in zip(path[:-1], path[1:]))


def _cumulative(times, flags, grid):
    flags = np.asarray(flags, dtype=bool)
    order = np.minimum(np.searchsorted(grid, times, side="left"), len(grid) - 1)
    morphed = np.bincount(order[flags], minlength=len(grid)).cumsum()
    prior = np.bincount(order[~flags], minlength=len(grid)).cumsum()
    return prior, morphed


def run_bench(cfg: BenchConfig, progress=None) -> BenchReport:
    report = BenchReport(config=_config_dict(cfg))
    grid = np.linspace(0.0, cfg.budget, SERIES_POINTS)
    for e_idx, name in enumerate(cfg.environments):
        env = resolve_env(name)
        m = robot_for_env(env)
        if not env.queries:
            raise ValueError(f"environment {name!r} has no queries")
        query = env.queries[cfg.query]
        field_ = None
        if any(s == "pdmp" for _, s in cfg.planners):
            if name in cfg.models:
                net, acc = OccupancyNet.load(cfg.models[name]), float("nan")
            else:
                t = time.perf_counter()
                net, acc = train_env_model(env, cfg.net, cfg.root_seed)
                log.info("trained %s model in %.1fs, held-out accuracy %.4f", name, time.perf_counter() - t, acc)
            report.model_accuracy[name] = acc
            field_ = CSpaceField(m, net)
        for planner in dict.fromkeys(p for p, _ in cfg.planners):
            variants = [s for p, s in cfg.planners if p == planner]
            shape = (cfg.seeds, cfg.repeats)
            cells = {s: CellResult(name, planner, s, np.full(shape, np.inf), *(np.zeros(shape, dtype=int) for _ in range(4)),
                                   series_t=grid, series_prior=np.zeros(len(grid)), series_morphed=np.zeros(len(grid)))
                     for s in variants}
            for i in range(cfg.seeds):
                seed = cell_seed(cfg.root_seed, e_idx, planner, i)
                for r in range(cfg.repeats):
                    for s in variants:
                        _run_cell(cells[s], i, r, seed, cfg, query, m, env, field_, grid)
                if progress:
                    progress(name, planner, i)
            n = cfg.seeds * cfg.repeats
            for c in cells.values():
                c.series_prior /= n
                c.series_morphed /= n
                report.cells.append(c)
    return report


def _run_cell(c: CellResult, i, r, seed, cfg, query, m, env, field_, grid):
    req = PlanRequest(query.start, query.goal, cfg.budget, c.planner, seed=seed, stop_on_first=cfg.stop_on_first)
    sp = cfg.sampler
    try:
        res = plan(req, m, env, field_ if c.sampler == "pdmp" else None, cfg.flow, sp.workers,
                   sp.batch_size, sp.capacity, sp.epsilon, sp.limit_policy)
    except Exception as exc:  # recorded, the bench carries on
        log.error("cell %s/%s/%s seed %d failed: %s", c.env, c.planner, c.sampler, i, exc)
        c.errors.append(f"{c.env}/{c.planner}/{c.sampler} seed {i}: {exc!r}")
        return
    times, flags, samples = res.draw_log
    free = ~configs_in_collision(m, env, samples) if len(samples) else np.zeros(0, dtype=bool)
    c.samples[i, r] = len(flags)
    c.from_prior[i, r] = int((~flags).sum())
    c.feasible[i, r] = int(free.sum())
    c.feasible_prior[i, r] = int(free[~flags].sum())
    if res.success:
        c.tts[i, r] = res.time_to_solution
        c.path_violations += _path_violations(res.path, m, env, req.resolution / 2)
    prior, morphed = _cumulative(times, flags, grid)
    c.series_prior += prior
    c.series_morphed += morphed
    if c.sampler == "pdmp" and len(times):
        late = times > 0.5 * res.elapsed
        if late.any():
            c.second_half_prior_share.append(float((~flags[late]).mean()))


def _config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    d["planners"] = [list(p) for p in cfg.planners]
    return d


# --- output ----------------------------------------------------------------

def _pct(num, den):
    return round(100.0 * num / den, 4) if den else ""


def table1_rows(report: BenchReport) -> list:
    rows = []
    for c in report.cells:
        tot, pri = int(c.samples.sum()), int(c.from_prior.sum())
        mor = tot - pri
        f, fp = int(c.feasible.sum()), int(c.feasible_prior.sum())
        per_run = c.samples.ravel()
        rows.append({
            "env": c.env, "planner": c.planner, "sampler": c.sampler, "runs": c.runs,
            "total_samples": tot, "from_prior": pri, "from_morphed": mor,
            "samples_per_run_mean": round(float(per_run.mean()), 2) if c.runs else "",
            "samples_per_run_std": round(float(per_run.std()), 2) if c.runs else "",
            "total_feasible_pct": _pct(f, tot), "prior_feasible_pct": _pct(fp, pri),
            "morphed_feasible_pct": _pct(f - fp, mor),
        })
    return rows


def table2_rows(report: BenchReport) -> list:
    rows = []
    for c in report.cells:
        ok = c.tts[np.isfinite(c.tts)]
        stat = (lambda f: round(float(f(ok)), 4) if len(ok) else "")
        rows.append({
            "env": c.env, "planner": c.planner, "sampler": c.sampler, "runs": c.runs,
            "successes": c.successes, "success_pct": round(c.success_pct, 2),
            "tts_mean": stat(np.mean), "tts_std": stat(np.std), "tts_median": stat(np.median),
            "path_violations": c.path_violations,
        })
    return rows


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def success_curve(c: CellResult, thresholds) -> np.ndarray:
    """Fraction of runs solved within each time threshold."""
    t = np.sort(c.tts.ravel())
    return np.searchsorted(t, thresholds, side="right") / max(1, t.size)


def emit_report(report: BenchReport, out_dir) -> dict:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / k for k in ("table1.csv", "table2.csv", "success_curve.svg", "morphed_fraction.svg")}
    _write_csv(paths["table1.csv"], TABLE1_COLUMNS, table1_rows(report))
    _write_csv(paths["table2.csv"], TABLE2_COLUMNS, table2_rows(report))

    budget = report.config.get("budget", 2.0)
    fig, ax = plt.subplots(figsize=(6, 4))
    taus = np.linspace(0, budget, 201)
    for c in report.cells:
        ax.plot(taus, 100 * success_curve(c, taus), label=f"{c.env} {c.planner} {c.sampler}",
                ls="-" if c.sampler == "pdmp" else "--")
    ax.set_xlabel("planning time (s)")
    ax.set_ylabel("success (%)")
    ax.set_ylim(0, 102)
    if report.cells:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(paths["success_curve.svg"])
    plt.close(fig)

    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for c in report.cells:
        if c.sampler != "pdmp" or c.series_t is None:
            continue
        lab = f"{c.env} {c.planner}"
        a1.plot(c.series_t, c.series_morphed, label=f"{lab} morphed")
        a1.plot(c.series_t, c.series_prior, ls="--", label=f"{lab} prior")
        tot = c.series_morphed + c.series_prior
        with np.errstate(invalid="ignore", divide="ignore"):
            a2.plot(c.series_t, np.where(tot > 0, 100 * c.series_prior / tot, np.nan), label=lab)
    a1.set_xlabel("time (s)")
    a1.set_ylabel("cumulative draws (mean per run)")
    a2.set_xlabel("time (s)")
    a2.set_ylabel("prior share of draws (%)")
    for a in (a1, a2):
        if a.lines:
            a.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(paths["morphed_fraction.svg"])
    plt.close(fig)
    return paths


def paired_wins(report: BenchReport, env: str, planner: str) -> float:
    """Share of seeds where the morphed sampler's median time-to-solution is
    no worse than the uniform one's.  Unsolved runs count as infinitely slow."""
    u = report.cell(env, planner, "uniform").seed_median_tts()
    p = report.cell(env, planner, "pdmp").seed_median_tts()
    return float(np.mean(p <= u)) if len(u) else math.nan


def morphed_census(field, m, env, flow: FlowSpec, n: int, seed: int = 0, workers: int = 1) -> dict:
    """Feasible percentages of ``n`` draws from the morphed distribution, or
    of the prior itself when ``field`` is None."""
    from .flow import morph_batch
    from .planners import feasibility_census
    from .sampler import MORPHED, PRIOR, PriorSampler

    Y = PriorSampler(m.limits, seed).draw_batch(n)
    if field is None:
        Q, tag = Y, PRIOR
    else:
        Q, tag = morph_batch(field, Y, flow, workers), MORPHED
        lim = np.asarray(m.limits, dtype=float)
        Q = np.clip(Q, lim[:, 0], lim[:, 1])
    it = iter(Q)
    return feasibility_census(lambda: (next(it), tag), m, env, n)
