"""``pdmp train|plan|bench|census``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (DESK_FLOW, BenchConfig, NetSettings, SamplerSettings, emit_report, morphed_census,
                    run_bench, table2_rows, train_env_model)
from .flow import FlowSpec
from .geometry import resolve_env
from .kinematics import CSpaceField, robot_for_env
from .occupancy import OccupancyNet
from .planners import PlanRequest, plan

log = logging.getLogger("pdmp")


def _flow_args(p):
    g = p.add_argument_group("flow")
    g.add_argument("--flow-t", type=float, default=None, help=f"flow horizon (default {DESK_FLOW.horizon_t})")
    g.add_argument("--flow-steps", type=int, default=None, help=f"Euler steps (default {DESK_FLOW.steps_K})")
    g.add_argument("--grad-clip", type=float, default=None, help=f"per-step gradient clip (default {DESK_FLOW.grad_clip})")


def _sampler_args(p):
    d = SamplerSettings()
    g = p.add_argument_group("sampler")
    g.add_argument("--workers", type=int, default=None, help=f"producer threads (default {d.workers})")
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--bucket-capacity", type=int, default=None)
    g.add_argument("--epsilon-bias", type=float, default=None, help="probability of a forced prior draw")
    g.add_argument("--limit-policy", choices=["clamp", "reject"], default=None)


def _flow(a, base: FlowSpec = DESK_FLOW) -> FlowSpec:
    return FlowSpec(base.horizon_t if a.flow_t is None else a.flow_t,
                    base.steps_K if a.flow_steps is None else a.flow_steps,
                    base.grad_clip if a.grad_clip is None else a.grad_clip)


def _sampler(a, base: SamplerSettings | None = None) -> SamplerSettings:
    base = base or SamplerSettings()
    pick = (lambda v, d: d if v is None else v)
    return SamplerSettings(pick(a.workers, base.workers), pick(a.batch_size, base.batch_size),
                           pick(a.bucket_capacity, base.capacity), pick(a.epsilon_bias, base.epsilon),
                           pick(a.limit_policy, base.limit_policy))


def _load_or_train(a, env):
    if a.model:
        return OccupancyNet.load(a.model)
    log.info("no --model given, training one for %s", env.name)
    return train_env_model(env, NetSettings(), a.seed)[0]


def cmd_train(a) -> int:
    env = resolve_env(a.env)
    hidden = tuple(int(h) for h in a.hidden.split(",") if h)
    net, acc = train_env_model(env, NetSettings(hidden, a.epochs, a.points), a.seed)
    net.save(a.out)
    print(json.dumps({"env": env.name, "model": str(a.out), "held_out_accuracy": acc}))
    return 0


def cmd_plan(a) -> int:
    env = resolve_env(a.env)
    m = robot_for_env(env)
    if a.start is not None:
        start, goal = np.array(a.start, float), np.array(a.goal, float)
    else:
        q = env.queries[a.query]
        start, goal = q.start, q.goal
    field = None if a.uniform else CSpaceField(m, _load_or_train(a, env))
    s = _sampler(a)
    req = PlanRequest(start, goal, a.budget, a.planner, seed=a.seed, stop_on_first=a.first)
    res = plan(req, m, env, field, _flow(a), s.workers, s.batch_size, s.capacity, s.epsilon, s.limit_policy)
    doc = res.to_dict()
    if a.out:
        Path(a.out).write_text(json.dumps(doc, indent=1))
    doc.pop("path")
    print(json.dumps(doc))
    return 0 if res.success else 2


def cmd_bench(a) -> int:
    d = json.loads(Path(a.config).read_text()) if a.config else {}
    if a.env:
        d["environments"] = a.env
    if a.seeds is not None:
        d["seeds"] = a.seeds
    if a.budget is not None:
        d["budget"] = a.budget
    cfg = BenchConfig.from_dict(d)
    report = run_bench(cfg, progress=lambda e, p, i: log.info("%s %s seed %d done", e, p, i))
    emit_report(report, a.out)
    for row in table2_rows(report):
        print(",".join(str(v) for v in row.values()))
    for e in report.errors:
        print(f"error: {e}", file=sys.stderr)
    return 1 if report.errors else 0


def cmd_census(a) -> int:
    env = resolve_env(a.env)
    m = robot_for_env(env)
    field = None if a.uniform else CSpaceField(m, _load_or_train(a, env))
    out = morphed_census(field, m, env, _flow(a), a.n, a.seed, a.workers or 1)
    print(json.dumps(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdmp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="fit an occupancy net for an environment")
    p.add_argument("--env", required=True, help="benchmark name or environment JSON")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--hidden", default="32,32")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("plan", help="solve one query")
    p.add_argument("--env", required=True)
    p.add_argument("--model")
    p.add_argument("--planner", choices=["rrt-star", "rrt-connect"], default="rrt-star")
    p.add_argument("--budget", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform", action="store_true", help="plain uniform sampling, no producers")
    p.add_argument("--query", type=int, default=0)
    p.add_argument("--start", type=float, nargs="+")
    p.add_argument("--goal", type=float, nargs="+")
    p.add_argument("--first", action="store_true", help="stop at the first solution")
    p.add_argument("--out", help="write the full result (with path) as JSON")
    _flow_args(p)
    _sampler_args(p)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("bench", help="run a planner ensemble and write tables and curves")
    p.add_argument("--config", help="JSON bench config")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--env", nargs="+")
    p.add_argument("--seeds", type=int)
    p.add_argument("--budget", type=float)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("census", help="feasible-sample percentages of the prior or morphed distribution")
    p.add_argument("--env", required=True)
    p.add_argument("--model")
    p.add_argument("-n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uniform", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    _flow_args(p)
    p.set_defaults(fn=cmd_census)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if a.cmd == "plan" and (a.start is None) != (a.goal is None):
        ap.error("--start and --goal go together")
    try:
        return a.fn(a)
    except (ValueError, OSError, KeyError, IndexError, RuntimeError) as exc:
        print(f"pdmp {a.cmd}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
