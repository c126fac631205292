"""
One query, two samplers
=======================

Solve the corner-to-corner divider query with RRT-Connect, first with plain
uniform sampling and then with background producers feeding morphed
samples.  Prints time-to-solution and where the draws came from.
"""
import numpy as np

from pdmp.bench import DESK_FLOW, NetSettings, train_env_model
from pdmp.geometry import make_benchmark_env
from pdmp.kinematics import CSpaceField, PointRobot
from pdmp.planners import PlanRequest, plan

env = make_benchmark_env("divider2d")
robot = PointRobot(env.lo, env.hi)
net, _ = train_env_model(env, NetSettings(), seed=0)
field = CSpaceField(robot, net)
q = env.queries[0]

rows = []
for seed in range(10):
    req = PlanRequest(q.start, q.goal, time_budget=2.0, planner="rrt_connect", seed=seed, stop_on_first=True)
    u = plan(req, robot, env)
    p = plan(req, robot, env, field, DESK_FLOW, workers=1, capacity=1024)
    rows.append((seed, u.time_to_solution, p.time_to_solution, p.sample_stats.popped_prior, p.sample_stats.popped_morphed))
    print(f"seed {seed}: uniform {u.time_to_solution:.3f}s  morphed {p.time_to_solution:.3f}s  "
          f"(prior {p.sample_stats.popped_prior}, morphed {p.sample_stats.popped_morphed})")

tts = np.array(rows)[:, 1:3]
print("median  uniform %.3fs  morphed %.3fs" % tuple(np.median(tts, axis=0)))
