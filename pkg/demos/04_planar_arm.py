"""
Planar arm
==========

The occupancy net lives in the workspace; the flow runs in joint space by
pulling the gradient back through the arm's body-point Jacobians.
"""
import numpy as np

from pdmp.bench import DESK_FLOW, NetSettings, morphed_census, train_env_model
from pdmp.geometry import Environment, Query, Sphere
from pdmp.kinematics import CSpaceField, PlanarArm
from pdmp.planners import PlanRequest, plan

env = Environment("arm", [-1, -1], [1, 1],
                  [Sphere([0.55, 0.35], 0.12), Sphere([-0.2, 0.6], 0.15), Sphere([0.3, -0.55], 0.1)],
                  [Query([0.0, 0.0], [2.2, 0.4])], robot={"links": [0.45, 0.4]})
arm = PlanarArm([0.45, 0.4], joint_limits=[[-np.pi, np.pi], [-np.pi, np.pi]])
net, acc = train_env_model(env, NetSettings(), seed=0)
field = CSpaceField(arm, net)
print(f"workspace net accuracy {acc:.3f}")

for name, f in (("uniform", None), ("morphed", field)):
    c = morphed_census(f, arm, env, DESK_FLOW, 5000, seed=2)
    print(f"{name:8s} collision-free configurations {c['feasible_pct']:.1f}%")

q = env.queries[0]
r = plan(PlanRequest(q.start, q.goal, 3.0, "rrt_connect", seed=0, stop_on_first=True), arm, env, field, DESK_FLOW)
print(f"solved {r.success} in {r.time_to_solution:.3f}s, {len(r.path)} waypoints")
