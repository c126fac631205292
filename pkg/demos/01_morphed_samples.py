"""
Morphing uniform samples away from obstacles
============================================

Train an occupancy net on the divider scene, push 5000 uniform draws along
the negative occupancy gradient and compare how many land in free space.
Writes ``out/morphed_samples.svg``.
"""
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from pdmp.bench import DESK_FLOW, NetSettings, train_env_model
from pdmp.flow import morph_batch
from pdmp.geometry import Box, make_benchmark_env
from pdmp.kinematics import CSpaceField, PointRobot
from pdmp.sampler import PriorSampler

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

env = make_benchmark_env("divider2d")
robot = PointRobot(env.lo, env.hi)
net, acc = train_env_model(env, NetSettings(), seed=0)
print(f"held-out accuracy {acc:.3f}")

field = CSpaceField(robot, net)
Y = PriorSampler(robot.limits, seed=1).draw_batch(5000)
Z = np.clip(morph_batch(field, Y, DESK_FLOW), 0, 1)

for name, P in (("uniform", Y), ("morphed", Z)):
    print(f"{name:8s} free {100 * (1 - env.occupied(P).mean()):.1f}%")

# %%
# Left: the prior.  Right: the same draws after the flow.
fig, axes = plt.subplots(1, 2, figsize=(9, 4.5), sharey=True)
g = np.linspace(0, 1, 200)
gx, gy = np.meshgrid(g, g)
p = net.forward_batch(np.stack([gx.ravel(), gy.ravel()], 1)).reshape(gx.shape)
for ax, P, title in zip(axes, (Y, Z), ("uniform prior", "morphed")):
    ax.contourf(gx, gy, p, levels=20, cmap="Greys", alpha=0.6)
    for o in env.obstacles:
        if isinstance(o, Box):
            ax.add_patch(plt.Rectangle(o.lo, *(o.hi - o.lo), fill=False, ec="crimson", lw=0.8))
    ax.scatter(*P.T, s=1, c="tab:blue")
    ax.set_title(title)
    ax.set_aspect("equal")
fig.tight_layout()
fig.savefig(out / "morphed_samples.svg")
