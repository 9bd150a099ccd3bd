"""
Kitting scenes and the scripted expert
=======================================

Generates a few episodes, renders heightmaps, runs the oracle and checks
the closure rate.  Run with ``python3 notebooks/02_kitting_scenes.py``.
"""

# %%
import numpy as np

from histoport.kitting import apply_action, check_success, generate_episode, oracle_actions, render_observation
from histoport.training import OraclePolicy, RandomPolicy, evaluate

scene = generate_episode(7)
print("tool pose", np.round(scene.tool, 2), "kit pose", np.round(scene.kit, 2))
print("polygon with", len(scene.shape.vertices), "vertices, diameter", round(scene.shape.diameter, 2))

# %%
# The heightmap: plate at 0.2, cavity cut to the table, tool raised to 0.4.
obs = render_observation(scene)
for row in obs[0, ::2, ::2]:
    print("".join(" .:#"[int(round(v / 0.4 * 3))] if v > 0 else " " for v in row))

# %%
# The oracle picks at the tool's centroid and places it into the cavity.
pick, place = oracle_actions(scene)
print(pick, place)
after = apply_action(scene, pick, place)
ok, dt, dr = check_success(after)
print(f"state {after.state}, success {ok}, centroid error {dt:.2f} px, angle error {dr:.3f} rad")

# %%
# Across held-out episodes the expert closes the loop; random actions do not.
print("oracle:", evaluate(OraclePolicy(36), 50, 0).success_rate)
print("random:", evaluate(RandomPolicy(36, seed=0), 50, 0).success_rate)
