"""
A short behavior-cloning run
============================

Ten oracle demonstrations, a few hundred Adam steps with augmentation and
a held-out evaluation.  A full desk run uses the ``histoport train``
command; this script stops early to stay under ten minutes on one core.
Run with ``python3 notebooks/03_training_run.py [iterations]``.
"""

# %%
import sys

from histoport.policy import PolicyConfig
from histoport.training import TrainConfig, kitting_config, make_dataset, train
from histoport.viz import eoh_arrows_svg, eoh_heatmap

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = TrainConfig(iterations=iterations, eval_every=max(1, iterations // 3), eval_episodes=20,
                  policy=PolicyConfig(seed=0))
data = make_dataset(cfg.demos, 0, kitting_config(cfg.policy))


def show(row):
    if row["eval_success_rate"] is not None or row["iteration"] % 50 == 0:
        print(f"{row['iteration']:5d}  pick {row['loss_pick_pos']:.3f}  angle {row['loss_pick_angle']:.3f}  "
              f"place {row['loss_place']:.3f}  success {row['eval_success_rate']}")


res = train(cfg, data, log=show)
print(f"best held-out success {res.best_success} at iteration {res.best_iteration}")

# %%
# What the scene encoder learned: the per-pixel peak of its histogram map.
import numpy as np

from histoport import tensor as T
from histoport.kitting import generate_episode, render_observation

obs = render_observation(generate_episode(1_000_000))
with T.no_grad():
    eoh = res.bundle.scene_descriptors(T.Tensor(obs)).data
eoh_heatmap("eoh_max.ppm", eoh)
with open("eoh_arrows.svg", "w") as fh:
    fh.write(eoh_arrows_svg(eoh, 8))
print("peak bin mass ranges", np.round(eoh.max(0).min(), 3), "to", np.round(eoh.max(0).max(), 3))
