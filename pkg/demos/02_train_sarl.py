# %% [markdown]
# Training the synchronous learner
# ================================
#
# One DDPG agent picks the policy for every SBS at once. This runs the small
# desk preset (a couple of minutes on a laptop) and compares it with the
# greedy static fill.

# %%
import tempfile
from pathlib import Path

import numpy as np

from mdsttl.experiments import read_summary, resolve_config, run_experiment, moving_average

out = Path(tempfile.mkdtemp(prefix="sarl-demo-"))
cfg = resolve_config({"seed": 0, "episodes": 150}, preset="desk-sarl")
row = run_experiment(cfg, out / "sarl")[0]
greedy = run_experiment(resolve_config({"seed": 0, "command": "evaluate", "policy": "greedy"},
                                       preset="desk-sarl"), out / "greedy")[0]
print("sarl  ", row["L_over_omega"])
print("greedy", greedy["L_over_omega"])

# %%
# Learning curve, smoothed over 25 episodes.
_, rows = read_summary(out / "sarl" / "training.csv")
curve = moving_average(np.array([float(r["L_over_omega"]) for r in rows]), 25)
for ep in range(0, len(curve), 25):
    print(ep, round(curve[ep], 4))
print("files in", out)
