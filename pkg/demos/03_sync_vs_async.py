# %% [markdown]
# One agent per SBS
# =================
#
# With heterogeneous popularity (zeta near 1 sends most of a file's users to
# one SBS) a shared synchronous policy wastes space. Independent agents can
# specialise. Small and quick; the full sweep is the ``fig5`` preset.

# %%
import tempfile
from pathlib import Path

from mdsttl.experiments import report, resolve_config, run_experiment

out = Path(tempfile.mkdtemp(prefix="marl-demo-"))
cfg = resolve_config({"seed": 0, "seeds": [0]}, preset="desk-fig5")
for row in run_experiment(cfg, out):
    print(row["method"], row["sweep_value"], row["L_over_omega"])

# %%
report(out)
