# Train the integrated controller briefly and compare it with the baselines.
#
#   python demos/03_train_and_compare.py [epochs]
#
# The default budget (200 epochs) takes about five minutes per controller;
# a handful of epochs already moves the policy.

import sys

import numpy as np

from busholding.experiment import ExperimentConfig, run_cell, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = ExperimentConfig(n_epochs=epochs, eval_every=5)


def show(row):
    w = row["eval_wait_s"]
    extra = "" if np.isnan(w) else f"   eval wait {w:6.2f} s"
    print(f"epoch {row['epoch']:3d}  reward {row['mean_reward']:.3f}  "
          f"mean delta {row['mean_delta']:+.3f}{extra}")


theta, phi, log = train(cfg, name="ippo-dh", progress=show)

print("\n24 h evaluation, mean wait / hold (s)")
for xi in (0.02, 0.04):
    for name in ("none", "dual-headway", "ippo-dh"):
        nets = (theta, phi) if name == "ippo-dh" else None
        waits, holds, events = [], [], []
        for seed in range(3):
            _, s = run_cell(cfg, name, xi, seed, nets)
            waits.append(s.mean_wait_s)
            holds.append(s.mean_hold_s)
            events.append(s.bunching_events)
        print(f"xi={xi:.3f} {name:13s} wait {np.mean(waits):7.2f}  hold {np.mean(holds):6.2f}"
              f"  bunching {events}")
