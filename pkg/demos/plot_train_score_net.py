"""
Training the conditional noise predictor
========================================

A small MLP predicts the injected noise from a noised point, its timestep and
a condition tag (anchor, target or dropped). Dropping the tag 10% of the time
teaches the same network the unconditional score. This script runs a short
training job and plots the loss; the default configuration trains for 20k
steps, which takes about a minute.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from aapb.analytic import TOY_TARGET, perturbed_score
from aapb.schedule import NoiseSchedule, forward_sample
from aapb.scorenet import Condition, TrainConfig, train

schedule = NoiseSchedule.linear()
config = TrainConfig(steps=3000, seed=0)
net = train(config, schedule)
log = net.train_log
print(f"validation loss {log.val_loss_init:.3f} -> {log.val_loss_final:.3f}")
print(f"{log.dropout_events} dropped labels in {log.wall_seconds:.1f}s")

###############################################################################
# Compare the learned target score with the exact one at a moderate noise
# level.

rng = np.random.default_rng(1)
state = forward_sample(TOY_TARGET.sample(1000, rng), 200, schedule, rng)
gap = net.predict_score(state, Condition.TARGET, schedule) - perturbed_score(TOY_TARGET, state, schedule)
print("score MSE at t=200:", np.mean(np.sum(gap**2, axis=1)))

window = 100
smooth = np.convolve(log.losses, np.ones(window) / window, mode="valid")
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(smooth)
ax.set_xlabel("step")
ax.set_ylabel("noise-prediction loss")
fig.tight_layout()
fig.savefig("training_loss.svg")
