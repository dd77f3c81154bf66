"""
The closed-form blending coefficient
====================================

The guided score mixes an unconditional score ``s_u``, a target score ``s_T``
and an anchor score ``s_A``. For a guidance scale ``w`` and blend weight
``gamma`` it is

    s_u + w * ((1 - gamma) * s_T + gamma * s_A - s_u)

The loss ``||guided - s_T||^2`` is a parabola in ``gamma`` and its minimiser
has a closed form. This script draws the parabola for one example and marks
the closed-form answer.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from aapb.guidance import adaptive_gamma, alignment_loss
from aapb.metrics import displacement, minimum_alignment_loss

s_u = np.array([0.0, 0.0])
s_T = np.array([1.0, 0.0])
s_A = np.array([0.0, 1.0])
w = 2.0

gamma_star = adaptive_gamma(s_u, s_T, s_A, w)
print(f"gamma* = {gamma_star:.4f}")  # 0.25 for this example

gammas = np.linspace(-1, 1.5, 501)
losses = alignment_loss(s_u, s_T, s_A, w, gammas)

###############################################################################
# The smallest loss on the grid sits on the closed-form value, and it equals
# ``||r||^2 - <r, d>^2 / ||d||^2`` with ``r = (1 - w)(s_u - s_T)`` and
# ``d = s_A - s_T``.

print("grid argmin:", gammas[np.argmin(losses)])
print("loss at gamma*:", alignment_loss(s_u, s_T, s_A, w, gamma_star))
print("minimum-loss formula:", minimum_alignment_loss(s_u, s_T, s_A, w))

###############################################################################
# How far the anchor sits from the target splits into a part along the
# residual ``s_u - s_T`` and a part orthogonal to it.

rep = displacement(s_u, s_T, s_A)
print(f"parallel {rep.norm_par:.3f}, orthogonal {rep.norm_perp:.3f}")

fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(gammas, losses, label="alignment loss")
ax.axvline(gamma_star, color="red", linestyle="--", label="closed form")
ax.set_xlabel("gamma")
ax.set_ylabel("loss")
ax.legend()
fig.tight_layout()
fig.savefig("gamma_closed_form.svg")
