"""How uncertain is the STAT5 response to a given stimulus?

Propagates the Beta priors on (k1, k2) through the delay-chain JAK-STAT5
model with a 25-node collocation plan and prints the mean and standard
deviation of the cytoplasmic output y2, together with the Cantelli
surrogate margin of the constraint Pr[y2 <= 0.038] <= 0.05.
"""
import numpy as np

from robust_oed.dynamics import PiecewiseConstantInput
from robust_oed.models import STAT5_Y2_MIN, stat5_model, stat5_theta_nominal, stat5_y2_weights
from robust_oed.oed import ChanceConstraint, propagate_moments

# the case-study initial pool (see the bundled configs)
model, uset = stat5_model(x0=(0.185, 0.0, 0.0, 0.0))
theta = stat5_theta_nominal()
print("prior means k1, k2:", theta)

con = ChanceConstraint(stat5_y2_weights(model), b=-1.0, x_max=-STAT5_Y2_MIN, beta=0.05,
                       grid=np.arange(0.0, 41.0, 1.0), name="y2_min")
grid = np.arange(0.0, 41.0, 5.0)

for levels in ([0.0] * 5, [0.5] * 5, [0.0, 0.0, 0.0, 0.0, 1.0]):
    inp = PiecewiseConstantInput(levels, 40.0)
    tab = propagate_moments(model, uset, theta, inp, grid, constraints=[con], step=0.1)
    print("\ninput levels", levels)
    print("   t    E[y2]     sd[y2]    margin")
    for t, m, v, g in zip(tab.t, tab.output_mean[:, 1], tab.output_var[:, 1], tab.margins[0]):
        print(f"{t:5.1f}  {m:.5f}  {np.sqrt(v):.2e}  {g:+.5f}")
