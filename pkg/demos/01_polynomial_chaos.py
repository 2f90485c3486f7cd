"""Polynomial chaos in a few lines: moments of a nonlinear map of a Beta variable.

A Beta(2, 5) variable on [1.90, 2.34] (the prior on k1 in the STAT5 model)
corresponds to the Jacobi(4, 1) family on [-1, 1].  We expand exp(-k1) in
that basis and compare the PCE mean/variance with brute-force sampling.
"""
import numpy as np

from robust_oed.models import Distribution
from robust_oed.pce import fit, make_plan
from robust_oed.polynomials import build_basis, gauss_rule

k1 = Distribution.beta4(2, 5, 1.90, 2.34)
family, to_k1 = k1.standard()
print("standard family:", family)

# Gauss rule of the family: the weights are a probability measure
rule = gauss_rule(family, 5)
print("nodes  ", np.round(rule.nodes, 4))
print("weights", np.round(rule.weights, 4), "sum =", rule.weights.sum())

for m in range(1, 6):
    plan = make_plan(build_basis([family], m))
    e = fit(plan, np.exp(-to_k1(plan.nodes[:, 0])))
    print(f"m={m}: mean {e.mean():.10f}  var {e.variance():.4e}")

# brute force for comparison
v = np.exp(-k1.sample(np.random.default_rng(0), 2_000_000))
print(f"MC  : mean {v.mean():.10f}  var {v.var():.4e}")
