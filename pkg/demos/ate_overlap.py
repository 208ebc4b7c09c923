"""For the ATE the two variants are the same estimator when folds are equal.

Run from the repository root:  python3 demos/ate_overlap.py
"""

# %%
from cvtmle import estimate
from cvtmle.crossfit import crossfit_nuisances
from cvtmle.data import make_folds
from cvtmle.estimator import as_specs
from cvtmle.simulator import draw_sample, get_dgp, replicate_rng

data = draw_sample(get_dgp("dgp-c"), 500, replicate_rng(3, 0))
plan = make_folds(data.n, 10, seed=3, stratify_by=data.A)
print("equal fold sizes:", plan.equal_sizes)

# %% Share one set of cross-fitted predictions between the variants
nuis = crossfit_nuisances(data, plan, as_specs(["glm-interact"]), as_specs(["glm"]))
stacked = estimate(data, "ate", "stacked", nuisances=nuis).report
foldwise = estimate(data, "ate", "foldwise", nuisances=nuis).report
print(f"stacked  {stacked.psi:.12f}  eps {stacked.eps_trace}")
print(f"foldwise {foldwise.psi:.12f}  eps {foldwise.eps_trace}")

# %% The effect variance does not share this property
s = estimate(data, "vte", "stacked", nuisances=nuis).report.psi
f = estimate(data, "vte", "foldwise", nuisances=nuis).report.psi
print(f"VTE stacked {s:.6f} vs foldwise {f:.6f}")
