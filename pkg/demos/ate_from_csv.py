"""Estimate an average treatment effect from a CSV file.

Run from the repository root:  python3 demos/ate_from_csv.py
"""

# %% Write a small observational dataset to disk
import tempfile
from pathlib import Path

from cvtmle import estimate, load_csv
from cvtmle.simulator import draw_sample, get_dgp, replicate_rng

sample = draw_sample(get_dgp("dgp-b"), 800, replicate_rng(11, 0))
path = Path(tempfile.mkdtemp()) / "obs.csv"
lines = ["age_band,A,Y"] + [
    f"{float(w)},{int(a)},{float(y)}" for w, a, y in zip(sample.W[:, 0], sample.A, sample.Y_raw)
]
path.write_text("\n".join(lines) + "\n")

# %% Load it back; any column other than A and Y is a covariate
data = load_csv(path)
print(f"n={data.n}, covariates={data.covariate_names}, treated={data.A.mean():.2f}")

# %% Cross-fitted initial fits, then the stacked targeting step
fit = estimate(data, "ate", "stacked", K=10, seed=1)
rep = fit.report
print(f"ATE = {rep.psi:.4f}  (95% CI {rep.ci_lo:.4f} to {rep.ci_hi:.4f})")
print(f"targeting steps: {rep.k_iterations}, stop reason: {rep.reason}")

# %% Which candidate learner won in each fold?
for row in rep.learner_audit:
    print(f"fold {row['fold']:>2}: Q={row['Q_learner']:<13} g={row['g_learner']}")
