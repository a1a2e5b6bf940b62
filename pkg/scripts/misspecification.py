"""Performance ratio when the learners always fit a linear model."""
import argparse

from loyalty_lab.experiments import MISSPEC_BASELINES, MISSPEC_HORIZONS, misspec_gamma, run_study

p = argparse.ArgumentParser()
p.add_argument("--out", default="results")
p.add_argument("--reps", type=int, default=500)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--jobs", type=int, default=1)
args = p.parse_args()

s = run_study("misspec", reps=args.reps, seed=args.seed, out=args.out, jobs=args.jobs)
for policy in ("stable", "fair"):
    print(policy)
    for pb in MISSPEC_BASELINES:
        cells = [misspec_gamma(s, policy, truth, pb, t) for truth in ("linear", "exp", "logit") for t in MISSPEC_HORIZONS]
        print(f"  phi_bar={pb:.2f} " + " ".join(f"{g:.2f}" for g in cells))
