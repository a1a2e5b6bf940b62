"""Price-of-fairness studies: two-type distribution, type-share sweep, K tiers."""
import argparse

from loyalty_lab.experiments import run_study

p = argparse.ArgumentParser()
p.add_argument("--out", default="results")
p.add_argument("--reps", type=int, default=10_000)
p.add_argument("--seed", type=int, default=42)
args = p.parse_args()

pof = run_study("pof", reps=args.reps, seed=args.seed, out=args.out)
print(f"two types: mean PoF {pof['mean']:.4f}, max {pof['max']:.4f}, bound {pof['bound']}")

rho = run_study("rho", reps=args.reps, seed=args.seed, out=args.out)
print("rho1      " + " ".join(f"{r:7.1f}" for r in rho["rho1"]))
print("avg PoF   " + " ".join(f"{m:7.4f}" for m in rho["mean"]))
print("max PoF   " + " ".join(f"{m:7.4f}" for m in rho["max"]))

kt = run_study("ktier", reps=args.reps, seed=args.seed, out=args.out)
for k, m, b in zip(kt["k"], kt["mean"], kt["bound"]):
    print(f"K={k:2d}  avg {m:.4f}  worst-case {b:.4f}")
