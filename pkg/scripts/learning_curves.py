"""Regret, per-epoch regret, consideration sets and adaptivity of the two learners."""
import argparse

from loyalty_lab.experiments import LEARNING_HORIZONS, run_study

p = argparse.ArgumentParser()
p.add_argument("--out", default="results")
p.add_argument("--reps", type=int, default=100)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--jobs", type=int, default=1)
args = p.parse_args()

s = run_study("learning", reps=args.reps, seed=args.seed, horizons=LEARNING_HORIZONS, out=args.out, jobs=args.jobs)
print("T       " + " ".join(f"{t:8d}" for t in s["horizons"]))
for name, pol in s["policies"].items():
    print(f"{name:7s} " + " ".join(f"{r:8.2f}" for r in pol["regret"]))
for name, pol in s["policies"].items():
    a = pol["adaptivity"]
    print(f"{name}: changes {a['n_changes']:.2f}, rel change {100 * a['mean_rel_change']:.0f}%, "
          f"increases {a['n_increases']:.2f}, rel increase {100 * a['mean_rel_increase']:.0f}%")
print("fair consideration-set size by epoch:", s["policies"]["fair"]["consideration_set_size"])
