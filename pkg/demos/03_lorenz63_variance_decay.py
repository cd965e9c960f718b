"""Per-level variance of the difference estimators on stochastic Lorenz 63.

Compares the standard recoupling, the seamless coupling, and the seamless
variant that moves the intermediate coarse ensemble with the fine plan.
Takes about a minute.

Run: python demos/03_lorenz63_variance_decay.py
"""
from mletpf.harness.experiments import ExperimentConfig, run_variance_decay_study

cfg = ExperimentConfig("variance-decay", model="lorenz63", steps=100, reps=2, seed=5,
                       modes=("standard", "seamless", "seamless-fine-plan"))
res = run_variance_decay_study(cfg)
for mode, values in res.config["mean_trace_V"].items():
    levels = "  ".join(f"{v:.2e}" for v in values)
    print(f"{mode:18s} beta {res.slopes[mode + '_beta']:5.2f}   Tr V_l: {levels}")
