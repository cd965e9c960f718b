"""Forward-model cost against accuracy on the fully localised Lorenz 96 filter.

Flop counts follow eps^-3 for the single-level ETPF and roughly eps^-2 for
the multilevel filters.  RMSE is measured against a larger localised ETPF run
(reduced here from the default reference size so the demo is quick).

Run: python demos/04_lorenz96_cost_scaling.py
"""
from mletpf.harness.experiments import ExperimentConfig, run_cost_accuracy_study

cfg = ExperimentConfig("cost-accuracy", model="lorenz96", steps=20, reps=2, seed=7,
                       reference_level=5, reference_size=1000)
res = run_cost_accuracy_study(cfg)
for mode in cfg.modes:
    for eps in cfg.epsilons:
        flops = [r["value"] for r in res.select("flops", mode) if r["epsilon"] == eps]
        rmse = [r["value"] for r in res.select("rmse", mode) if r["epsilon"] == eps]
        print(f"{mode:9s} eps {eps:4.2f}  flops {flops[0]:.3e}  rmse {sum(rmse) / len(rmse):.4f}")
    print(f"{mode} cost exponent {res.slopes[mode + '_cost_exponent']:.2f}")
