"""Predict nodal basin stability from topology with a small graph network.

End-to-end miniature of the learning pipeline: simulate a small dataset of
10-node grids, split it by grid, train the 3-hop TAG network on the raw
power injections, and compare its held-out R^2 against linear regression
on hand-crafted network measures.  At this scale the numbers are noisy --
the committed desk-scale benchmark (scripts/run_desk_experiments.py) is
the statistically meaningful version of this comparison.

Run:  python3 demos/predict_snbs_gnn.py          (~2 minutes on one core)
"""

import numpy as np

from gridstab import (
    FeaturePipelineConfig,
    GrowthParams,
    IntegratorConfig,
    PerturbationBox,
    build_dataset,
    build_design_matrix,
    split_dataset,
)
from gridstab.ml import (
    TrainConfig,
    evaluate_protocol,
    fit_linreg,
    predict_linreg,
    prepare_graphs,
    preset,
    r2_score,
    train_protocol,
)

ds = build_dataset(count=24, growth=GrowthParams(n=10), box=PerturbationBox(),
                   trials=120, master_seed=3,
                   integrator=IntegratorConfig(rel_tol=1e-3, abs_tol=1e-6))
ds = split_dataset(ds, (0.7, 0.15, 0.15), seed=0)
y = ds.all_snbs()
print(f"{len(ds.grids)} grids simulated; SNBS mean {y.mean():.3f}, "
      f"std {y.std():.3f}")

design = build_design_matrix(ds, FeaturePipelineConfig())
w = fit_linreg(design.X["train"], design.y["train"])
lin = r2_score(predict_linreg(w, design.X["test"]), design.y["test"])
print(f"\nlinreg on 6 network measures: test R^2 {lin:+.3f}")

spec = preset("tag_small")
folds = prepare_graphs(ds, spec)
cfg = TrainConfig(learning_rate=1.0, batch_size=4, epochs=400, seed=0,
                  num_seeds=3, top_k_average=2,
                  scheduler={"kind": "step", "step": 100, "factor": 0.5})
protocol = train_protocol(spec, folds, cfg)
report = evaluate_protocol(protocol, folds["test"], "test")
print(f"tag_small from raw topology: test R^2 {report.mean_r2:+.3f} "
      f"(seeds: {', '.join(f'{v:+.3f}' for v in report.per_seed_r2.values())})")

worst = min(report.scatter, key=lambda s: -abs(s[2] - s[3]))
print(f"\nlargest nodal miss: grid {worst[0]} node {worst[1]}: "
      f"predicted {worst[2]:.3f}, simulated {worst[3]:.3f}")
