"""Walkthrough: the leave-one-user-out experiment grid.

Runs a compact strategy-by-fraction grid with repetitions and prints the
aggregate table (mean macro F1 with a 95% confidence interval across
repetitions). The `nesyhar run --config ...` command wraps exactly this,
driven by a YAML file; see configs/quick.yaml.
"""

from nesyhar import (
    DiscretizationConfig,
    LossConfig,
    StrategyConfig,
    SyntheticConfig,
    TrainConfig,
    encode_user_datasets,
    generate_synthetic,
    load_knowledge,
    run_experiment,
)
from nesyhar.evaluation import format_report_table
from nesyhar.nn import BranchSpec, NetworkSpec

model = load_knowledge("configs/synthetic.rules")
disc = DiscretizationConfig()
datasets = generate_synthetic(
    model, SyntheticConfig(users=4, windows_per_user=60, violation_rate=0.05, seed=13), disc)
encoded = encode_user_datasets(datasets, model, 4.0, disc)
first = next(iter(encoded.values()))

spec = NetworkSpec(
    phone=BranchSpec(first.phone.shape[1], first.phone.shape[2], (8, 12), (9, 5), 2, 24),
    watch=BranchSpec(first.watch.shape[1], first.watch.shape[2], (8, 12), (7, 3), 2, 24),
    context_size=first.context.shape[1], classes=len(first.activities),
    context_dense=8, trunk_dense=48, dropout=0.1)

report = run_experiment(
    encoded,
    strategies=[StrategyConfig("baseline"),
                StrategyConfig("semantic_loss", LossConfig("All", 2.0)),
                StrategyConfig("context_refinement")],
    fractions=[0.25, 1.0],
    repetitions=2,
    fold_k=1,
    seeds=[31, 32],
    spec=spec,
    knowledge=model,
    train_cfg=TrainConfig(epochs=60, batch_size=32, patience=5))

print(format_report_table(report))
print("every user served as the test user once per repetition; "
      "confusions were pooled per repetition before computing macro F1.")
