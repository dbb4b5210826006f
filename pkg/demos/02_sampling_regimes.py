"""Compare the four batch-construction regimes on one synthetic corpus.

Run: python3 demos/02_sampling_regimes.py
"""

from collections import Counter

from taskmix.codebook import build_codebook
from taskmix.runplan import LrScheduleConfig, epoch_steps, lr_at
from taskmix.sampler import RegimeConfig, ads_quotas, make_plan
from taskmix.synthetic import synthetic_corpus
from taskmix.validate import validate_plan

manifest, store = synthetic_corpus(5000, seed=1)
codebook = build_codebook(manifest, store, k=40, subset_fraction=0.03, seed=1)
M, STEPS = 128, 60


def mix(batch):
    counts = Counter(it.task.value for it in batch.items)
    return " ".join(f"{t}={counts[t]:3d}" for t in ("asr", "did", "ser", "tsum", "ssum"))


# %% one plan per regime. SM draws uniformly, so rare SER labels come and go;
# ADS fixes the task mix and shows every label in every batch
for regime in ("SM", "TPC", "ADS", "HYBRID"):
    cfg = RegimeConfig(regime, M, STEPS, seed=3)
    plan = make_plan(manifest, cfg, codebook)
    print(f"\n{regime}: {len(validate_plan(plan, manifest, cfg, codebook))} violations")
    for step in (0, 25, 45, 59):
        b = plan[step]
        print(f"  step {step:2d} [{b.regime.value}/{b.stage or '-'}] {mix(b)}  SER labels={len({it.label for it in b.items if it.task.value == 'ser'})}")

# %% ADS quotas: task share by prior, then an equal split over labels
quotas = ads_quotas(manifest, M)
print("\nADS quota for SER labels:", {label: n for (task, label), n in quotas.items() if task.value == "ser"})
print("quota total:", sum(quotas.values()))

# %% the matching learning-rate schedule
lr_cfg = LrScheduleConfig(epoch1_steps=epoch_steps(len(manifest), M), total_steps=STEPS)
print("\nwarmup steps:", lr_cfg.warmup_steps)
print("lr:", [f"{lr_at(s, lr_cfg):.2e}" for s in (0, lr_cfg.warmup_steps - 1, 30, STEPS - 1)])
