"""Deterministic batch scheduling and evaluation for multi-task audio instruction tuning."""

__version__ = "0.1.0"

from .codebook import Codebook, EmbeddingDir, assign, build_codebook, kmeans, pool  # noqa: E402
from .manifest import Manifest, SampleRecord, Task, load_manifest, stratified_subset, task_prior  # noqa: E402
from .sampler import (  # noqa: E402
    BatchPlan,
    CurriculumStage,
    Regime,
    RegimeConfig,
    ads_quotas,
    make_plan,
    plan_ads,
    plan_hybrid,
    plan_sm,
    plan_tpc,
    stage_for_step,
)
from .validate import validate_plan  # noqa: E402

__all__ = [
    "BatchPlan",
    "Codebook",
    "CurriculumStage",
    "EmbeddingDir",
    "Manifest",
    "Regime",
    "RegimeConfig",
    "SampleRecord",
    "Task",
    "ads_quotas",
    "assign",
    "build_codebook",
    "kmeans",
    "load_manifest",
    "make_plan",
    "plan_ads",
    "plan_hybrid",
    "plan_sm",
    "plan_tpc",
    "pool",
    "stage_for_step",
    "stratified_subset",
    "task_prior",
    "validate_plan",
]
