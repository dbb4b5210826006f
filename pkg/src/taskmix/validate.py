"""Re-check a batch plan against the sampler invariants.

The checks are written against the plan file alone plus the manifest, config
and codebook; they do not reuse the generator's traversal objects.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

from .codebook import Codebook
from .manifest import Manifest, Task
from .sampler import (
    BatchPlan,
    ConfigError,
    PlanError,
    Regime,
    RegimeConfig,
    ads_quotas,
    introduced_before,
    resolve_stages,
)


@dataclass(frozen=True)
class Violation:
    check: str
    step: int | None
    detail: str

    def __str__(self) -> str:
        where = f"step {self.step}: " if self.step is not None else ""
        return f"{self.check} violation: {where}{self.detail}"


def round_robin_schedule(cluster_sizes: list[int], n: int) -> list[tuple[int, int]]:
    """Cluster slot and local epoch of each of ``n`` picks from clusters of the given sizes.

    The cursor visits clusters in order, skips any that are used up within the
    current epoch, and starts a new epoch once all of them are used up.
    """
    k = len(cluster_sizes)
    used = [0] * k
    cursor, epoch = 0, 0
    out = []
    for _ in range(n):
        if all(used[i] >= cluster_sizes[i] for i in range(k)):
            used = [0] * k
            epoch += 1
        i = cursor
        while used[i] >= cluster_sizes[i]:
            i = (i + 1) % k
        used[i] += 1
        out.append((i, epoch))
        cursor = (i + 1) % k
    return out


def sweep_visit_spread(sequence: list[int], cluster_sizes: list[int]) -> int:
    """Worst max-min gap in per-cluster visit counts along a round-robin sequence.

    Counts run within a local epoch and are compared over the clusters that
    still hold unused samples (plus the one just visited). A fair traversal
    never lets this gap exceed 1; skipping a live cluster pushes it to 2.
    """
    k = len(cluster_sizes)
    used = [0] * k
    worst = 0
    for slot in sequence:
        if all(used[i] >= cluster_sizes[i] for i in range(k)):
            used = [0] * k
        used[slot] += 1
        live = [used[i] for i in range(k) if used[i] < cluster_sizes[i] or i == slot]
        worst = max(worst, max(live) - min(live))
    return worst


def _check_shape(plan: BatchPlan, config: RegimeConfig, out: list[Violation]) -> None:
    if len(plan) != config.total_steps:
        out.append(Violation("step order", None, f"plan has {len(plan)} batches, config asks for {config.total_steps}"))
    for expected, batch in enumerate(plan):
        if batch.step != expected:
            out.append(Violation("step order", batch.step, f"expected step index {expected}"))
            return
        if len(batch.items) != config.batch_size:
            out.append(
                Violation("batch size", batch.step, f"{len(batch.items)} items, expected {config.batch_size}")
            )


def _check_items(plan: BatchPlan, manifest: Manifest, out: list[Violation]) -> None:
    records = manifest.by_id()
    for batch in plan:
        for item in batch.items:
            rec = records.get(item.id)
            if rec is None:
                out.append(Violation("unknown sample", batch.step, f"id {item.id!r} is not in the manifest"))
                return
            if rec.task is not item.task or rec.group_label != item.label:
                out.append(
                    Violation(
                        "item metadata",
                        batch.step,
                        f"{item.id!r} tagged ({item.task.name}, {item.label}) but manifest says "
                        f"({rec.task.name}, {rec.group_label})",
                    )
                )
                return


def _expected_regime(config: RegimeConfig, step: int) -> Regime:
    if config.regime is Regime.HYBRID:
        return Regime.TPC if step < config.switch_step else Regime.ADS
    return config.regime


def _check_tpc(plan, manifest, config, out) -> None:
    stages = resolve_stages(config, manifest)
    for batch in plan:
        if _expected_regime(config, batch.step) is not Regime.TPC:
            continue
        stage = next((s for s in stages if s.contains(batch.step)), None)
        if stage is None:
            out.append(Violation("stage containment", batch.step, "step lies outside every stage"))
            continue
        if batch.stage != stage.name:
            out.append(Violation("stage tag", batch.step, f"tagged {batch.stage!r}, expected {stage.name!r}"))
        allowed = stage.active_tasks | introduced_before(stages, stage)
        for item in batch.items:
            if item.task not in allowed:
                out.append(
                    Violation(
                        "stage containment",
                        batch.step,
                        f"{item.task.name} item {item.id!r} appears before its stage is introduced "
                        f"(stage {stage.name!r})",
                    )
                )
                break


def _check_ads(plan, manifest, config, codebook, out) -> None:
    ads_batches = [b for b in plan if _expected_regime(config, b.step) is Regime.ADS]
    if not ads_batches:
        return
    if codebook is None:
        out.append(Violation("codebook", None, f"{config.regime.value} plan checks need a codebook"))
        return
    quotas = ads_quotas(manifest, config.batch_size, config.prior_mode, config.label_mode)
    label_sets = defaultdict(set)
    for s in manifest:
        if s.task.discriminative:
            label_sets[s.task].add(s.label)

    # group -> cluster -> member ids, from the codebook alone
    members: dict[tuple, dict[int, set]] = defaultdict(lambda: defaultdict(set))
    for s in manifest:
        if s.id not in codebook.assignment:
            out.append(Violation("cluster assignment", None, f"{s.id!r} has no codebook assignment"))
            return
        members[(s.task, s.group_label)][codebook.assignment[s.id]].add(s.id)

    streams: dict[tuple, list] = defaultdict(list)
    for batch in ads_batches:
        counts = Counter((it.task, it.label) for it in batch.items)
        if counts != Counter(quotas):
            bad = sorted(set(counts) | set(quotas), key=lambda g: (list(Task).index(g[0]), g[1]))
            diffs = [f"({t.name}, {l}): {counts.get((t, l), 0)} vs quota {quotas.get((t, l), 0)}"
                     for t, l in bad if counts.get((t, l), 0) != quotas.get((t, l), 0)]
            out.append(Violation("quota", batch.step, "; ".join(diffs[:3])))
        for task, labels in label_sets.items():
            present = {it.label for it in batch.items if it.task is task}
            missing = labels - present
            if missing:
                out.append(
                    Violation("label coverage", batch.step, f"{task.name} labels missing: {sorted(missing)[:3]}")
                )
        for it in batch.items:
            if it.cluster != codebook.assignment.get(it.id):
                out.append(
                    Violation(
                        "cluster assignment",
                        batch.step,
                        f"{it.id!r} tagged cluster {it.cluster}, codebook says {codebook.assignment.get(it.id)}",
                    )
                )
                return
            streams[(it.task, it.label)].append((batch.step, it.id, it.cluster))

    for key, picks in streams.items():
        clusters = sorted(members[key])
        sizes = [len(members[key][c]) for c in clusters]
        schedule = round_robin_schedule(sizes, len(picks))
        seen: set = set()
        for (step, sid, cluster), (slot, epoch) in zip(picks, schedule):
            if cluster != clusters[slot]:
                out.append(
                    Violation(
                        "round-robin fairness",
                        step,
                        f"group ({key[0].name}, {key[1]}) visited cluster {cluster}, "
                        f"round-robin order expects {clusters[slot]}",
                    )
                )
                break
            if (epoch, sid) in seen:
                out.append(
                    Violation(
                        "round-robin fairness",
                        step,
                        f"{sid!r} repeated before its group's samples were exhausted",
                    )
                )
                break
            seen.add((epoch, sid))


def validate_plan(
    plan: BatchPlan,
    manifest: Manifest,
    config: RegimeConfig,
    codebook: Codebook | None = None,
) -> list[Violation]:
    """All invariant violations found in ``plan``; an empty list means the plan is valid."""
    out: list[Violation] = []
    _check_shape(plan, config, out)
    _check_items(plan, manifest, out)
    for batch in plan:
        expected = _expected_regime(config, batch.step)
        if batch.regime is not expected:
            out.append(Violation("regime tag", batch.step, f"tagged {batch.regime.value}, expected {expected.value}"))
            break
    try:
        if config.regime in (Regime.TPC, Regime.HYBRID):
            _check_tpc(plan, manifest, config, out)
        if config.regime in (Regime.ADS, Regime.HYBRID):
            _check_ads(plan, manifest, config, codebook, out)
    except (ConfigError, PlanError) as exc:
        out.append(Violation("config", None, str(exc)))
    return out
