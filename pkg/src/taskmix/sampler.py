"""Batch-plan generation for stochastic mixing, task curriculum, diverse sampling and hybrid regimes."""

from __future__ import annotations

import hashlib
import json
import zlib
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from . import __version__
from .apportion import largest_remainder
from .codebook import Codebook, CodebookError
from .manifest import TASK_ORDER, Manifest, SampleRecord, Task, task_prior


class Regime(str, Enum):
    SM = "SM"
    TPC = "TPC"
    ADS = "ADS"
    HYBRID = "HYBRID"

    @classmethod
    def parse(cls, value: "str | Regime") -> "Regime":
        if isinstance(value, Regime):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ConfigError(f"unknown regime {value!r}; expected one of SM, TPC, ADS, HYBRID") from None


class ConfigError(ValueError):
    pass


class PlanError(ValueError):
    pass


DEFAULT_REPLAY_FRACTION = 0.2
PRIOR_MODES = ("sample_count", "duration")
LABEL_MODES = ("balanced", "prior")

DEFAULT_STAGE_GROUPS: tuple[tuple[str, tuple[Task, ...]], ...] = (
    ("acoustic", (Task.ASR,)),
    ("paralinguistic", (Task.DID, Task.SER)),
    ("reasoning", (Task.TSUM, Task.SSUM)),
)
DEFAULT_STAGE_SPLIT = (0.4, 0.3, 0.3)


@dataclass(frozen=True)
class CurriculumStage:
    name: str
    active_tasks: frozenset
    start: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, "active_tasks", frozenset(Task.parse(t) for t in self.active_tasks))

    def contains(self, step: int) -> bool:
        return self.start <= step < self.end

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tasks": [t.value for t in TASK_ORDER if t in self.active_tasks],
            "start": self.start,
            "end": self.end,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CurriculumStage":
        unknown = set(payload) - {"name", "tasks", "start", "end"}
        if unknown:
            raise ConfigError(f"unknown stage keys {sorted(unknown)}")
        try:
            return cls(
                name=str(payload["name"]),
                active_tasks=frozenset(payload["tasks"]),
                start=int(payload["start"]),
                end=int(payload["end"]),
            )
        except KeyError as exc:
            raise ConfigError(f"stage is missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def default_stages(horizon: int, tasks: Iterable[Task] | None = None) -> tuple[CurriculumStage, ...]:
    """Acoustic -> paralinguistic -> reasoning, split 40/30/30 over ``horizon`` steps.

    Groups with none of ``tasks`` are dropped and their share is redistributed.
    """
    present = set(TASK_ORDER if tasks is None else tasks)
    groups = []
    for (name, group), share in zip(DEFAULT_STAGE_GROUPS, DEFAULT_STAGE_SPLIT):
        active = [t for t in group if t in present]
        if active:
            groups.append((name, active, share))
    lengths = largest_remainder(horizon, [g[2] for g in groups])
    stages, start = [], 0
    for (name, active, _), length in zip(groups, lengths):
        stages.append(CurriculumStage(name, frozenset(active), start, start + length))
        start += length
    return tuple(stages)


@dataclass(frozen=True)
class RegimeConfig:
    regime: Regime
    batch_size: int
    total_steps: int
    seed: int = 0
    stages: tuple[CurriculumStage, ...] = ()
    replay_fraction: float = DEFAULT_REPLAY_FRACTION
    switch_step: int | None = None
    prior_mode: str = "sample_count"
    label_mode: str = "balanced"

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.regime is Regime.HYBRID and self.switch_step is None:
            object.__setattr__(self, "switch_step", self.total_steps // 2)
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "total_steps", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be positive, got {self.total_steps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not (0.0 <= self.replay_fraction < 1.0):
            raise ConfigError(f"replay_fraction must lie in [0, 1), got {self.replay_fraction}")
        if self.prior_mode not in PRIOR_MODES:
            raise ConfigError(f"prior_mode must be one of {PRIOR_MODES}, got {self.prior_mode!r}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}, got {self.label_mode!r}")
        if self.regime is Regime.HYBRID:
            # the endpoints are accepted so the hybrid degenerates to pure ADS / pure TPC
            if not 0 <= self.switch_step <= self.total_steps:
                raise ConfigError(
                    f"switch_step must lie in [0, {self.total_steps}], got {self.switch_step}"
                )
        elif self.switch_step is not None:
            raise ConfigError("switch_step only applies to the HYBRID regime")
        if self.stages:
            if self.regime not in (Regime.TPC, Regime.HYBRID):
                raise ConfigError(f"stages do not apply to the {self.regime.value} regime")
            check_stages(self.stages, self.curriculum_horizon)

    @property
    def curriculum_horizon(self) -> int:
        if self.regime is Regime.HYBRID:
            return int(self.switch_step)
        if self.regime is Regime.TPC:
            return self.total_steps
        return 0

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "batch_size": int(self.batch_size),
            "total_steps": int(self.total_steps),
            "seed": int(self.seed),
            "stages": [s.to_dict() for s in self.stages],
            "replay_fraction": self.replay_fraction,
            "switch_step": self.switch_step,
            "prior_mode": self.prior_mode,
            "label_mode": self.label_mode,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RegimeConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        for key in ("regime", "batch_size", "total_steps"):
            if key not in payload:
                raise ConfigError(f"config is missing required key {key!r}")
        kwargs = dict(payload)
        kwargs["stages"] = tuple(CurriculumStage.from_dict(s) for s in payload.get("stages") or ())
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path) -> RegimeConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return RegimeConfig.from_dict(payload)


def save_config(config: RegimeConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def check_stages(stages: Sequence[CurriculumStage], horizon: int) -> None:
    if not stages:
        if horizon:
            raise ConfigError("no curriculum stages cover the curriculum horizon")
        return
    expected = 0
    introduced: set[Task] = set()
    for s in stages:
        if not s.active_tasks:
            raise ConfigError(f"stage {s.name!r} has no active tasks")
        if s.start != expected or s.end < s.start:
            raise ConfigError(
                f"stage {s.name!r} covers [{s.start}, {s.end}) but must start at {expected}; "
                f"stage ranges must partition [0, {horizon})"
            )
        overlap = introduced & s.active_tasks
        if overlap:
            names = ", ".join(sorted(t.name for t in overlap))
            raise ConfigError(f"stage {s.name!r} re-introduces {names}; earlier tasks are replayed, not re-listed")
        introduced |= s.active_tasks
        expected = s.end
    if expected != horizon:
        raise ConfigError(f"stages end at step {expected} but the curriculum horizon is {horizon}")


def resolve_stages(config: RegimeConfig, manifest: Manifest | None = None) -> tuple[CurriculumStage, ...]:
    """Configured stages, or the default three-group layout over the tasks present."""
    horizon = config.curriculum_horizon
    if config.stages:
        stages = config.stages
    else:
        stages = default_stages(horizon, manifest.tasks() if manifest is not None else None)
    check_stages(stages, horizon)
    if manifest is not None:
        covered = set().union(*(s.active_tasks for s in stages)) if stages else set()
        missing = [t.name for t in manifest.tasks() if t not in covered]
        if missing and horizon:
            raise ConfigError(f"tasks {missing} appear in the manifest but in no curriculum stage")
    return stages


def stage_for_step(config: RegimeConfig | Sequence[CurriculumStage], step: int) -> CurriculumStage:
    stages = resolve_stages(config) if isinstance(config, RegimeConfig) else tuple(config)
    for s in stages:
        if s.contains(step):
            return s
    horizon = stages[-1].end if stages else 0
    raise PlanError(f"step {step} lies outside the curriculum horizon [0, {horizon})")


def introduced_before(stages: Sequence[CurriculumStage], stage: CurriculumStage) -> frozenset:
    earlier: set[Task] = set()
    for s in stages:
        if s is stage or s == stage:
            break
        earlier |= s.active_tasks
    return frozenset(earlier)


# ------------------------------------------------------------------- plans


class PlanItem(NamedTuple):
    id: str
    task: Task
    label: str
    cluster: int | None

    def to_dict(self) -> dict:
        return {"id": self.id, "task": self.task.value, "label": self.label, "cluster": self.cluster}


@dataclass(frozen=True)
class Batch:
    step: int
    regime: Regime
    stage: str | None
    items: tuple[PlanItem, ...]
    lr: float | None = None

    def to_dict(self) -> dict:
        out = {
            "step": self.step,
            "regime": self.regime.value,
            "stage": self.stage,
            "items": [it.to_dict() for it in self.items],
        }
        if self.lr is not None:
            out["lr"] = self.lr
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "Batch":
        items = tuple(
            PlanItem(str(it["id"]), Task.parse(it["task"]), str(it["label"]), it.get("cluster"))
            for it in payload["items"]
        )
        return cls(
            step=int(payload["step"]),
            regime=Regime.parse(payload["regime"]),
            stage=payload.get("stage"),
            items=items,
            lr=payload.get("lr"),
        )


@dataclass
class BatchPlan:
    batches: list[Batch]
    header: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self) -> Iterator[Batch]:
        return iter(self.batches)

    def __getitem__(self, i: int) -> Batch:
        return self.batches[i]

    def body(self) -> str:
        """Batch lines only, without the provenance header."""
        return "".join(
            json.dumps(b.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
            for b in self.batches
        )

    def dumps(self) -> str:
        head = ""
        if self.header:
            head = json.dumps({"header": self.header}, sort_keys=True, separators=(",", ":")) + "\n"
        return head + self.body()

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "BatchPlan":
        header: dict = {}
        batches = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                if "header" in payload and line_no == 1:
                    header = payload["header"]
                    continue
                batches.append(Batch.from_dict(payload))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PlanError(f"plan line {line_no}: cannot parse batch ({exc})") from None
        return cls(batches=batches, header=header)

    @classmethod
    def load(cls, path: str | Path) -> "BatchPlan":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def with_lr(self, lr_fn) -> "BatchPlan":
        return BatchPlan([replace(b, lr=lr_fn(b.step)) for b in self.batches], dict(self.header))


def provenance(config: RegimeConfig) -> dict:
    return {
        "tool": "taskmix",
        "version": __version__,
        "regime": config.regime.value,
        "seed": int(config.seed),
        "config_hash": config.config_hash(),
    }


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Independent generator for one batch, so any step can be regenerated alone."""
    return np.random.default_rng([int(seed), int(step)])


def _item(sample: SampleRecord, cluster: int | None = None) -> PlanItem:
    return PlanItem(sample.id, sample.task, sample.group_label, cluster)


def plan_sm(manifest: Manifest, config: RegimeConfig) -> BatchPlan:
    """Every item drawn uniformly, with replacement, from the whole corpus."""
    if config.regime is not Regime.SM:
        raise ConfigError(f"plan_sm needs an SM config, got {config.regime.value}")
    samples = manifest.samples
    n = len(samples)
    batches = []
    for step in range(config.total_steps):
        idx = step_rng(config.seed, step).integers(0, n, size=config.batch_size)
        items = tuple(_item(samples[i]) for i in idx)
        batches.append(Batch(step, Regime.SM, None, items))
    return BatchPlan(batches, provenance(config))


class _TaskPools:
    def __init__(self, manifest: Manifest):
        self.by_task: dict[Task, list[SampleRecord]] = defaultdict(list)
        for s in manifest:
            self.by_task[s.task].append(s)

    def union(self, tasks: Iterable[Task]) -> list[SampleRecord]:
        wanted = set(tasks)
        return [s for t in TASK_ORDER if t in wanted for s in self.by_task.get(t, ())]


def _tpc_batches(manifest: Manifest, config: RegimeConfig, stop: int) -> list[Batch]:
    stages = resolve_stages(config, manifest)
    pools = _TaskPools(manifest)
    current_pool, replay_pool = {}, {}
    for stage in stages:
        current = pools.union(stage.active_tasks)
        if not current:
            names = ", ".join(sorted(t.name for t in stage.active_tasks))
            raise PlanError(f"stage {stage.name!r} has no samples for its active tasks ({names})")
        current_pool[stage.name] = current
        replay_pool[stage.name] = pools.union(introduced_before(stages, stage))

    m, rho = config.batch_size, config.replay_fraction
    batches = []
    for step in range(stop):
        stage = stage_for_step(stages, step)
        cur, rep = current_pool[stage.name], replay_pool[stage.name]
        rng = step_rng(config.seed, step)
        from_replay = rng.random(m) < rho
        if not rep:
            from_replay[:] = False
        n_rep = int(from_replay.sum())
        rep_idx = rng.integers(0, max(len(rep), 1), size=n_rep)
        cur_idx = rng.integers(0, len(cur), size=m - n_rep)
        items, ri, ci = [], iter(rep_idx), iter(cur_idx)
        for is_replay in from_replay:
            sample = rep[next(ri)] if is_replay else cur[next(ci)]
            items.append(_item(sample))
        batches.append(Batch(step, Regime.TPC, stage.name, tuple(items)))
    return batches


def plan_tpc(manifest: Manifest, config: RegimeConfig) -> BatchPlan:
    """Staged curriculum; later stages replay earlier tasks with probability ``replay_fraction`` per item."""
    if config.regime is not Regime.TPC:
        raise ConfigError(f"plan_tpc needs a TPC config, got {config.regime.value}")
    return BatchPlan(_tpc_batches(manifest, config, config.total_steps), provenance(config))


# ---------------------------------------------------------------------- ADS

GroupKey = tuple  # (Task, label)


def group_weights(manifest: Manifest, prior_mode: str) -> dict[Task, dict[str, float]]:
    weights: dict[Task, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for s in manifest:
        weights[s.task][s.group_label] += 1.0 if prior_mode == "sample_count" else float(s.duration_s)
    return {t: dict(sorted(weights[t].items())) for t in TASK_ORDER if t in weights}


def ads_quotas(
    manifest: Manifest,
    batch_size: int,
    prior_mode: str = "sample_count",
    label_mode: str = "balanced",
) -> dict[GroupKey, int]:
    """Per-(task, label) item counts for one batch; they sum to ``batch_size`` exactly.

    Tasks get ``batch_size`` in proportion to their corpus prior. Discriminative
    tasks split their share equally over their labels (or by label prior with
    ``label_mode="prior"``); generative tasks split over languages by prior.
    Every group receives at least one slot.
    """
    if prior_mode not in PRIOR_MODES:
        raise ConfigError(f"prior_mode must be one of {PRIOR_MODES}, got {prior_mode!r}")
    if label_mode not in LABEL_MODES:
        raise ConfigError(f"label_mode must be one of {LABEL_MODES}, got {label_mode!r}")
    weights = group_weights(manifest, prior_mode)
    n_groups = sum(len(v) for v in weights.values())
    if batch_size < n_groups:
        raise PlanError(
            f"batch size {batch_size} cannot cover the {n_groups} (task, label) groups; "
            f"every group needs at least one slot per batch"
        )
    tasks = list(weights)
    prior = task_prior(manifest, prior_mode)
    per_task = largest_remainder(
        batch_size, [prior[t] for t in tasks], minimum=[len(weights[t]) for t in tasks]
    )
    quotas: dict[GroupKey, int] = {}
    for task, n_t in zip(tasks, per_task):
        labels = list(weights[task])
        if task.discriminative and label_mode == "balanced":
            split = largest_remainder(n_t, [1] * len(labels), minimum=1)
        else:
            split = largest_remainder(n_t, [weights[task][l] for l in labels], minimum=1)
        for label, q in zip(labels, split):
            quotas[(task, label)] = q
    return quotas


def _stream_key(task: Task, label: str) -> int:
    return zlib.crc32(f"{task.value}\x1f{label}".encode("utf-8"))


class GroupCursor:
    """Round-robin over one group's clusters, each holding a seeded-shuffled pool of samples."""

    def __init__(self, members: dict[int, list[str]], seed: int, stream: int):
        if not members:
            raise PlanError("cannot traverse an empty group")
        self.clusters = sorted(members)
        self._members = [list(members[c]) for c in self.clusters]
        self._seed = seed
        self._stream = stream
        self.epoch = -1
        self.cursor = 0
        self._reshuffle()

    def _reshuffle(self) -> None:
        self.epoch += 1
        rng = np.random.default_rng([self._seed, self._stream, self.epoch])
        self._pools = [[m[i] for i in rng.permutation(len(m))] for m in self._members]
        self._pos = [0] * len(self._pools)

    def pick(self) -> tuple[str, int]:
        n = len(self.clusters)
        for _ in range(2):
            for offset in range(n):
                ci = (self.cursor + offset) % n
                if self._pos[ci] < len(self._pools[ci]):
                    sample_id = self._pools[ci][self._pos[ci]]
                    self._pos[ci] += 1
                    self.cursor = (ci + 1) % n
                    return sample_id, self.clusters[ci]
            self._reshuffle()
        raise AssertionError("unreachable: a fresh epoch always has a sample")


class RoundRobinState:
    """Traversal state for every (task, label) group of a manifest."""

    def __init__(self, manifest: Manifest, codebook: Codebook, seed: int):
        grouped: dict[GroupKey, dict[int, list[str]]] = defaultdict(lambda: defaultdict(list))
        for s in manifest:
            try:
                cluster = codebook.cluster_of(s.id)
            except CodebookError as exc:
                raise PlanError(str(exc)) from None
            grouped[(s.task, s.group_label)][cluster].append(s.id)
        self.seed = seed
        self._groups = {
            key: GroupCursor(dict(members), seed, _stream_key(*key))
            for key, members in grouped.items()
        }

    def cursor(self, task: Task, label: str) -> GroupCursor:
        try:
            return self._groups[(Task.parse(task), label)]
        except KeyError:
            raise PlanError(f"group ({Task.parse(task).name}, {label}) has no samples") from None

    def pick(self, task: Task, label: str) -> tuple[str, int]:
        return self.cursor(task, label).pick()


def round_robin_pick(state: RoundRobinState, task: Task | str, label: str) -> tuple[str, int]:
    return state.pick(Task.parse(task), label)


def _ads_batches(
    manifest: Manifest, codebook: Codebook, config: RegimeConfig, start: int, stop: int
) -> list[Batch]:
    quotas = ads_quotas(manifest, config.batch_size, config.prior_mode, config.label_mode)
    state = RoundRobinState(manifest, codebook, config.seed)
    batches = []
    for step in range(start, stop):
        items = []
        for (task, label), quota in quotas.items():
            cursor = state.cursor(task, label)
            for _ in range(quota):
                sample_id, cluster = cursor.pick()
                items.append(PlanItem(sample_id, task, label, cluster))
        batches.append(Batch(step, Regime.ADS, None, tuple(items)))
    return batches


def plan_ads(manifest: Manifest, codebook: Codebook, config: RegimeConfig) -> BatchPlan:
    """Quota-exact batches; each group's slots come from a round-robin over its clusters.

    Groups whose quota outruns their unique samples simply keep cycling, which
    repeats minority samples within a batch.
    """
    if config.regime is not Regime.ADS:
        raise ConfigError(f"plan_ads needs an ADS config, got {config.regime.value}")
    return BatchPlan(_ads_batches(manifest, codebook, config, 0, config.total_steps), provenance(config))


def plan_hybrid(manifest: Manifest, codebook: Codebook, config: RegimeConfig) -> BatchPlan:
    """Curriculum batches before ``switch_step``, diverse-sampling batches from it on."""
    if config.regime is not Regime.HYBRID:
        raise ConfigError(f"plan_hybrid needs a HYBRID config, got {config.regime.value}")
    switch = int(config.switch_step)
    batches = _tpc_batches(manifest, config, switch) if switch else []
    if switch < config.total_steps:
        batches += _ads_batches(manifest, codebook, config, switch, config.total_steps)
    return BatchPlan(batches, provenance(config))


def make_plan(manifest: Manifest, config: RegimeConfig, codebook: Codebook | None = None) -> BatchPlan:
    if config.regime is Regime.SM:
        return plan_sm(manifest, config)
    if config.regime is Regime.TPC:
        return plan_tpc(manifest, config)
    if codebook is None:
        raise PlanError(f"the {config.regime.value} regime needs a codebook")
    if config.regime is Regime.ADS:
        return plan_ads(manifest, codebook, config)
    return plan_hybrid(manifest, codebook, config)
