"""Dataset manifest: loading, validation, priors and stratified subsets."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .apportion import largest_remainder

MAX_DURATION_S = 180.0

DID_LABELS = (
    "Algeria",
    "Egypt",
    "Iraq",
    "Jordan",
    "Kuwait",
    "Lebanon",
    "Libya",
    "Mauritania",
    "Modern Standard Arabic",
    "Morocco",
    "Oman",
    "Palestine",
    "Qatar",
    "Saudi Arabia",
    "Sudan",
    "Syria",
    "United Arab Emirates",
    "Yemen",
)

SER_LABELS = (
    "Anger",
    "Fear",
    "Happiness",
    "Neutral",
    "Questioning",
    "Sadness",
    "Surprise",
)

MANIFEST_KEYS = ("id", "task", "label", "lang", "duration_s", "embedding_ref", "text")


class Task(str, Enum):
    ASR = "asr"
    DID = "did"
    SER = "ser"
    TSUM = "tsum"
    SSUM = "ssum"

    @property
    def discriminative(self) -> bool:
        return self in (Task.DID, Task.SER)

    @property
    def label_set(self) -> tuple[str, ...]:
        if self is Task.DID:
            return DID_LABELS
        if self is Task.SER:
            return SER_LABELS
        raise ValueError(f"task {self.name} is generative and has no label set")

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        if isinstance(value, Task):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown task {value!r}") from None


TASK_ORDER = tuple(Task)
LANGS = ("ar", "en")


class ManifestError(ValueError):
    """Base class for manifest problems."""


class ManifestParseError(ManifestError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class ManifestValidationError(ManifestError):
    def __init__(self, record_id: str | None, reason: str):
        where = f"record {record_id!r}: " if record_id is not None else ""
        super().__init__(where + reason)
        self.record_id = record_id


@dataclass(frozen=True)
class SampleRecord:
    id: str
    task: Task
    label: str | None
    lang: str
    duration_s: float
    embedding_ref: str
    text: str | None = None

    @property
    def group_label(self) -> str:
        """Label used for grouping; generative samples fall back to their language."""
        return self.label if self.label is not None else self.lang

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ManifestValidationError(None, "id must be a non-empty string")
        if not isinstance(self.task, Task):
            raise ManifestValidationError(self.id, f"unknown task {self.task!r}")
        if self.lang not in LANGS:
            raise ManifestValidationError(self.id, f"lang must be one of {LANGS}, got {self.lang!r}")
        d = self.duration_s
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not math.isfinite(d) or d < 0:
            raise ManifestValidationError(self.id, f"duration_s must be a non-negative number, got {d!r}")
        if d > MAX_DURATION_S:
            raise ManifestValidationError(
                self.id, f"duration_s={d} exceeds the {MAX_DURATION_S:g} s duration cap"
            )
        if self.task.discriminative:
            if self.label is None:
                raise ManifestValidationError(self.id, f"{self.task.name} record requires a label")
            if self.label not in self.task.label_set:
                raise ManifestValidationError(
                    self.id, f"label {self.label!r} is not a valid {self.task.name} label"
                )
        elif self.label is not None:
            raise ManifestValidationError(
                self.id, f"{self.task.name} is generative and must not carry a label"
            )
        if not isinstance(self.embedding_ref, str) or not self.embedding_ref:
            raise ManifestValidationError(self.id, "embedding_ref must be a non-empty string")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["task"] = self.task.value
        return {k: payload[k] for k in MANIFEST_KEYS}

    @classmethod
    def from_dict(cls, payload: dict) -> "SampleRecord":
        keys = set(payload)
        missing = [k for k in MANIFEST_KEYS if k not in keys and k not in ("label", "text")]
        extra = sorted(keys - set(MANIFEST_KEYS))
        rid = payload.get("id")
        if missing:
            raise ManifestValidationError(rid, f"missing keys {missing}")
        if extra:
            raise ManifestValidationError(rid, f"unexpected keys {extra}")
        try:
            task = Task.parse(payload["task"])
        except ValueError as exc:
            raise ManifestValidationError(rid, str(exc)) from None
        record = cls(
            id=rid,
            task=task,
            label=payload.get("label"),
            lang=payload["lang"],
            duration_s=payload["duration_s"],
            embedding_ref=payload["embedding_ref"],
            text=payload.get("text"),
        )
        record.validate()
        return record


@dataclass(frozen=True)
class Manifest:
    samples: tuple[SampleRecord, ...]
    source_path: str = "<memory>"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ManifestValidationError(None, "manifest is empty")
        seen: set[str] = set()
        for s in self.samples:
            s.validate()
            if s.id in seen:
                raise ManifestValidationError(s.id, "duplicate id")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def tasks(self) -> list[Task]:
        """Tasks present, in canonical order."""
        present = {s.task for s in self.samples}
        return [t for t in TASK_ORDER if t in present]

    def by_id(self) -> dict[str, SampleRecord]:
        return {s.id: s for s in self.samples}


def load_manifest(path: str | Path) -> Manifest:
    """Read a JSON Lines manifest. Blank lines are skipped."""
    path = Path(path)
    records: list[SampleRecord] = []
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(str(path), line_no, f"malformed JSON ({exc.msg})") from None
            if not isinstance(payload, dict):
                raise ManifestParseError(str(path), line_no, "record is not a JSON object")
            records.append(SampleRecord.from_dict(payload))
    return Manifest(tuple(records), source_path=str(path))


def dumps_manifest(samples: Iterable[SampleRecord]) -> str:
    return "".join(json.dumps(s.to_dict(), ensure_ascii=False) + "\n" for s in samples)


def write_manifest(samples: Iterable[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(samples), encoding="utf-8")


def _sample_weight(sample: SampleRecord, prior_mode: str) -> float:
    if prior_mode == "sample_count":
        return 1.0
    if prior_mode == "duration":
        return float(sample.duration_s)
    raise ValueError(f"prior_mode must be 'sample_count' or 'duration', got {prior_mode!r}")


def task_prior(manifest: Manifest, prior_mode: str = "sample_count") -> dict[Task, float]:
    """Per-task share of the corpus, by sample count (default) or by audio duration."""
    mass: dict[Task, float] = defaultdict(float)
    for s in manifest:
        mass[s.task] += _sample_weight(s, prior_mode)
    total = math.fsum(mass.values())
    if total <= 0:
        raise ValueError(f"manifest has zero total weight under prior_mode={prior_mode!r}")
    return {t: mass[t] / total for t in TASK_ORDER if t in mass}


def label_distribution(manifest: Manifest, task: Task | str) -> dict[str, int]:
    task = Task.parse(task)
    if not task.discriminative:
        raise ValueError(f"label_distribution is only defined for DID/SER, got {task.name}")
    counts = Counter(s.label for s in manifest if s.task is task)
    return dict(sorted(counts.items()))


def group_key(sample: SampleRecord) -> tuple[Task, str]:
    return sample.task, sample.group_label


def subset_size(fraction: float, n: int) -> int:
    # guard against 0.03 * N landing a hair above an integer
    return min(n, max(1, math.ceil(round(fraction * n, 9))))


def stratified_subset(manifest: Manifest, fraction: float, seed: int) -> Manifest:
    """Draw ceil(fraction * N) samples, apportioned over (task, label) strata.

    The budget is split across tasks first and then across each task's strata,
    both proportional to size by largest remainder, so task shares stay within
    one sample of exact. Inside a task whose share covers all of its strata,
    every stratum contributes at least one sample. The returned manifest keeps
    file order.
    """
    if not (0 < fraction <= 1):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(manifest)
    budget = subset_size(fraction, n)

    strata: dict[tuple[int, str], list[int]] = defaultdict(list)
    for idx, s in enumerate(manifest):
        strata[(TASK_ORDER.index(s.task), s.group_label)].append(idx)
    keys = sorted(strata)

    task_ids = sorted({k[0] for k in keys})
    task_keys = {t: [k for k in keys if k[0] == t] for t in task_ids}
    task_sizes = [sum(len(strata[k]) for k in task_keys[t]) for t in task_ids]
    task_alloc = largest_remainder(budget, task_sizes, capacity=task_sizes)

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for t, t_budget in zip(task_ids, task_alloc):
        sizes = [len(strata[k]) for k in task_keys[t]]
        floor = 1 if t_budget >= len(sizes) else 0
        alloc = largest_remainder(t_budget, sizes, minimum=floor, capacity=sizes)
        for key, take in zip(task_keys[t], alloc):
            members = strata[key]
            perm = rng.permutation(len(members))
            chosen.extend(members[i] for i in perm[:take])
    chosen.sort()
    return Manifest(tuple(manifest.samples[i] for i in chosen), source_path=manifest.source_path)


def summarize(manifest: Manifest) -> dict:
    """Per-task counts, hours and label histograms."""
    out: dict = {"total_samples": len(manifest), "tasks": {}}
    total_s = 0.0
    for task in manifest.tasks():
        rows = [s for s in manifest if s.task is task]
        secs = math.fsum(s.duration_s for s in rows)
        total_s += secs
        entry = {"count": len(rows), "hours": secs / 3600.0}
        if task.discriminative:
            entry["labels"] = label_distribution(manifest, task)
        else:
            entry["langs"] = dict(sorted(Counter(s.lang for s in rows).items()))
        out["tasks"][task.value] = entry
    out["total_hours"] = total_s / 3600.0
    return out

