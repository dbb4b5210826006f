"""Evaluation metrics: WER with Arabic normalization, weighted F1 with label canonicalization, ROUGE-L."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .manifest import LANGS, Task

INVALID = "INVALID"
DEFAULT_GATE_THRESHOLD = 0.15

# hamza-above, hamza-below and madda forms of Alef
_ALEF_VARIANTS = str.maketrans({"\u0623": "\u0627", "\u0625": "\u0627", "\u0622": "\u0627"})
# fathatan .. sukun, and superscript Alef
_ARABIC_MARKS = re.compile("[\u064b-\u0652\u0670]")


def normalize_arabic(text: str) -> str:
    """Fold hamza/madda Alef forms to bare Alef, drop diacritics, squeeze whitespace."""
    text = _ARABIC_MARKS.sub("", text.translate(_ALEF_VARIANTS))
    return " ".join(text.split())


def _strip_punct(text: str) -> str:
    return "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)


def tokenize(text: str, lang: str = "en", lowercase: bool = True, strip_punct: bool = False) -> list[str]:
    if lang == "ar":
        text = normalize_arabic(text)
    if lowercase:
        text = text.lower()
    if strip_punct:
        text = _strip_punct(text)
    return text.split()


# ---------------------------------------------------------------------- WER


class WerResult(NamedTuple):
    rate: float
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def edit_ops(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of one minimum-cost alignment, unit costs."""
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    rows = [prev]
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            cur[j] = min(
                prev[j - 1] + (r != hyp[j - 1]),
                prev[j] + 1,
                cur[j - 1] + 1,
            )
        rows.append(cur)
        prev = cur

    s = ins = dels = 0
    i, j = n, m
    while i or j:
        here = rows[i][j]
        if i and j and here == rows[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and here == rows[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, ins, dels


def wer(
    reference: str,
    hypothesis: str,
    lang: str = "en",
    lowercase: bool = True,
    strip_punct: bool = False,
) -> WerResult:
    ref = tokenize(reference, lang, lowercase, strip_punct)
    if not ref:
        raise ValueError("reference is empty after normalization")
    hyp = tokenize(hypothesis, lang, lowercase, strip_punct)
    s, i, d = edit_ops(ref, hyp)
    return WerResult((s + i + d) / len(ref), s, i, d, len(ref))


# ------------------------------------------------------------------ reports


@dataclass
class MetricReport:
    metric: str
    score: float
    counts: dict = field(default_factory=dict)
    items: list = field(default_factory=list)

    def to_dict(self, detail: bool = False) -> dict:
        out = {"metric": self.metric, "score": self.score, "counts": self.counts}
        if detail:
            out["items"] = self.items
        return out


@dataclass(frozen=True)
class EvalPair:
    id: str
    reference: str
    hypothesis: str
    task: Task
    lang: str

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalPair":
        missing = [k for k in ("id", "reference", "hypothesis", "task", "lang") if k not in payload]
        if missing:
            raise ValueError(f"eval record {payload.get('id')!r} is missing keys {missing}")
        lang = payload["lang"]
        if lang not in LANGS:
            raise ValueError(f"eval record {payload['id']!r}: lang must be one of {LANGS}")
        return cls(
            id=str(payload["id"]),
            reference=str(payload["reference"]),
            hypothesis=str(payload["hypothesis"] or ""),
            task=Task.parse(payload["task"]),
            lang=lang,
        )


def load_eval_pairs(path: str | Path) -> list[EvalPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                pairs.append(EvalPair.from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValueError, AttributeError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    if not pairs:
        raise ValueError(f"{path}: no evaluation pairs")
    return pairs


def corpus_wer(pairs: Iterable[EvalPair], lowercase: bool = True, strip_punct: bool = False) -> MetricReport:
    """Corpus WER: total edits over total reference tokens."""
    totals = Counter()
    items = []
    for p in pairs:
        r = wer(p.reference, p.hypothesis, p.lang, lowercase, strip_punct)
        totals.update(substitutions=r.substitutions, insertions=r.insertions, deletions=r.deletions, ref_tokens=r.ref_len)
        items.append({"id": p.id, "wer": r.rate, "S": r.substitutions, "I": r.insertions, "D": r.deletions, "ref_len": r.ref_len})
    if not items:
        raise ValueError("no pairs to score")
    errors = totals["substitutions"] + totals["insertions"] + totals["deletions"]
    counts = {k: totals[k] for k in ("substitutions", "insertions", "deletions", "ref_tokens")}
    return MetricReport("wer", errors / totals["ref_tokens"], counts, items)


# ------------------------------------------------------- label canonicalizing


def _alias_key(text: str) -> str:
    return "".join(ch for ch in text.casefold() if ch.isalnum())


@dataclass(frozen=True)
class AliasTable:
    entries: Mapping[tuple[Task, str], str]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "AliasTable":
        entries: dict[tuple[Task, str], str] = {}
        for task in (Task.DID, Task.SER):
            for label in task.label_set:
                entries[(task, _alias_key(label))] = label
        for line_no, line in enumerate(lines, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"alias table line {line_no}: expected variant<TAB>canonical<TAB>task")
            variant, canonical, task_name = parts
            task = Task.parse(task_name)
            if canonical not in task.label_set:
                raise ValueError(f"alias table line {line_no}: {canonical!r} is not a {task.name} label")
            key = (task, _alias_key(variant))
            if entries.get(key, canonical) != canonical:
                raise ValueError(f"alias table line {line_no}: {variant!r} maps to two labels")
            entries[key] = canonical
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "AliasTable":
        with Path(path).open("r", encoding="utf-8") as f:
            return cls.from_lines(f)

    def lookup(self, value: str, task: Task) -> str:
        return self.entries.get((task, _alias_key(value)), INVALID)


@lru_cache(maxsize=1)
def default_alias_table() -> AliasTable:
    text = resources.files("taskmix").joinpath("data/aliases.tsv").read_text(encoding="utf-8")
    return AliasTable.from_lines(text.splitlines())


_FIELD_FOR_TASK = {Task.DID: "dialect", Task.SER: "emotion"}


def _extract_field(raw: str, task: Task) -> str:
    text = raw.strip()
    if text.startswith("```"):
        text = text.strip("`").strip()
        if text.lower().startswith("json"):
            text = text[4:].strip()
    if not text.startswith("{"):
        return text
    key = _FIELD_FOR_TASK[task]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        m = re.search(r'"%s"\s*:\s*"([^"]*)"' % key, text, flags=re.IGNORECASE)
        return m.group(1) if m else text
    if isinstance(obj, dict):
        lowered = {str(k).lower(): v for k, v in obj.items()}
        if key in lowered:
            return str(lowered[key])
        if len(obj) == 1:
            return str(next(iter(obj.values())))
    return text


def canonicalize_label(raw: str, task: Task | str, table: AliasTable | None = None) -> str:
    """Map a free-form or JSON-wrapped model answer onto a canonical label, or ``INVALID``."""
    task = Task.parse(task)
    if not task.discriminative:
        raise ValueError(f"canonicalize_label only applies to DID/SER, got {task.name}")
    table = table or default_alias_table()
    if raw is None:
        return INVALID
    return table.lookup(_extract_field(str(raw), task), task)


# ---------------------------------------------------------------- weighted F1


def weighted_f1(pairs: Sequence[tuple[str, str]], labels: Iterable[str]) -> MetricReport:
    """Support-weighted mean of per-class F1.

    Predictions outside ``labels`` (``INVALID`` included) count as a miss for
    the gold class and a false positive for nobody.
    """
    labels = list(dict.fromkeys(labels))
    label_set = set(labels)
    if not pairs:
        raise ValueError("weighted_f1 needs at least one pair")
    tp, fp, support = Counter(), Counter(), Counter()
    for gold, pred in pairs:
        if gold not in label_set:
            raise ValueError(f"gold label {gold!r} is not in the label set")
        support[gold] += 1
        if pred == gold:
            tp[gold] += 1
        elif pred in label_set:
            fp[pred] += 1
    total = sum(support.values())
    per_class = {}
    score = 0.0
    for label in labels:
        n_pred = tp[label] + fp[label]
        precision = tp[label] / n_pred if n_pred else 0.0
        recall = tp[label] / support[label] if support[label] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = {"precision": precision, "recall": recall, "f1": f1, "support": support[label]}
        if support[label]:
            score += f1 * support[label] / total
    invalid = sum(1 for _, p in pairs if p not in label_set)
    counts = {"n": total, "correct": sum(tp.values()), "invalid": invalid, "per_class": per_class}
    return MetricReport("weighted_f1", score, counts)


def corpus_weighted_f1(pairs: Iterable[EvalPair], table: AliasTable | None = None) -> MetricReport:
    pairs = list(pairs)
    tasks = {p.task for p in pairs}
    if len(tasks) != 1:
        raise ValueError(f"weighted F1 pairs must share one task, got {sorted(t.name for t in tasks)}")
    task = tasks.pop()
    scored = []
    items = []
    for p in pairs:
        gold = canonicalize_label(p.reference, task, table)
        if gold == INVALID:
            raise ValueError(f"pair {p.id!r}: gold label {p.reference!r} is not a {task.name} label")
        pred = canonicalize_label(p.hypothesis, task, table)
        scored.append((gold, pred))
        items.append({"id": p.id, "gold": gold, "pred": pred, "correct": gold == pred})
    report = weighted_f1(scored, task.label_set)
    report.items = items
    return report


# ------------------------------------------------------------------ ROUGE-L


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


class RougeResult(NamedTuple):
    precision: float
    recall: float
    f1: float
    lcs: int


def rouge_l_scores(reference: str, hypothesis: str, lang: str = "en", lowercase: bool = True) -> RougeResult:
    ref = tokenize(reference, lang, lowercase)
    hyp = tokenize(hypothesis, lang, lowercase)
    if not ref or not hyp:
        raise ValueError("ROUGE-L needs non-empty reference and hypothesis")
    lcs = lcs_length(ref, hyp)
    if lcs == 0:
        return RougeResult(0.0, 0.0, 0.0, 0)
    p, r = lcs / len(hyp), lcs / len(ref)
    return RougeResult(p, r, 2 * p * r / (p + r), lcs)


def rouge_l(reference: str, hypothesis: str, lang: str = "en", lowercase: bool = True) -> float:
    return rouge_l_scores(reference, hypothesis, lang, lowercase).f1


def corpus_rouge_l(pairs: Iterable[EvalPair], lowercase: bool = True) -> MetricReport:
    items = []
    for p in pairs:
        r = rouge_l_scores(p.reference, p.hypothesis, p.lang, lowercase)
        items.append({"id": p.id, "precision": r.precision, "recall": r.recall, "f1": r.f1, "lcs": r.lcs})
    if not items:
        raise ValueError("no pairs to score")
    score = math.fsum(it["f1"] for it in items) / len(items)
    return MetricReport("rouge_l", score, {"n": len(items)}, items)


# --------------------------------------------------------------- quality gate


def select_candidate(candidates: Iterable[tuple[str, float]], threshold: float = DEFAULT_GATE_THRESHOLD) -> str | None:
    """Lowest-WER candidate strictly under ``threshold`` (ties to the smallest id), else None."""
    best = None
    for cid, rate in candidates:
        if rate < 0 or math.isnan(rate):
            raise ValueError(f"candidate {cid!r} has invalid WER {rate}")
        if rate < threshold and (best is None or (rate, cid) < best):
            best = (rate, cid)
    return best[1] if best else None


def quality_gate(
    groups: Mapping[str, Iterable[tuple[str, float]]] | Iterable[tuple[str, float]],
    threshold: float = DEFAULT_GATE_THRESHOLD,
) -> list[str]:
    """Selected candidate ids, at most one per (transcription, summary) group.

    ``groups`` maps a group key to its ``(candidate_id, wer)`` list; a bare
    list of candidates is treated as a single group.
    """
    if not isinstance(groups, Mapping):
        groups = {"": list(groups)}
    selected = []
    for key in sorted(groups):
        pick = select_candidate(groups[key], threshold)
        if pick is not None:
            selected.append(pick)
    return selected


def group_by_task(pairs: Iterable[EvalPair]) -> dict[Task, list[EvalPair]]:
    out: dict[Task, list[EvalPair]] = defaultdict(list)
    for p in pairs:
        out[p.task].append(p)
    return dict(out)
