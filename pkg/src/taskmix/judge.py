"""Request payloads for LLM-as-judge scoring. Nothing here talks to a model."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

KINDS = ("summary", "translation")

# payload field -> record keys accepted for it, in order of preference
_FIELDS = {
    "summary": {
        "language": ("language", "lang"),
        "reference_summary": ("reference_summary", "reference"),
        "predicted_summary": ("predicted_summary", "hypothesis"),
    },
    "translation": {
        "arabic_transcription": ("arabic_transcription", "hypothesis"),
        "english_transcription": ("english_transcription", "reference"),
    },
}


class MissingFieldError(ValueError):
    pass


@lru_cache(maxsize=None)
def template(kind: str, role: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown judge kind {kind!r}; expected one of {KINDS}")
    name = f"data/judge_{kind}_{role}.txt"
    return resources.files("taskmix").joinpath(name).read_text(encoding="utf-8")


def build_request(record: dict, kind: str) -> dict:
    values = {}
    for slot, keys in _FIELDS[kind].items():
        value = next((record[k] for k in keys if record.get(k) not in (None, "")), None)
        if value is None:
            raise MissingFieldError(
                f"record {record.get('id')!r} has none of {list(keys)} for {{{slot}}}"
            )
        values[slot] = str(value)
    return {
        "id": record.get("id"),
        "kind": kind,
        "messages": [
            {"role": "system", "content": template(kind, "system")},
            {"role": "user", "content": template(kind, "user").format(**values)},
        ],
    }


def build_requests(records: list[dict], kind: str) -> list[dict]:
    return [build_request(r, kind) for r in records]


def write_requests(requests: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for req in requests:
            f.write(json.dumps(req, ensure_ascii=False) + "\n")
