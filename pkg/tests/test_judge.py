import json

import pytest

from taskmix.judge import MissingFieldError, build_request, build_requests, template, write_requests


def test_summary_payload():
    req = build_request({"id": "p1", "lang": "ar", "reference": "ملخص", "hypothesis": "ملخص آخر"}, "summary")
    system, user = req["messages"]
    assert system["role"] == "system" and user["role"] == "user"
    assert system["content"].startswith("You are a reference-grounded summarization quality evaluator.")
    assert user["content"].startswith("Language: ar\nReference summary: ملخص\nPredicted summary: ملخص آخر")
    assert req["id"] == "p1" and req["kind"] == "summary"


def test_translation_payload_has_rules():
    req = build_request({"id": "t", "reference": "hello ###", "hypothesis": "مرحبا"}, "translation")
    system, user = req["messages"]
    assert "Evaluation Rules (STRICT):" in system["content"]
    assert "1. Ignore all anonymization tokens in English." in system["content"]
    assert user["content"].startswith("Arabic translation:\nمرحبا\n\nOriginal English source:\nhello ###")


def test_braces_in_text_survive():
    req = build_request({"id": "b", "lang": "en", "reference": "{x}", "hypothesis": "{}"}, "summary")
    assert "Reference summary: {x}\nPredicted summary: {}" in req["messages"][1]["content"]


def test_missing_field():
    with pytest.raises(MissingFieldError, match="predicted_summary"):
        build_request({"id": "m", "lang": "en", "reference": "r"}, "summary")


def test_unknown_kind():
    with pytest.raises(ValueError):
        template("poetry", "system")


def test_write_count(tmp_path):
    records = [{"id": str(i), "lang": "en", "reference": "r", "hypothesis": "h"} for i in range(5)]
    path = tmp_path / "req.jsonl"
    write_requests(build_requests(records, "summary"), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5
    assert [json.loads(l)["id"] for l in lines] == ["0", "1", "2", "3", "4"]
