"""Evaluation helpers on a handful of hand-written outputs.

Run: python3 demos/03_metrics.py
"""

from taskmix.manifest import Task
from taskmix.metrics import canonicalize_label, normalize_arabic, quality_gate, rouge_l_scores, wer, weighted_f1

# %% Arabic normalization folds hamza forms and drops diacritics before WER
ref, hyp = "ذَهَبَ أَحْمَدُ إِلى المدرسة", "ذهب احمد الى مدرسة"
print(normalize_arabic(ref))
r = wer(ref, hyp, lang="ar")
print(f"WER={r.rate:.3f}  S={r.substitutions} I={r.insertions} D={r.deletions}")

# English: lowercased by default, punctuation kept unless asked
print(wer("The cat sat.", "the cat sat").rate, wer("The cat sat.", "the cat sat", strip_punct=True).rate)

# %% free-form classifier answers become canonical labels or INVALID
for raw in ("KSA", '{"dialect": "egyptian"}', "```json\n{\"dialect\": \"MSA\"}\n```", "somewhere in the gulf"):
    print(f"{raw!r:40} -> {canonicalize_label(raw, Task.DID)}")

gold = ["Egypt", "Egypt", "Egypt", "Iraq"]
raw = ["Egyptian", "masri", "Iraqi", "iraq"]
pred = [canonicalize_label(x, Task.DID) for x in raw]
print("weighted F1:", round(weighted_f1(list(zip(gold, pred)), Task.DID.label_set).score, 4))

# %% ROUGE-L on a summary pair
s = rouge_l_scores("the meeting moved to friday afternoon", "meeting moved to friday")
print(f"ROUGE-L P={s.precision:.2f} R={s.recall:.2f} F1={s.f1:.2f}")

# %% synthesis quality gate: keep the best candidate strictly under 15% WER
candidates = {
    "pair-01": [("pair-01/v1", 0.21), ("pair-01/v2", 0.1499)],
    "pair-02": [("pair-02/v1", 0.15), ("pair-02/v2", 0.40)],
}
print("kept:", quality_gate(candidates))
