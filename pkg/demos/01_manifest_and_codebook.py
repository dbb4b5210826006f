"""Walk through a synthetic manifest and the acoustic codebook built on it.

Run: python3 demos/01_manifest_and_codebook.py
"""

import numpy as np

from taskmix.codebook import build_codebook, pool
from taskmix.manifest import label_distribution, stratified_subset, summarize, task_prior
from taskmix.synthetic import synthetic_corpus

# %% a 5k-sample corpus: ASR-heavy, skewed DID/SER labels, 16-d fake aligner frames
manifest, store = synthetic_corpus(5000, seed=0, dim=16)
stats = summarize(manifest)
print("samples:", stats["total_samples"], " hours: %.1f" % stats["total_hours"])
for task, row in stats["tasks"].items():
    print(f"  {task:5s} {row['count']:5d} samples  {row['hours']:7.1f} h")

# %% task prior by count and by duration
for mode in ("sample_count", "duration"):
    prior = task_prior(manifest, mode)
    print(mode, {t.value: round(p, 3) for t, p in prior.items()})

# the dialect labels are long-tailed
did = label_distribution(manifest, "did")
print("DID head:", list(did.items())[:3], "... tail:", list(did.items())[-2:])

# %% pooling: each sample's frames collapse to one vector by a per-dimension max
frames = store[manifest.samples[0].embedding_ref]
print("frames", frames.shape, "-> pooled", pool(frames).shape)

# %% a 3% stratified subset keeps the task shares
subset = stratified_subset(manifest, 0.03, seed=0)
print("subset size:", len(subset), {t.value: sum(s.task is t for s in subset) for t in manifest.tasks()})

# %% the codebook: fit on the subset, then assign every sample
codebook = build_codebook(manifest, store, k=40, subset_fraction=0.03, seed=0)
sizes = np.bincount(list(codebook.assignment.values()), minlength=codebook.k)
print(f"K={codebook.k} iterations={codebook.iterations} inertia={codebook.inertia:.1f}")
print("cluster sizes: min", sizes.min(), "median", int(np.median(sizes)), "max", sizes.max())

# clusters mostly follow (task, label) because the fake embeddings were drawn that way
sid = manifest.samples[1234].id
print(sid, "->", codebook.cluster_of(sid))
