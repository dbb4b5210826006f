"""Synthetic manifests and frame embeddings for tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .codebook import write_embedding
from .manifest import DID_LABELS, SER_LABELS, Manifest, SampleRecord, Task, write_manifest

# rough task mix of a speech instruction corpus: ASR-heavy, small classification sets
DEFAULT_MIX = {Task.ASR: 0.55, Task.DID: 0.15, Task.SER: 0.08, Task.TSUM: 0.10, Task.SSUM: 0.12}


def synthetic_corpus(
    n: int,
    seed: int = 0,
    dim: int = 16,
    mix: dict[Task, float] | None = None,
    max_frames: int = 6,
    label_skew: float = 1.5,
) -> tuple[Manifest, dict[str, np.ndarray]]:
    """Manifest of ``n`` samples plus an in-memory embedding store.

    Labels follow a Zipf-like skew so classification tasks are imbalanced, and
    every (task, label) group gets its own embedding center.
    """
    rng = np.random.default_rng(seed)
    mix = mix or DEFAULT_MIX
    tasks = list(mix)
    counts = np.floor(np.array([mix[t] for t in tasks]) / sum(mix.values()) * n).astype(int)
    counts[0] += n - counts.sum()

    samples: list[SampleRecord] = []
    store: dict[str, np.ndarray] = {}
    centers: dict[tuple, np.ndarray] = {}
    for task, count in zip(tasks, counts):
        if task.discriminative:
            labels = DID_LABELS if task is Task.DID else SER_LABELS
            w = 1.0 / np.arange(1, len(labels) + 1) ** label_skew
            # every label present at least once
            picks = list(range(len(labels))) + list(rng.choice(len(labels), size=max(0, count - len(labels)), p=w / w.sum()))
            picks = picks[:count]
        for j in range(count):
            label = labels[picks[j]] if task.discriminative else None
            lang = "ar" if task.discriminative or rng.random() < 0.6 else "en"
            key = (task, label or lang)
            if key not in centers:
                centers[key] = rng.normal(scale=4.0, size=dim)
            sid = f"{task.value}-{j:06d}"
            ref = f"{task.value}/{sid}.bin"
            frames = centers[key] + rng.normal(size=(int(rng.integers(1, max_frames + 1)), dim))
            store[ref] = frames.astype(np.float32)
            samples.append(
                SampleRecord(
                    id=sid,
                    task=task,
                    label=label,
                    lang=lang,
                    duration_s=float(np.round(rng.uniform(1.0, 180.0), 3)),
                    embedding_ref=ref,
                    text=None if task.discriminative else f"text {sid}",
                )
            )
    return Manifest(tuple(samples), source_path="<synthetic>"), store


def write_corpus(manifest: Manifest, store: dict[str, np.ndarray], root: str | Path) -> tuple[Path, Path]:
    """Write ``manifest.jsonl`` and an ``embeddings/`` tree under ``root``."""
    root = Path(root)
    emb_dir = root / "embeddings"
    for s in manifest:
        write_embedding(emb_dir / s.embedding_ref, store[s.embedding_ref])
    manifest_path = root / "manifest.jsonl"
    write_manifest(manifest.samples, manifest_path)
    return manifest_path, emb_dir
