import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taskmix.codebook import build_codebook  # noqa: E402
from taskmix.manifest import Manifest, SampleRecord, Task  # noqa: E402
from taskmix.synthetic import synthetic_corpus, write_corpus  # noqa: E402


def make_record(sid, task="asr", label=None, lang="ar", duration_s=5.0, ref=None, text=None):
    return SampleRecord(
        id=sid,
        task=Task.parse(task),
        label=label,
        lang=lang,
        duration_s=duration_s,
        embedding_ref=ref or f"{sid}.bin",
        text=text,
    )


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(600, seed=11)


@pytest.fixture(scope="session")
def small_codebook(small_corpus):
    manifest, store = small_corpus
    return build_codebook(manifest, store, k=12, subset_fraction=0.1, seed=5)


@pytest.fixture(scope="session")
def corpus_on_disk(tmp_path_factory, small_corpus):
    root = tmp_path_factory.mktemp("corpus")
    manifest, store = small_corpus
    manifest_path, emb_dir = write_corpus(manifest, store, root)
    return root, manifest_path, emb_dir


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def tiny_manifest():
    return Manifest(
        (
            make_record("a1", "asr"),
            make_record("d1", "did", "Egypt"),
            make_record("s1", "ser", "Anger"),
        )
    )
