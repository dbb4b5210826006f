import json
from collections import Counter

import numpy as np
import pytest

from conftest import make_record
from taskmix.apportion import largest_remainder
from taskmix.codebook import Codebook
from taskmix.manifest import SER_LABELS, Manifest, Task
from taskmix.sampler import (
    BatchPlan,
    ConfigError,
    CurriculumStage,
    PlanError,
    Regime,
    RegimeConfig,
    RoundRobinState,
    ads_quotas,
    default_stages,
    load_config,
    make_plan,
    plan_ads,
    plan_hybrid,
    plan_sm,
    plan_tpc,
    round_robin_pick,
    save_config,
    stage_for_step,
)
from taskmix.validate import sweep_visit_spread, validate_plan


def codebook_for(manifest, clusters):
    """Codebook with hand-placed assignments; centroids are placeholders."""
    k = max(clusters.values()) + 1
    return Codebook(centroids=np.zeros((k, 1)), assignment=dict(clusters), seed=0, iterations=0)


def stages_3(b1, b2, total):
    return (
        CurriculumStage("acoustic", {Task.ASR}, 0, b1),
        CurriculumStage("paralinguistic", {Task.DID, Task.SER}, b1, b2),
        CurriculumStage("reasoning", {Task.TSUM, Task.SSUM}, b2, total),
    )


# ------------------------------------------------------------------ config


def test_default_stage_split():
    stages = default_stages(200)
    assert [(s.start, s.end) for s in stages] == [(0, 80), (80, 140), (140, 200)]
    assert stages[0].active_tasks == {Task.ASR}
    assert stages[-1].active_tasks == {Task.TSUM, Task.SSUM}


def test_default_stages_drop_absent_groups():
    stages = default_stages(10, [Task.ASR, Task.SSUM])
    assert [s.name for s in stages] == ["acoustic", "reasoning"]
    assert stages[-1].end == 10


def test_config_round_trip(tmp_path):
    cfg = RegimeConfig("tpc", 16, 30, seed=4, stages=stages_3(10, 20, 30), replay_fraction=0.1)
    path = tmp_path / "c.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_unknown_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"regime": "SM", "batch_size": 4, "total_steps": 2, "lr": 1}))
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_config(path)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"regime": "SM", "batch_size": 0, "total_steps": 5},
        {"regime": "SM", "batch_size": 4, "total_steps": 5, "replay_fraction": 1.0},
        {"regime": "XX", "batch_size": 4, "total_steps": 5},
        {"regime": "HYBRID", "batch_size": 4, "total_steps": 5, "switch_step": 6},
        {"regime": "ADS", "batch_size": 4, "total_steps": 5, "switch_step": 2},
        {"regime": "TPC", "batch_size": 4, "total_steps": 30, "stages": stages_3(10, 20, 29)},
        {"regime": "TPC", "batch_size": 4, "total_steps": 30, "stages": (
            CurriculumStage("a", {Task.ASR}, 0, 10), CurriculumStage("b", {Task.ASR, Task.DID}, 10, 30))},
        {"regime": "SM", "batch_size": 4, "total_steps": 5, "prior_mode": "hours"},
    ],
)
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        RegimeConfig(**kwargs)


def test_hybrid_switch_defaults_to_half():
    assert RegimeConfig("HYBRID", 4, 101).switch_step == 50


# ---------------------------------------------------------------------- SM


def test_sm_single_sample():
    m = Manifest((make_record("only"),))
    plan = plan_sm(m, RegimeConfig("SM", 4, 3))
    assert all([it.id for it in b.items] == ["only"] * 4 for b in plan)


def test_sm_frequencies_within_five_sigma():
    m = Manifest(tuple(make_record(f"s{i:04d}") for i in range(1000)))
    plan = plan_sm(m, RegimeConfig("SM", 8, 500, seed=1))
    counts = Counter(it.id for b in plan for it in b.items)
    draws, p = 4000, 1 / 1000
    sigma = np.sqrt(draws * p * (1 - p))
    assert max(abs(counts.get(i, 0) - draws * p) for i in m.ids) < 5 * sigma


def test_sm_deterministic(small_corpus):
    m, _ = small_corpus
    cfg = RegimeConfig("SM", 16, 20, seed=3)
    assert plan_sm(m, cfg).dumps() == plan_sm(m, cfg).dumps()
    assert plan_sm(m, cfg).body() != plan_sm(m, RegimeConfig("SM", 16, 20, seed=4)).body()


def test_sm_batch_regenerates_alone(small_corpus):
    m, _ = small_corpus
    long_plan = plan_sm(m, RegimeConfig("SM", 16, 20, seed=3))
    short_plan = plan_sm(m, RegimeConfig("SM", 16, 5, seed=3))
    assert long_plan.batches[:5] == short_plan.batches


# ---------------------------------------------------------------------- TPC


def test_stage_for_step():
    cfg = RegimeConfig("TPC", 4, 100)
    assert stage_for_step(cfg, 0).active_tasks == {Task.ASR}
    assert stage_for_step(cfg, 99).active_tasks == {Task.TSUM, Task.SSUM}
    first = stage_for_step(cfg, 0)
    assert stage_for_step(cfg, first.end).name == "paralinguistic"
    assert stage_for_step(cfg, first.end - 1).name == "acoustic"
    with pytest.raises(PlanError):
        stage_for_step(cfg, 100)


def test_tpc_first_stage_is_pure_asr(small_corpus):
    m, _ = small_corpus
    cfg = RegimeConfig("TPC", 32, 60, seed=2)
    plan = plan_tpc(m, cfg)
    first = stage_for_step(cfg, 0)
    for b in plan:
        if first.contains(b.step):
            assert {it.task for it in b.items} == {Task.ASR}


def test_tpc_zero_replay(small_corpus):
    m, _ = small_corpus
    cfg = RegimeConfig("TPC", 32, 30, seed=2, replay_fraction=0.0, stages=stages_3(10, 20, 30))
    plan = plan_tpc(m, cfg)
    for b in plan.batches[10:20]:
        assert {it.task for it in b.items} <= {Task.DID, Task.SER}


def test_tpc_replay_fraction(small_corpus):
    m, _ = small_corpus
    cfg = RegimeConfig("TPC", 256, 250, seed=9, replay_fraction=0.2, stages=stages_3(50, 200, 250))
    plan = plan_tpc(m, cfg)
    items = [it for b in plan.batches[50:200] for it in b.items]
    replay = sum(it.task is Task.ASR for it in items)
    assert abs(replay / len(items) - 0.2) < 0.01
    late = [it for b in plan.batches[200:] for it in b.items]
    # stage 3 replays ASR, DID and SER together
    assert {it.task for it in late} == set(Task)


def test_tpc_stage_without_samples(tiny_manifest):
    cfg = RegimeConfig("TPC", 4, 9, stages=(
        CurriculumStage("a", {Task.ASR}, 0, 3),
        CurriculumStage("b", {Task.DID}, 3, 6),
        CurriculumStage("c", {Task.TSUM, Task.SER}, 6, 9),
    ))
    plan = plan_tpc(tiny_manifest, cfg)
    assert len(plan) == 9
    bad = RegimeConfig("TPC", 4, 6, stages=(
        CurriculumStage("a", {Task.ASR, Task.DID, Task.SER}, 0, 3),
        CurriculumStage("b", {Task.TSUM}, 3, 6),
    ))
    with pytest.raises(PlanError, match="no samples"):
        plan_tpc(tiny_manifest, bad)


def test_tpc_needs_tpc_config(tiny_manifest):
    with pytest.raises(ConfigError):
        plan_tpc(tiny_manifest, RegimeConfig("SM", 4, 2))


# -------------------------------------------------------------- ADS quotas


def test_quotas_symmetric_split():
    m = Manifest(
        tuple(make_record(f"a{i}", lang="ar" if i % 2 else "en") for i in range(50))
        + tuple(make_record(f"d{i}", "did", "Egypt" if i % 2 else "Iraq") for i in range(50))
    )
    q = ads_quotas(m, 8)
    assert q[(Task.ASR, "ar")] + q[(Task.ASR, "en")] == 4
    assert q[(Task.DID, "Egypt")] == 2
    assert q[(Task.DID, "Iraq")] == 2


def test_quotas_seven_ser_labels():
    m = Manifest(
        tuple(make_record(f"a{i}") for i in range(70))
        + tuple(make_record(f"s{i}", "ser", SER_LABELS[i % 7]) for i in range(30))
    )
    q = ads_quotas(m, 24)
    # by hand: 0.7*24 = 16.8 -> 16 + remainder .8 wins; 0.3*24 = 7.2 -> 7
    assert q[(Task.ASR, "ar")] == 17
    assert [q[(Task.SER, l)] for l in SER_LABELS] == [1] * 7


def test_quotas_prior_label_mode():
    m = Manifest(
        tuple(make_record(f"e{i}", "did", "Egypt") for i in range(90))
        + tuple(make_record(f"i{i}", "did", "Iraq") for i in range(10))
    )
    assert ads_quotas(m, 20) == {(Task.DID, "Egypt"): 10, (Task.DID, "Iraq"): 10}
    assert ads_quotas(m, 20, label_mode="prior") == {(Task.DID, "Egypt"): 18, (Task.DID, "Iraq"): 2}


def test_quotas_too_small_batch(small_corpus):
    m, _ = small_corpus
    with pytest.raises(PlanError, match="at least one slot"):
        ads_quotas(m, 10)


def test_quotas_sum_to_m_over_random_priors():
    rng = np.random.default_rng(0)
    tasks = ["asr", "did", "ser", "tsum", "ssum"]
    for trial in range(1000):
        records = []
        for t in tasks:
            for j in range(int(rng.integers(1, 40))):
                if t == "did":
                    records.append(make_record(f"{t}{j}", t, ("Egypt", "Iraq", "Oman")[j % 3]))
                elif t == "ser":
                    records.append(make_record(f"{t}{j}", t, ("Fear", "Anger")[j % 2]))
                else:
                    records.append(make_record(f"{t}{j}", t, lang=("ar", "en")[j % 2]))
        m = Manifest(tuple(records))
        groups = len({(r.task, r.group_label) for r in records})
        M = int(rng.integers(groups, 300))
        q = ads_quotas(m, M)
        total = 0
        for v in q.values():
            assert v >= 1
            total += v
        assert total == M


# ------------------------------------------------------------- round robin


def test_round_robin_two_clusters_alternate():
    m = Manifest((make_record("x", "did", "Egypt"), make_record("y", "did", "Egypt")))
    state = RoundRobinState(m, codebook_for(m, {"x": 3, "y": 9}), seed=0)
    picks = [round_robin_pick(state, Task.DID, "Egypt") for _ in range(6)]
    assert [c for _, c in picks] == [3, 9, 3, 9, 3, 9]
    assert [s for s, _ in picks] == ["x", "y"] * 3


def test_round_robin_single_cluster():
    m = Manifest(tuple(make_record(f"s{i}") for i in range(5)))
    state = RoundRobinState(m, codebook_for(m, {f"s{i}": 4 for i in range(5)}), seed=1)
    picks = [round_robin_pick(state, "asr", "ar") for _ in range(12)]
    assert {c for _, c in picks} == {4}
    # each local epoch is a permutation of the group
    assert sorted(s for s, _ in picks[:5]) == [f"s{i}" for i in range(5)]


def test_round_robin_visit_spread():
    rng = np.random.default_rng(5)
    ids = [f"s{i}" for i in range(200)]
    clusters = {sid: int(c) for sid, c in zip(ids, rng.integers(0, 10, size=200))}
    m = Manifest(tuple(make_record(s) for s in ids))
    state = RoundRobinState(m, codebook_for(m, clusters), seed=2)
    seq = [round_robin_pick(state, Task.ASR, "ar")[1] for _ in range(1000)]
    present = sorted(set(clusters.values()))
    sizes = [sum(1 for c in clusters.values() if c == k) for k in present]
    slots = [present.index(c) for c in seq]
    assert sweep_visit_spread(slots, sizes) <= 1
    # tally per completed sweep: while no cluster has run dry, every sweep visits each once
    first_sweeps = seq[: len(present) * min(sizes)]
    counts = Counter(first_sweeps)
    assert max(counts.values()) - min(counts.values()) == 0


def test_visit_spread_flags_skipped_cluster():
    assert sweep_visit_spread([0, 1, 2, 0, 1, 2], [5, 5, 5]) == 1
    assert sweep_visit_spread([0, 2, 0, 2], [5, 5, 5]) == 2


def test_round_robin_empty_group(tiny_manifest):
    state = RoundRobinState(tiny_manifest, codebook_for(tiny_manifest, {"a1": 0, "d1": 0, "s1": 0}), 0)
    with pytest.raises(PlanError):
        round_robin_pick(state, Task.DID, "Iraq")


# --------------------------------------------------------------------- ADS


def test_ads_collapses_to_cycling():
    m = Manifest(tuple(make_record(f"s{i}", "ser", "Fear") for i in range(3)))
    cb = codebook_for(m, {f"s{i}": 0 for i in range(3)})
    plan = plan_ads(m, cb, RegimeConfig("ADS", 2, 6, seed=0))
    stream = [it.id for b in plan for it in b.items]
    for epoch in range(4):
        assert sorted(stream[3 * epoch : 3 * epoch + 3]) == ["s0", "s1", "s2"]


def test_ads_upsamples_minority():
    records = [make_record(f"a{i}", "did", "Egypt") for i in range(100)] + [
        make_record("b0", "did", "Iraq"),
        make_record("b1", "did", "Iraq"),
    ]
    m = Manifest(tuple(records))
    rng = np.random.default_rng(1)
    cb = codebook_for(m, {r.id: int(rng.integers(0, 4)) for r in records})
    cfg = RegimeConfig("ADS", 10, 50, seed=3)
    assert ads_quotas(m, 10) == {(Task.DID, "Egypt"): 5, (Task.DID, "Iraq"): 5}
    for b in plan_ads(m, cb, cfg):
        counts = Counter(it.id for it in b.items if it.label == "Iraq")
        assert counts["b0"] >= 2 and counts["b1"] >= 2


def test_ads_plan_passes_validator(small_corpus, small_codebook):
    m, _ = small_corpus
    cfg = RegimeConfig("ADS", 64, 200, seed=1)
    plan = plan_ads(m, small_codebook, cfg)
    quotas = ads_quotas(m, 64)
    labels = {t: {s.label for s in m if s.task is t} for t in (Task.DID, Task.SER)}
    for b in plan:
        assert Counter((it.task, it.label) for it in b.items) == Counter(quotas)
        for t, ls in labels.items():
            assert {it.label for it in b.items if it.task is t} == ls
        assert all(it.cluster == small_codebook.assignment[it.id] for it in b.items)
    assert validate_plan(plan, m, cfg, small_codebook) == []


def test_ads_missing_assignment(small_corpus, small_codebook):
    m, _ = small_corpus
    partial = dict(small_codebook.assignment)
    partial.pop(m.ids[0])
    cb = Codebook(small_codebook.centroids, partial, 0, 0)
    with pytest.raises(PlanError, match="no codebook assignment"):
        plan_ads(m, cb, RegimeConfig("ADS", 64, 2))


# ------------------------------------------------------------------ hybrid


def test_hybrid_degenerate_switches(small_corpus, small_codebook):
    m, _ = small_corpus
    ads = plan_ads(m, small_codebook, RegimeConfig("ADS", 64, 40, seed=6))
    h0 = plan_hybrid(m, small_codebook, RegimeConfig("HYBRID", 64, 40, seed=6, switch_step=0))
    assert h0.body() == ads.body()
    tpc = plan_tpc(m, RegimeConfig("TPC", 64, 40, seed=6))
    h1 = plan_hybrid(m, small_codebook, RegimeConfig("HYBRID", 64, 40, seed=6, switch_step=40))
    assert h1.body() == tpc.body()


def test_hybrid_switch_midway(small_corpus, small_codebook):
    m, _ = small_corpus
    cfg = RegimeConfig("HYBRID", 64, 200, seed=2, switch_step=100)
    plan = plan_hybrid(m, small_codebook, cfg)
    assert plan[99].regime is Regime.TPC and plan[99].stage == "reasoning"
    assert plan[100].regime is Regime.ADS and plan[100].stage is None
    assert Counter((it.task, it.label) for it in plan[100].items) == Counter(ads_quotas(m, 64))
    assert validate_plan(plan, m, cfg, small_codebook) == []


# ----------------------------------------------------------- plan io / misc


@pytest.mark.parametrize("regime", ["SM", "TPC", "ADS", "HYBRID"])
def test_plan_round_trip_and_determinism(regime, small_corpus, small_codebook, tmp_path):
    m, _ = small_corpus
    cfg = RegimeConfig(regime, 48, 25, seed=8)
    a, b = make_plan(m, cfg, small_codebook), make_plan(m, cfg, small_codebook)
    assert a.dumps() == b.dumps()
    path = tmp_path / "plan.jsonl"
    a.save(path)
    loaded = BatchPlan.load(path)
    assert loaded.dumps() == a.dumps()
    assert loaded.header["seed"] == 8
    assert all(len(batch.items) == 48 for batch in loaded)
    assert [batch.step for batch in loaded] == list(range(25))


def test_make_plan_needs_codebook_for_ads(small_corpus):
    m, _ = small_corpus
    with pytest.raises(PlanError, match="codebook"):
        make_plan(m, RegimeConfig("ADS", 64, 2))


def test_plan_line_format(small_corpus, small_codebook):
    m, _ = small_corpus
    plan = make_plan(m, RegimeConfig("ADS", 40, 1), small_codebook)
    line = json.loads(plan.body().splitlines()[0])
    assert set(line) == {"step", "regime", "stage", "items"}
    assert set(line["items"][0]) == {"id", "task", "label", "cluster"}
    assert line["items"][0]["task"] in {"asr", "did", "ser", "tsum", "ssum"}
