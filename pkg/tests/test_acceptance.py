"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. Criteria 4 and 5 share a
family of fixed synthetic streams (d=64, 10 known + 5 novel classes,
noise 0.15, 100 samples per class, seeds 0..4); each criterion pins its own
engine configuration, frozen here.
"""

import functools
import json
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from protostream import config as config_mod
from protostream import pipeline
from protostream.cli import main as cli_main
from protostream.data import SynthConfig, generate_synthetic, order_stream
from protostream.evaluation import (
    greedy_accuracy,
    hash_baseline,
    hungarian,
    strict_accuracy,
)
from protostream.gradcheck import run_all
from protostream.memory import PrototypeMemory, UpdateParams, init_from_labeled, step_size
from protostream.offline import AdapterState, OfflineConfig, angle_stats, train_offline
from protostream.online import DecisionConfig, StreamEngine, TtaConfig

N_KNOWN, N_NOVEL = 10, 5


@functools.lru_cache(maxsize=None)
def fixed_stream(seed: int):
    cfg = SynthConfig(d=64, n_known=N_KNOWN, n_novel=N_NOVEL, samples_per_class=100,
                      noise_sigma=0.15, min_class_angle=0.5, labeled_fraction=0.5,
                      seed=seed)
    labeled, stream = generate_synthetic(cfg)
    stream = order_stream(stream, "shuffled", seed=seed + 999)
    return labeled, stream


@functools.lru_cache(maxsize=None)
def trained_adapter(seed: int, margin_enabled: bool):
    labeled, _ = fixed_stream(seed)
    cfg = OfflineConfig(epochs=15, learning_rate=0.02, lam=3.0, seed=seed + 50,
                        margin_enabled=margin_enabled)
    adapter, _ = train_offline(labeled.primary, labeled.labels, cfg)
    return adapter


def run_engine(seed: int, tau: float, margin_enabled: bool, tta: bool):
    labeled, stream = fixed_stream(seed)
    adapter = trained_adapter(seed, margin_enabled).copy()
    memory = init_from_labeled(adapter.embed(labeled.primary), labeled.labels)
    engine = StreamEngine(adapter, memory, DecisionConfig(tau_sim=tau),
                          TtaConfig(gamma=1e-4), UpdateParams(),
                          enable_tta_p=tta, enable_tta_m=tta)
    result = engine.run_stream(stream.ids, stream.primary, batch_size=64)
    clusters = np.array([p.assigned_id for p in result.predictions])
    report = strict_accuracy(clusters, stream.labels, range(N_KNOWN),
                             ndc=result.memory.ndc())
    return report, result


def test_criterion_1_gradient_correctness(capsys):
    start = time.time()
    results = run_all(n_states=20, tol=1e-4, step=1e-5, seed=0)
    elapsed = time.time() - start
    for r in results:
        assert r.passed, f"{r.name}: max rel err {r.max_rel_err:.3e} > {r.tol}"
    assert cli_main(["gradcheck", "--states", "20"]) == 0
    assert elapsed < 30, f"gradcheck took {elapsed:.1f}s"
    worst = max(r.max_rel_err for r in results)
    print(f"\nACCEPTANCE 1 PASS: all 6 gradient suites <= 1e-4 "
          f"(worst {worst:.2e}) in {elapsed:.1f}s")


def test_criterion_2_hungarian_oracle():
    start = time.time()
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        profit = rng.integers(0, 100, size=(n, m))
        _, _, got = hungarian(profit)
        want = oracles.brute_force_hungarian(profit.tolist())
        assert got == want, f"{profit} -> {got} != {want}"
    elapsed = time.time() - start
    assert elapsed < 10, f"hungarian oracle sweep took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 2 PASS: 200 random tables up to 7x7 match the "
          f"permutation oracle exactly in {elapsed:.1f}s")


def test_criterion_3_algorithm_fidelity():
    fixture_path = Path(__file__).parent / "fixtures" / "micro_stream.json"
    fixture = json.loads(fixture_path.read_text())
    expected = oracles.replay_micro_stream(fixture)

    memory = PrototypeMemory(4)
    for proto in fixture["prototypes"]:
        memory.add_known(proto["class_index"], np.array(proto["vector"]))
    params = UpdateParams(
        eta_known=fixture["params"]["known"]["eta"],
        kappa_known=fixture["params"]["known"]["kappa"],
        eta_novel=fixture["params"]["novel"]["eta"],
        kappa_novel=fixture["params"]["novel"]["kappa"],
    )
    engine = StreamEngine(AdapterState.init(4, 2, seed=0, init_noise=0.0), memory,
                          DecisionConfig(tau_sim=fixture["tau_sim"]), TtaConfig(), params)
    raw = np.array([s["vector"] for s in fixture["samples"]], dtype=float)
    outcome = engine.process_batch([s["id"] for s in fixture["samples"]], raw)

    got = [(p.sample_id, p.assigned_id, p.is_novel_creation) for p in outcome.predictions]
    want = [(sid, aid, novel) for sid, aid, _, novel in expected["predictions"]]
    assert got == want
    for p, (_, _, s_want, _) in zip(outcome.predictions, expected["predictions"]):
        assert p.s_max == pytest.approx(s_want, abs=1e-6)
    for proto in engine.memory.prototypes:
        np.testing.assert_allclose(proto.vector, expected["post_prototypes"][proto.id],
                                   atol=1e-6)
    # the step-size rule at the documented operating point
    assert step_size(1.0, 8, 0.3, 8.0) == pytest.approx(0.15, abs=1e-12)
    assert expected["alphas"][2] == pytest.approx(0.3 * 0.8 / 9, abs=1e-12)
    print("\nACCEPTANCE 3 PASS: 6-sample micro-stream matches the scalar "
          "replay (predictions, alphas, post-update prototypes) to 1e-6")


def test_criterion_4_category_explosion():
    start = time.time()
    passing = 0
    details = []
    for seed in range(5):
        _, stream = fixed_stream(seed)
        report, result = run_engine(seed, tau=0.3, margin_enabled=True, tta=True)
        ok = 5 <= report.ndc <= 15
        hash_counts = {}
        for code_len in (12, 16):
            n_hash = int(np.unique(hash_baseline(stream.primary, code_len)).size)
            hash_counts[code_len] = n_hash
            ok = ok and report.num_clusters_retained < n_hash
            ok = ok and (n_hash - N_KNOWN) > 30
        passing += ok
        details.append((seed, report.ndc, report.num_clusters_retained, hash_counts, ok))
    elapsed = time.time() - start
    assert passing >= 4, f"only {passing}/5 seeds passed: {details}"
    assert elapsed < 60, f"category-explosion check took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 4 PASS: {passing}/5 seeds with engine NDC in [5,15] "
          f"and sign-hash cluster explosion (details: {details}) in {elapsed:.1f}s")


def test_criterion_5_component_monotonicity():
    start = time.time()
    base, mlc, full = [], [], []
    for seed in range(5):
        base.append(run_engine(seed, tau=0.5, margin_enabled=False, tta=False)[0].acc_all)
        mlc.append(run_engine(seed, tau=0.5, margin_enabled=True, tta=False)[0].acc_all)
        full.append(run_engine(seed, tau=0.5, margin_enabled=True, tta=True)[0].acc_all)
    elapsed = time.time() - start
    viol1 = sum(m < b for b, m in zip(base, mlc))
    viol2 = sum(f < m for m, f in zip(mlc, full))
    assert np.mean(base) <= np.mean(mlc), (base, mlc)
    assert np.mean(mlc) <= np.mean(full), (mlc, full)
    assert viol1 <= 1, f"baseline<=MLC violated on {viol1} seeds: {base} vs {mlc}"
    assert viol2 <= 1, f"MLC<=full violated on {viol2} seeds: {mlc} vs {full}"
    assert elapsed < 300, f"monotonicity check took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 5 PASS: strict-All means {np.mean(base):.4f} <= "
          f"{np.mean(mlc):.4f} <= {np.mean(full):.4f} over 5 seeds "
          f"(violations {viol1}/{viol2}) in {elapsed:.1f}s")


def test_full_engine_beats_static_baseline_on_ndc_and_accuracy():
    # paired-run property on the shared stream: the adaptive engine lands
    # closer to the true novel-class count and at least matches the static
    # baseline's accuracy
    base_rep, base_res = run_engine(0, tau=0.3, margin_enabled=False, tta=False)
    full_rep, full_res = run_engine(0, tau=0.3, margin_enabled=True, tta=True)
    assert abs(full_rep.ndc - N_NOVEL) <= abs(base_rep.ndc - N_NOVEL)
    assert full_rep.acc_all >= base_rep.acc_all


def test_criterion_6_margin_angle_effect():
    # crowded classes make the margin's geometric effect visible
    cfg = SynthConfig(d=16, n_known=10, n_novel=0, samples_per_class=40,
                      noise_sigma=0.1, min_class_angle=0.35, seed=5)
    labeled, _ = generate_synthetic(cfg)
    stats = {}
    for margin in (0.0, 0.2):
        oc = OfflineConfig(epochs=15, learning_rate=0.02, seed=105, margin=margin,
                           margin_enabled=True)
        adapter, _ = train_offline(labeled.primary, labeled.labels, oc)
        stats[margin] = angle_stats(labeled.primary, labeled.labels, adapter)
    assert stats[0.2].intra.mean() < stats[0.0].intra.mean(), (
        stats[0.2].mean_intra_deg, stats[0.0].mean_intra_deg)
    assert stats[0.2].inter.mean() > stats[0.0].inter.mean(), (
        stats[0.2].mean_inter_deg, stats[0.0].mean_inter_deg)
    print(f"\nACCEPTANCE 6 PASS: margin 0.2 vs 0 -> intra "
          f"{stats[0.0].mean_intra_deg:.2f}->{stats[0.2].mean_intra_deg:.2f} deg, "
          f"inter {stats[0.0].mean_inter_deg:.2f}->{stats[0.2].mean_inter_deg:.2f} deg")


def test_criterion_7_threshold_monotonicity():
    taus = (0.5, 0.6, 0.7, 0.8, 0.9)
    ndcs = []
    for tau in taus:
        report, _ = run_engine(0, tau=tau, margin_enabled=True, tta=False)
        ndcs.append(report.ndc)
    assert all(b >= a for a, b in zip(ndcs, ndcs[1:])), list(zip(taus, ndcs))
    print(f"\nACCEPTANCE 7 PASS: NDC nondecreasing in tau with adaptation "
          f"disabled: {dict(zip(taus, ndcs))}")


def test_criterion_8_protocol_ordering():
    rng = np.random.default_rng(88)
    for trial in range(100):
        n = int(rng.integers(10, 80))
        n_classes = int(rng.integers(2, 8))
        labels = rng.integers(0, n_classes, size=n)
        clusters = rng.integers(0, int(rng.integers(2, 12)), size=n)
        known = list(range(int(rng.integers(1, n_classes))))
        s = strict_accuracy(clusters, labels, known)
        g = greedy_accuracy(clusters, labels, known)
        assert s.acc_all <= g.acc_all, (trial, s.acc_all, g.acc_all)
    print("\nACCEPTANCE 8 PASS: strict-All <= greedy-All on 100 random "
          "prediction/label sets")


def test_criterion_9_determinism(tmp_path):
    overrides = {
        "synth": {"d": 24, "n_known": 4, "n_novel": 2, "samples_per_class": 25,
                  "noise_sigma": 0.12},
        "offline": {"epochs": 4},
        "decision": {"tau_sim": 0.35},
        "seed": 3,
    }
    bundle = config_mod.ConfigBundle(config_mod.resolve(None, overrides))
    first = tmp_path / "first"
    pipeline.run_full_pipeline(bundle, first, protocol="both", hash_code_lengths=(12,))

    # second run starts from the first run's resolved snapshot
    snapshot = first / "config.resolved.json"
    bundle2 = config_mod.ConfigBundle(config_mod.resolve(snapshot, None))
    second = tmp_path / "second"
    pipeline.run_full_pipeline(bundle2, second, protocol="both", hash_code_lengths=(12,))

    compared = []
    for csv_path in sorted(first.glob("*.csv")):
        twin = second / csv_path.name
        assert twin.exists(), twin
        assert csv_path.read_bytes() == twin.read_bytes(), f"{csv_path.name} differs"
        compared.append(csv_path.name)
    assert (first / "config.resolved.json").read_bytes() == \
        (second / "config.resolved.json").read_bytes()
    assert compared, "no CSV outputs found to compare"
    print(f"\nACCEPTANCE 9 PASS: byte-identical reruns from the resolved "
          f"snapshot ({', '.join(compared)})")
