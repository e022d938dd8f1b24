"""Acceptance gate: one PASS/FAIL/SKIP line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v``. Criteria 7 to 9 drive the
``fogfair`` CLI on the synthetic fixture in a subprocess; criterion 10 needs
a converted Daphnet dataset directory in ``FOGFAIR_DAPHNET_DIR``.
"""
import json
import os
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from fogfair.evaluation import wilcoxon_one_sided
from fogfair.fairness import (
    GroupAssignment,
    PredictionSet,
    ProtectedAttribute,
    demographic_parity_ratio,
    dichotomize,
    fairness_result,
)
from fogfair.ingest import load_dataset
from fogfair.mitigation import AdversaryConfig, Criterion, apply_thresholds, fit_thresholds, train_debiased
from fogfair.models.neural import TrainConfig, train_neural
from fogfair.phenotype import PhenotypeLabel, classify_episode
from fogfair.synth import SynthSpec, write_fixture
from fogfair.windowing import Episode

from gradcheck import check_layer, check_model, random_default_model, random_layer_cases
from oracles import fairness_oracle, wilcoxon_oracle

SEX = ProtectedAttribute.Sex


@pytest.fixture
def verdict(capsys):
    """``verdict(n, ok, detail)`` prints the criterion line and fails the test when not ok."""
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_metric_oracle(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(1000):
        n = int(rng.integers(1, 51))
        yp, yt = rng.integers(0, 2, n), rng.integers(0, 2, n)
        g = rng.integers(0, 2, n)
        g[: min(n, 2)] = [0, 1][: min(n, 2)]  # both groups present whenever n >= 2
        ids = [f"u{j}" for j in range(n)]
        r = fairness_result(PredictionSet(ids, yp, yt), GroupAssignment(SEX, dict(zip(ids, map(int, g)))))
        for m, v in fairness_oracle(yp.tolist(), yt.tolist(), g.tolist()).items():
            if r.value(m) != (None if v is None else float(v)):
                mismatches += 1
    dt = time.perf_counter() - t0
    verdict(1, mismatches == 0 and dt < 10, f"1000 random sets, {mismatches} mismatches, {dt:.1f}s")


def test_criterion_02_gradients(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_layer = worst_model = 0.0
    kinks = 0
    for draw in range(100):
        for layer, x in random_layer_cases(rng):
            worst_layer = max(worst_layer, check_layer(layer, x, rng))
        model, X, y, w = random_default_model(rng, draw)
        err, skipped = check_model(model, X, y, w, rng, n_coords=3)
        worst_model, kinks = max(worst_model, err), kinks + skipped
    dt = time.perf_counter() - t0
    ok = worst_layer < 1e-4 and worst_model < 1e-4 and dt < 60
    verdict(2, ok, f"max rel err layers {worst_layer:.2e}, full net {worst_model:.2e} over 100 draws "
                   f"({kinks} kink-straddling coordinates redrawn), {dt:.1f}s")


def _tone_windows(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(64) / 64.0
    y = rng.integers(0, 2, n)
    X = rng.normal(0, 0.1, size=(n, 64, 3))
    X[y == 1, :, 0] += 0.5 * np.sin(2 * np.pi * 5 * t)
    return X, y, rng.integers(0, 2, n)


def test_criterion_03_projection(verdict):
    t0 = time.perf_counter()
    X, y, g = _tone_windows(80, 3)
    cfg = TrainConfig(epochs=20, batch_size=8, rng_seed=3)
    seen = []
    train_debiased(X, y, {SEX: g}, cfg, AdversaryConfig(alpha=1.0),
                   monitor=lambda d: seen.append(d["orthogonality"]))
    plain = train_neural(X, y, cfg)
    deb = train_debiased(X, y, {SEX: g}, cfg, AdversaryConfig(alpha=0.0, frozen=True, zero_init=True))
    same = all(a[k].tobytes() == b[k].tobytes() for a, b in zip(plain.get_params(), deb.get_params()) for k in a)
    dt = time.perf_counter() - t0
    ok = len(seen) == 200 and max(seen) < 1e-10 and same and dt < 60
    verdict(3, ok, f"{len(seen)} steps, max |<resid, g_A>| {max(seen):.1e}, "
                   f"alpha=0 trajectory bitwise {'identical' if same else 'DIFFERENT'}, {dt:.1f}s")


def test_criterion_04_phenotype(verdict):
    t0 = time.perf_counter()
    cases = [(f, PhenotypeLabel.Akinetic) for f in (0.5, 1, 2, 2.9)] + \
            [(f, PhenotypeLabel.Tremulous) for f in (3.1, 4, 5, 7, 8)]
    wrong = []
    for fs in (64.0, 128.0):
        t = np.arange(int(4 * fs)) / fs
        for f, want in cases:
            for amp in (0.1, 1.0, 10.0):
                x = np.zeros((t.size, 3))
                x[:, 0] = amp * np.sin(2 * np.pi * f * t + 0.3)
                if classify_episode(Episode("S", 0, t.size, x), fs) is not want:
                    wrong.append((fs, f, amp))
    dt = time.perf_counter() - t0
    verdict(4, not wrong and dt < 5, f"{2 * len(cases) * 3 - len(wrong)}/{2 * len(cases) * 3} tones correct, {dt:.2f}s")


def test_criterion_05_wilcoxon(verdict):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 11))
        before = rng.integers(0, 5, n).astype(float)
        after = before + rng.integers(-3, 4, n)
        d = (after - before).tolist()
        r = wilcoxon_one_sided(before, after)
        if any(d):
            w, p = wilcoxon_oracle(d)
            bad += not (r.method == "Exact" and r.statistic == w and r.p_value == float(p))
        else:
            bad += not (r.all_zero and r.p_value == 1.0)
    shift = wilcoxon_one_sided(np.arange(6.0), np.arange(6.0) + 1)
    dt = time.perf_counter() - t0
    ok = bad == 0 and shift.p_value == 1 / 64 and dt < 30
    verdict(5, ok, f"500 samples, {bad} mismatches; n=6 shift p = {Fraction(shift.p_value)}, {dt:.1f}s")


def _offset_scores(n, rng):
    g = np.repeat([0, 1], n // 2)
    latent = rng.uniform(0, 0.8, n)
    y = (rng.uniform(0, 0.8, n) < latent).astype(np.int8)
    return latent + 0.2 * g, y, g


def test_criterion_06_threshold_optimizer(verdict):
    t0 = time.perf_counter()
    feasible = improved = 0
    for seed in range(10):
        rng = np.random.default_rng([6, seed])
        s_cal, y_cal, g_cal = _offset_scores(1000, rng)
        s_te, y_te, g_te = _offset_scores(1000, rng)
        ids = list(range(len(s_cal)))
        pol = fit_thresholds(PredictionSet(ids, s_cal >= 0.5, y_cal, s_cal),
                             GroupAssignment(SEX, dict(zip(ids, map(int, g_cal)))), Criterion.DemographicParity)
        cal = apply_thresholds(s_cal, g_cal, pol)
        feasible += abs(cal[g_cal == 0].mean() - cal[g_cal == 1].mean()) <= 0.02 + 1e-12
        te_ids = list(range(len(s_te)))
        ga = GroupAssignment(SEX, dict(zip(te_ids, map(int, g_te))))
        before = demographic_parity_ratio(PredictionSet(te_ids, s_te >= 0.5, y_te), ga)
        after = demographic_parity_ratio(PredictionSet(te_ids, apply_thresholds(s_te, g_te, pol), y_te), ga)
        improved += after > before
    dt = time.perf_counter() - t0
    ok = feasible == 10 and improved >= 9 and dt < 60
    verdict(6, ok, f"calibration disparity <= 0.02 in {feasible}/10, test DPR improved in {improved}/10, {dt:.1f}s")


# --- CLI-driven criteria ----------------------------------------------------------

def _audit(config, out, threads):
    env = {**os.environ, "FOGFAIR_THREADS": str(threads)}
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "fogfair.cli", "audit", "--config", str(config), "--out", str(out)],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out.read_bytes(), time.perf_counter() - t0


@pytest.fixture(scope="module")
def biased_audit(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = write_fixture(root / "fixture", SynthSpec(bias_attribute="Sex", bias_ratio=2.0))
    data, dt = _audit(config, root / "audit_t1.json", 1)
    return root, config, data, dt


def _row(report, attr):
    return next(r for r in report["rows"] if r["attribute"] == attr)


def test_criterion_07_synthetic_audit(verdict, biased_audit):
    _, _, data, dt = biased_audit
    rep = json.loads(data)
    sex = _row(rep, "Sex")["metrics"]["DPR"]["mean"]
    age = _row(rep, "Age")["metrics"]["DPR"]["mean"]
    ok = sex < 0.8 and age >= 0.9 and dt < 300
    verdict(7, ok, f"biased Sex DPR {sex:.3f} (< 0.8), control Age DPR {age:.3f} (>= 0.9), {dt:.1f}s")


def test_criterion_08_determinism(verdict, biased_audit):
    root, config, first, dt1 = biased_audit
    again, dt2 = _audit(config, root / "audit_t1_again.json", 1)
    threaded, dt3 = _audit(config, root / "audit_t8.json", 8)
    ok = first == again == threaded and max(dt1, dt2, dt3) < 300
    verdict(8, ok, f"reports byte-identical across reruns and FOGFAIR_THREADS=1/8: {first == again == threaded}, "
                   f"{len(first)} bytes, slowest {max(dt1, dt2, dt3):.1f}s")


def test_criterion_09_subject_independence(verdict, biased_audit):
    root, config, data, _ = biased_audit
    rep = json.loads(data)
    _, metadata = load_dataset(config.parent / "data")
    groups = [dichotomize(metadata, a) for a in (SEX, ProtectedAttribute.Age, ProtectedAttribute.DiseaseDuration)]
    overlaps = uncovered = 0
    for s in rep["samples"]:
        overlaps += bool(set(s["train_subjects"]) & set(s["test_subjects"]))
        for ga in groups:
            uncovered += {ga.membership[x] for x in s["test_subjects"]} != {0, 1}
    n = len(rep["samples"])
    verdict(9, n > 0 and overlaps == 0 and uncovered == 0,
            f"{n} folds, {overlaps} with train/test overlap, {uncovered} attribute-fold pairs missing a group")


def test_criterion_10_daphnet(verdict, tmp_path, capsys):
    root = os.environ.get("FOGFAIR_DAPHNET_DIR")
    if not root:
        with capsys.disabled():
            print("\nSKIP criterion 10: set FOGFAIR_DAPHNET_DIR to a converted Daphnet dataset directory")
        pytest.skip("FOGFAIR_DAPHNET_DIR not set")
    config = tmp_path / "daphnet.json"
    config.write_text(json.dumps({"dataset": os.path.abspath(root), "model": "forest", "k": 3,
                                  "n_iterations": 10, "seed": 0}))
    data, dt = _audit(config, tmp_path / "daphnet_report.json", os.cpu_count() or 1)
    rep = json.loads(data)
    f1 = rep["rows"][0]["metrics"]["F1"]["mean"]
    dprs = {r["attribute"]: r["metrics"]["DPR"]["mean"] for r in rep["rows"]}
    ok = abs(f1 - 0.560) <= 0.08 and all(v is not None and v < 0.8 for v in dprs.values()) and dt < 1800
    verdict(10, ok, f"macro F1 {f1:.3f} (target 0.560 +- 0.08), DPR {dprs}, {dt:.0f}s")
