"""End-to-end acceptance checks.

Every test here records one [PASS]/[FAIL] line for the terminal summary
(see conftest) and asserts its criterion honestly. The heavyweight
fixtures — ten seeded evolution runs on a synthetic spectral problem plus
the matching ablation runs — are shared across the criteria that need them.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr
from sklearn.datasets import load_diabetes, make_friedman1, make_friedman3

from conftest import record_criterion
from helpers import make_engine, random_programs
from lgptune import cli
from lgptune.data import SpectralDataset, augment, grouped_kfold, save_csv
from lgptune.evolution import Evolution, EvolutionConfig, regression_metrics
from lgptune.primitives import GD_FUNCTION_KINDS, coeff_length, terminal_values
from lgptune.program import (
    Inp,
    Instruction,
    Program,
    TunablePrimitiveState,
    effective_instructions,
    execute,
    head_predictions,
    predict,
)
from lgptune.tuning import (
    function_gradient,
    function_loss,
    mvlr_design,
    sse,
    terminal_design,
    tune_function,
    tune_mvlr,
    tune_terminal,
)

SEED_COUNT = 10


# ---------------------------------------------------------------------------
# the synthetic spectral problem: smooth peak mixtures whose target combines
# a band average and a band spread plus gaussian noise (variance 0.01)


def synthetic_spectra(n=120, d=200, seed=20240815):
    rng = np.random.default_rng(seed)
    t = np.arange(d, dtype=float)
    centers = (30.0, 70.0, 110.0, 140.0, 175.0)
    widths = (9.0, 12.0, 10.0, 11.0, 8.0)
    X = np.zeros((n, d))
    for c, w in zip(centers, widths):
        amps = rng.uniform(0.4, 2.4, size=n)
        X += amps[:, None] * np.exp(-0.5 * ((t - c) / w) ** 2)
    X += rng.uniform(-0.3, 0.3, size=(n, 1)) * np.linspace(0.0, 1.0, d)
    y = (
        2.0 * X[:, 20:61].mean(axis=1)
        - 1.5 * X[:, 120:161].std(axis=1)
        + rng.normal(scale=0.1, size=n)
    )
    return X, y


def _run_spectral(seed, basic=False):
    X, y = synthetic_spectra()
    X_train, y_train = X[:80], y[:80]
    X_test, y_test = X[80:], y[80:]
    kwargs = dict(population_size=100, generations=50, seed=seed)
    if basic:
        kwargs.update(terminal_kinds=(), function_kinds=(), use_mvlr=False)
    cfg = EvolutionConfig.for_mode("fish", **kwargs)
    best, history = Evolution(cfg, X_train, y_train).evolve()
    _, r2 = regression_metrics(predict(best.program, X_test), y_test)
    return r2, history


@pytest.fixture(scope="module")
def full_runs():
    started = time.perf_counter()
    runs = [_run_spectral(seed) for seed in range(SEED_COUNT)]
    return {
        "r2": np.array([r for r, _ in runs]),
        "histories": [h for _, h in runs],
        "elapsed": time.perf_counter() - started,
    }


@pytest.fixture(scope="module")
def basic_runs():
    runs = [_run_spectral(seed, basic=True) for seed in range(SEED_COUNT)]
    return {"r2": np.array([r for r, _ in runs])}


# ---------------------------------------------------------------------------
# 1: analytic gradients vs central finite differences


def test_criterion_01_gradient_agreement(rng):
    started = time.perf_counter()
    h = 1e-5
    worst = 0.0
    for kind in GD_FUNCTION_KINDS:
        p = coeff_length(kind)
        for _ in range(100):
            coeffs = rng.uniform(-2.5, 2.5, size=p)
            n = int(rng.integers(3, 12))
            x = rng.uniform(0.2, 4.0, size=n) * rng.choice([-1.0, 1.0], size=n)
            y = rng.normal(size=n)
            analytic = function_gradient(kind, coeffs, x, y)
            assert analytic.shape == (p,)
            numeric = np.zeros(p)
            for j in range(p):
                up, down = coeffs.copy(), coeffs.copy()
                up[j] += h
                down[j] -= h
                numeric[j] = (
                    function_loss(TunablePrimitiveState(kind, 0, 0, up), x, y)
                    - function_loss(TunablePrimitiveState(kind, 0, 0, down), x, y)
                ) / (2.0 * h)
            rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - started
    passed = worst <= 1e-5 and elapsed < 1.0
    record_criterion(
        1,
        "analytic gradients match finite differences",
        passed,
        f"max rel err {worst:.2e}, {elapsed:.2f}s",
    )
    assert worst <= 1e-5
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2: every linear tuner agrees with an independent pseudo-inverse oracle


def test_criterion_02_least_squares_oracle(rng):
    started = time.perf_counter()

    def rel_gap(got, ref):
        return float(np.linalg.norm(got - ref) / max(1.0, np.linalg.norm(ref)))

    worst = 0.0
    gamma_kinds = ("Avg", "Std", "Fluctuate", "NegSlope", "PosSlope", "Peak", "Valley", "PeakLoc")
    for family in ("LR", "1stDLR", "gamma", "LRF", "MVLR"):
        for _ in range(50):
            n = int(rng.integers(50, 201))
            if family in ("LR", "1stDLR"):
                width = int(rng.integers(2, 30))
                slices = rng.normal(size=(n, width))
                y = rng.normal(size=n)
                kind = family
                st = TunablePrimitiveState(kind, 0, width - 1, np.zeros(coeff_length(kind, 0, width - 1)))
                tuned = tune_terminal(st, slices, y)
                ref = np.linalg.pinv(terminal_design(kind, slices)) @ y
                worst = max(worst, rel_gap(tuned.coeffs, ref))
            elif family == "gamma":
                kind = gamma_kinds[rng.integers(len(gamma_kinds))]
                width = int(rng.integers(2, 9))
                slices = rng.normal(size=(n, width))
                y = rng.normal(size=n)
                st = TunablePrimitiveState(kind, 0, width - 1, np.zeros(2))
                tuned = tune_terminal(st, slices, y)
                ref = np.linalg.pinv(terminal_design(kind, slices)) @ y
                worst = max(worst, rel_gap(tuned.coeffs, ref))
            elif family == "LRF":
                x = rng.normal(size=n)
                y = rng.normal(size=n)
                st = TunablePrimitiveState("LRF", 0, 0, np.array([0.0, 1.0]))
                tuned = tune_function(st, x, y)
                ref = np.linalg.pinv(np.column_stack([np.ones(n), x])) @ y
                worst = max(worst, rel_gap(tuned.coeffs, ref))
            else:
                r = int(rng.integers(1, 30))
                finals = rng.normal(size=(r, n))
                y = rng.normal(size=n)
                prog = Program(
                    (Instruction(0, "add", Inp(0), Inp(0)),),
                    register_count=r,
                    mvlr=TunablePrimitiveState("MVLR", 0, 0, np.zeros(r + 1)),
                )
                tuned = tune_mvlr(prog, finals, y)
                ref = np.linalg.pinv(mvlr_design(finals, r)) @ y
                worst = max(worst, rel_gap(tuned.mvlr.coeffs, ref))
    elapsed = time.perf_counter() - started
    passed = worst <= 1e-8 and elapsed < 5.0
    record_criterion(
        2,
        "least-squares tuners match the pseudo-inverse oracle",
        passed,
        f"max rel gap {worst:.2e}, {elapsed:.2f}s",
    )
    assert worst <= 1e-8
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 3: tuning is monotone across random (program, site, dataset) events


def test_criterion_03_tuning_monotonicity():
    events = 0
    violations = 0
    outer = np.random.default_rng(99)
    for block in range(10):
        engine = make_engine(n=30, d=20, seed=block, register_count=5, mvlr_r=3)
        programs = random_programs(engine, 60, seed=block + 100)
        for prog in programs:
            if events >= 1000:
                break
            _, tr = execute(prog, engine.X, trace=True)
            sites = [("head", None)] if prog.mvlr is not None else []
            sites += [("terminal", key) for key in tr.terminal_inputs]
            sites += [("function", idx) for idx in tr.function_inputs]
            outer.shuffle(sites)
            for family, key in sites[:4]:
                if events >= 1000:
                    break
                events += 1
                if family == "head":
                    pre = sse(head_predictions(prog, tr.register_finals), engine.Y)
                    tuned = tune_mvlr(prog, tr, engine.Y)
                    post = sse(head_predictions(tuned, tr.register_finals), engine.Y)
                elif family == "terminal":
                    idx, slot = key
                    ins = prog.instructions[idx]
                    state = getattr(ins, slot)
                    slices = tr.terminal_inputs[key]
                    pre = sse(terminal_values(state, engine.X), engine.Y)
                    tuned = tune_terminal(state, slices, engine.Y)
                    post = sse(terminal_values(tuned, engine.X), engine.Y)
                else:
                    state = prog.instructions[key].func
                    x = tr.function_inputs[key]
                    pre = function_loss(state, x, engine.Y)
                    tuned = tune_function(state, x, engine.Y)
                    post = function_loss(tuned, x, engine.Y)
                if not post <= pre + 1e-9:
                    violations += 1
        if events >= 1000:
            break
    passed = events >= 1000 and violations == 0
    record_criterion(
        3,
        "tuning never increases a site's loss",
        passed,
        f"{violations} violations in {events} events",
    )
    assert events >= 1000
    assert violations == 0


# ---------------------------------------------------------------------------
# 4: removing non-effective code never changes predictions


def test_criterion_04_intron_soundness(rng):
    X = rng.normal(size=(100, 24))
    mismatches = 0
    checked = 0
    for block in range(5):
        engine = make_engine(n=20, d=24, seed=block, register_count=6, mvlr_r=3,
                             use_mvlr=(block % 2 == 0))
        for prog in random_programs(engine, 100, seed=200 + block):
            mask = effective_instructions(prog)
            full, _ = execute(prog, X)
            masked, _ = execute(prog, X, mask=mask)
            checked += 1
            if not np.array_equal(full, masked):
                mismatches += 1
    passed = checked == 500 and mismatches == 0
    record_criterion(
        4,
        "effective-only execution is bit-exact",
        passed,
        f"{mismatches} mismatches over {checked} programs x 100 instances",
    )
    assert checked == 500
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 5: the search recovers a synthetic spectral target


def test_criterion_05_synthetic_spectral_recovery(full_runs):
    r2 = full_runs["r2"]
    hits = int((r2 >= 0.90).sum())
    elapsed = full_runs["elapsed"]
    passed = hits >= 8 and elapsed < 300.0
    record_criterion(
        5,
        "synthetic spectral recovery",
        passed,
        f"held-out R2 >= 0.90 in {hits}/{SEED_COUNT} seeds, {elapsed:.0f}s",
    )
    assert hits >= 8
    assert elapsed < 300.0


# ---------------------------------------------------------------------------
# 6: the tunable system does not lose to the plain register machine


def test_criterion_06_ablation_ordering(full_runs, basic_runs):
    full = full_runs["r2"]
    basic = basic_runs["r2"]
    wins = int((full > basic).sum())
    passed = full.mean() >= basic.mean() - 0.02 and wins >= 6
    record_criterion(
        6,
        "tunable system vs plain register machine",
        passed,
        f"mean R2 {full.mean():.3f} vs {basic.mean():.3f}, wins {wins}/{SEED_COUNT}",
    )
    assert full.mean() >= basic.mean() - 0.02
    assert wins >= 6


# ---------------------------------------------------------------------------
# 7: the published split and augmentation protocol


def test_criterion_07_protocol_fidelity(rng):
    groups = [f"fish{i}" for i in range(39) for _ in range(3)]
    ds = SpectralDataset(
        rng.normal(size=(117, 8)),
        np.linspace(1900.0, 600.0, 8),
        rng.normal(size=117),
        tuple(groups),
    )
    folds = grouped_kfold(ds, k=6, rng=rng)
    counts = sorted(len({ds.groups[i] for i in test}) for _, test in folds)
    split_ok = counts == [6, 6, 6, 7, 7, 7] and all(
        not ({ds.groups[i] for i in tr} & {ds.groups[i] for i in te}) for tr, te in folds
    )

    fold = SpectralDataset(
        rng.normal(size=(100, 12)),
        np.linspace(1900.0, 600.0, 12),
        rng.normal(size=100),
        tuple(f"g{i % 10}" for i in range(100)),
    )
    grown = augment(fold, factor=50.0, rng=rng)
    new_rows = int(grown.augmented_mask.sum())
    originals = set(fold.Y.tolist())
    spectral = grown.Y[100 : 100 + 2450]
    mixup = grown.Y[100 + 2450 : 100 + 3675]
    gaussian = grown.Y[100 + 3675 :]
    aug_ok = (
        grown.n == 5000
        and new_rows == 4900
        and all(y in originals for y in spectral.tolist())
        and all(y in originals for y in gaussian.tolist())
        and gaussian.shape == (1225,)
        and sum(y not in originals for y in mixup.tolist()) > 1100
    )
    passed = split_ok and aug_ok
    record_criterion(
        7,
        "grouped folds and 50x augmentation protocol",
        passed,
        f"fold group sizes {counts}, new rows {new_rows} (2450/1225/1225)",
    )
    assert split_ok
    assert aug_ok


# ---------------------------------------------------------------------------
# 8: effective size starts small, trends upward, never exceeds the cap


def test_criterion_08_effective_size_trajectory(full_runs):
    start_ok = trend_ok = cap_ok = 0
    rhos = []
    for history in full_runs["histories"]:
        sizes = np.array([rec.mean_effective_size for rec in history])
        rho = float(spearmanr(sizes, np.arange(sizes.size)).statistic)
        rhos.append(rho)
        start_ok += sizes[0] < 12.0
        trend_ok += rho > 0.5
        cap_ok += sizes.max() <= 50.0
    passed = start_ok == SEED_COUNT and trend_ok == SEED_COUNT and cap_ok == SEED_COUNT
    record_criterion(
        8,
        "effective-size trajectory",
        passed,
        f"gen-0 < 12 in {start_ok}/10, rho > 0.5 in {trend_ok}/10 (min {min(rhos):.2f}), cap in {cap_ok}/10",
    )
    assert start_ok == SEED_COUNT
    assert trend_ok == SEED_COUNT
    assert cap_ok == SEED_COUNT


# ---------------------------------------------------------------------------
# 9: training runs reproduce byte-for-byte; worker pools change nothing


def _write_training_inputs(root):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(24, 12))
    y = 2.0 * X[:, 2:5].mean(axis=1) + rng.normal(scale=0.1, size=24)
    ds = SpectralDataset(
        X,
        np.linspace(1900.0, 600.0, 12),
        y,
        tuple(f"s{i // 3}" for i in range(24)),
    )
    data = root / "data.csv"
    save_csv(ds, data)
    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "schema_version": 1,
                "mode": "fish",
                "seed": 123,
                "population_size": 12,
                "generations": 2,
                "max_program_size": 8,
                "register_count": 5,
                "mvlr_r": 3,
                "repeats": 2,
                "folds": 2,
            }
        )
    )
    return data, config


def test_criterion_09_determinism(tmp_path):
    data, config = _write_training_inputs(tmp_path)

    def train(out, workers):
        rc = cli.main(
            [
                "train",
                "--config",
                str(config),
                "--data",
                str(data),
                "--out",
                str(out),
                "--workers",
                str(workers),
            ]
        )
        assert rc == 0
        return {
            p.name: p.read_bytes()
            for p in Path(out).iterdir()
            if p.name != "timing.json"
        }

    run_a = train(tmp_path / "a", 1)
    run_b = train(tmp_path / "b", 1)
    run_c = train(tmp_path / "c", 8)
    serial_identical = run_a == run_b
    pooled_identical = run_a == run_c
    passed = serial_identical and pooled_identical
    record_criterion(
        9,
        "byte-identical reruns; worker count changes nothing",
        passed,
        f"serial rerun identical: {serial_identical}, 8-worker run identical: {pooled_identical}",
    )
    assert serial_identical
    assert pooled_identical


# ---------------------------------------------------------------------------
# 10: the tabular-benchmark preset completes on small public problems


def test_criterion_10_tabular_benchmark_smoke():
    diabetes = load_diabetes()
    f1_X, f1_y = make_friedman1(n_samples=500, n_features=10, noise=1.0, random_state=0)
    f3_X, f3_y = make_friedman3(n_samples=500, noise=0.01, random_state=0)
    problems = [
        ("diabetes", np.asarray(diabetes.data, float), np.asarray(diabetes.target, float)),
        ("friedman1", np.asarray(f1_X, float), np.asarray(f1_y, float)),
        ("friedman3", np.asarray(f3_X, float), np.asarray(f3_y, float)),
    ]
    details = []
    passed = True
    for name, X, y in problems:
        assert X.shape[0] < 2000
        split = int(0.75 * X.shape[0])
        cfg = EvolutionConfig.for_mode("srbench", seed=0)
        started = time.perf_counter()
        best, _ = Evolution(cfg, X[:split], y[:split]).evolve()
        elapsed = time.perf_counter() - started
        _, r2 = regression_metrics(predict(best.program, X[split:]), y[split:])
        model_size = 2 * int(effective_instructions(best.program).sum())
        ok = np.isfinite(r2) and model_size <= 100 and elapsed < 600.0
        passed = passed and ok
        details.append(f"{name}: R2={r2:.3f} size={model_size} {elapsed:.0f}s")
        assert np.isfinite(r2), name
        assert model_size <= 100, name
        assert elapsed < 600.0, name
    record_criterion(10, "tabular-benchmark preset smoke", passed, "; ".join(details))
