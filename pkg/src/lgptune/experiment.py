"""Batch experiment driver.

Runs repeated group-aware cross-validation, writes one JSON report per
repeat plus an aggregate summary, and provides the two model inspection
outputs: a DOT graph of a model's effective computation and a
kind-by-percentile coverage table of the tunable range terminals used by
best-of-run models.

Report files contain no wall-clock values; timings go to a sidecar file so
that rerunning with the same seed reproduces every report byte for byte.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as data_mod
from . import primitives as prim
from .errors import ConfigError, ParseError
from .evolution import Evolution, EvolutionConfig, default_operator_rates
from .program import (
    Inp,
    Program,
    Reg,
    TunablePrimitiveState,
    effective_instructions,
    execute,
    predict,
    program_from_text,
    program_to_text,
)
from .evolution import regression_metrics

SCHEMA_VERSION = 1

_RUN_KEYS = ("schema_version", "mode", "seed", "repeats", "folds", "augment_factor", "augment_mix", "treatment")
_EVOLUTION_KEYS = (
    "population_size",
    "generations",
    "max_program_size",
    "register_count",
    "mvlr_r",
    "cap_fraction",
    "operator_rates",
    "tournament_size",
    "elitism",
    "gd_steps",
    "gd_step_size",
    "terminal_kinds",
    "function_kinds",
    "raw_inputs",
    "use_mvlr",
)


@dataclass(frozen=True)
class RunConfig:
    """Resolved experiment settings: split/augmentation protocol plus the
    full evolution configuration."""

    evolution: EvolutionConfig
    repeats: int = 10
    folds: int = 6
    augment_factor: float = 1.0
    augment_mix: tuple = data_mod.DEFAULT_AUGMENT_MIX
    treatment: Optional[str] = None

    def validate(self):
        self.evolution.validate()
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.augment_factor < 1.0:
            raise ConfigError("augment_factor must be >= 1")
        if self.treatment is not None and self.treatment not in data_mod.TREATMENT_PRESETS:
            raise ConfigError(f"unknown treatment '{self.treatment}'")


def resolve_run_config(values: dict) -> RunConfig:
    """Expand a raw key-value mapping into a full RunConfig.

    Unknown keys are rejected by name. `mode` selects the preset the other
    keys override.
    """
    values = dict(values)
    version = values.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    mode = values.pop("mode", "fish")
    run_kwargs = {}
    for key in ("repeats", "folds", "augment_factor", "treatment"):
        if key in values:
            run_kwargs[key] = values.pop(key)
    if "augment_mix" in values:
        run_kwargs["augment_mix"] = tuple(values.pop("augment_mix"))
    evo_kwargs = {}
    for key in _EVOLUTION_KEYS + ("seed",):
        if key in values:
            evo_kwargs[key] = values.pop(key)
    if values:
        raise ConfigError(f"unknown configuration key: '{sorted(values)[0]}'")
    if "terminal_kinds" in evo_kwargs:
        evo_kwargs["terminal_kinds"] = tuple(evo_kwargs["terminal_kinds"])
    if "function_kinds" in evo_kwargs:
        evo_kwargs["function_kinds"] = tuple(evo_kwargs["function_kinds"])
    evolution = EvolutionConfig.for_mode(mode, **evo_kwargs)
    cfg = RunConfig(evolution=evolution, **run_kwargs)
    cfg.validate()
    return cfg


def read_raw_config(path) -> dict:
    try:
        with open(path) as fh:
            values = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(values, dict):
        raise ParseError(f"{path}: the configuration must be a JSON object")
    return values


def load_run_config(path) -> RunConfig:
    return resolve_run_config(read_raw_config(path))


def run_config_dict(cfg: RunConfig) -> dict:
    """Fully expanded, JSON-ready view of a RunConfig."""
    evo = cfg.evolution
    out = {
        "schema_version": SCHEMA_VERSION,
        "mode": evo.mode,
        "seed": int(evo.seed),
        "repeats": int(cfg.repeats),
        "folds": int(cfg.folds),
        "augment_factor": float(cfg.augment_factor),
        "augment_mix": [float(v) for v in cfg.augment_mix],
        "treatment": cfg.treatment,
        "population_size": int(evo.population_size),
        "generations": int(evo.generations),
        "max_program_size": int(evo.max_program_size),
        "register_count": int(evo.register_count),
        "mvlr_r": int(evo.mvlr_r),
        "cap_fraction": float(evo.cap_fraction),
        "operator_rates": {k: float(v) for k, v in sorted(evo.operator_rates.items())},
        "tournament_size": int(evo.tournament_size),
        "elitism": int(evo.elitism),
        "gd_steps": int(evo.gd_steps),
        "gd_step_size": float(evo.gd_step_size),
        "terminal_kinds": list(evo.terminal_kinds),
        "function_kinds": list(evo.function_kinds),
        "raw_inputs": bool(evo.raw_inputs),
        "use_mvlr": bool(evo.use_mvlr),
    }
    return out


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fold_seed(master_seed: int, repeat: int, fold: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(3, repeat, fold))
    return int(ss.generate_state(1)[0])


def _history_entry(rec) -> dict:
    out = {
        "generation": int(rec.generation),
        "best_fitness": float(rec.best_fitness),
        "mean_fitness": float(rec.mean_fitness),
        "best_r2": float(rec.best_r2),
        "mean_effective_size": float(rec.mean_effective_size),
    }
    if rec.test_r2 is not None:
        out["test_mse"] = float(rec.test_mse)
        out["test_r2"] = float(rec.test_r2)
    return out


def run_training(cfg: RunConfig, dataset: data_mod.SpectralDataset, out_dir, workers: int = 1) -> dict:
    """Repeated group-aware cross-validation; returns the summary dict.

    Writes resolved_config.json, report_rep*.json, per-fold best programs,
    summary.json / summary.tsv, and a timing sidecar. status.txt reads
    'incomplete' while the run is in flight.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(run_config_dict(cfg), out / "resolved_config.json")
    (out / "status.txt").write_text("incomplete\n")
    started = time.perf_counter()

    if cfg.treatment is not None:
        dataset = data_mod.apply_treatment(dataset, cfg.treatment)

    all_test_r2 = []
    per_repeat_mean = []
    repeat_seconds = []
    summary_rows = []
    for rep in range(cfg.repeats):
        rep_started = time.perf_counter()
        split_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.evolution.seed, spawn_key=(2, rep))
        )
        folds = data_mod.grouped_kfold(dataset, cfg.folds, split_rng)
        fold_entries = []
        rep_r2 = []
        for fi, (train_idx, test_idx) in enumerate(folds):
            train = dataset.subset(train_idx)
            test = dataset.subset(test_idx)
            if cfg.augment_factor > 1.0:
                aug_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=cfg.evolution.seed, spawn_key=(4, rep, fi))
                )
                train = data_mod.augment(train, cfg.augment_factor, cfg.augment_mix, aug_rng)
            evo_cfg = replace(cfg.evolution, seed=_fold_seed(cfg.evolution.seed, rep, fi))
            engine = Evolution(evo_cfg, train.X, train.Y)
            best, history = engine.evolve(workers=workers, validation=(test.X, test.Y))
            test_preds = predict(best.program, test.X)
            test_mse, test_r2 = regression_metrics(test_preds, test.Y)
            program_text = program_to_text(best.program)
            (out / f"best_program_rep{rep:02d}_fold{fi}.lgp").write_text(program_text)
            fold_entries.append(
                {
                    "fold": fi,
                    "train_rows": int(train.n),
                    "test_rows": int(test.n),
                    "train_mse": float(best.fitness),
                    "train_r2": float(best.r2),
                    "test_mse": float(test_mse),
                    "test_r2": float(test_r2),
                    "effective_size": int(effective_instructions(best.program).sum()),
                    "best_program": program_text,
                    "history": [_history_entry(rec) for rec in history],
                }
            )
            rep_r2.append(test_r2)
            all_test_r2.append(test_r2)
            summary_rows.append((rep, fi, test_r2, test_mse))
        per_repeat_mean.append(float(np.mean(rep_r2)))
        _dump_json(
            {
                "schema_version": SCHEMA_VERSION,
                "repeat": rep,
                "config": run_config_dict(cfg),
                "feature_count": int(dataset.d),
                "folds": fold_entries,
                "mean_test_r2": float(np.mean(rep_r2)),
            },
            out / f"report_rep{rep:02d}.json",
        )
        repeat_seconds.append(time.perf_counter() - rep_started)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": run_config_dict(cfg),
        "fold_count": len(all_test_r2),
        "test_r2_mean": float(np.mean(all_test_r2)),
        "test_r2_std": float(np.std(all_test_r2)),
        "per_repeat_mean_test_r2": per_repeat_mean,
    }
    _dump_json(summary, out / "summary.json")
    lines = ["repeat\tfold\ttest_r2\ttest_mse"]
    for rep, fi, r2, mse in summary_rows:
        lines.append(f"{rep}\t{fi}\t{r2!r}\t{mse!r}")
    lines.append(f"mean\t-\t{summary['test_r2_mean']!r}\t-")
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    _dump_json(
        {
            "total_seconds": time.perf_counter() - started,
            "per_repeat_seconds": repeat_seconds,
        },
        out / "timing.json",
    )
    (out / "status.txt").write_text("complete\n")
    return summary


# ---------------------------------------------------------------------------
# model graph export


def _sig4(value: float) -> str:
    return f"{float(value):.4g}"


def _coeff_text(coeffs) -> str:
    return "(" + ", ".join(_sig4(c) for c in coeffs) + ")"


def _state_label(state: TunablePrimitiveState) -> str:
    if state.is_terminal:
        return f"{state.kind}[{state.alpha}:{state.beta}] w={_coeff_text(state.coeffs)}"
    return f"{state.kind} w={_coeff_text(state.coeffs)}"


_STYLE = {
    "input": 'shape=box, style=filled, fillcolor="#f2f2f2"',
    "const": 'shape=box, style=filled, fillcolor="#f2f2f2"',
    "basic": 'shape=ellipse, style=filled, fillcolor="#dbe9f6"',
    # the two tunable families keep visually distinct tags
    "tunable_terminal": 'shape=box, style=filled, fillcolor="#f6c6d9"',
    "tunable_function": 'shape=ellipse, style=filled, fillcolor="#f5e663"',
    "head": 'shape=doubleoctagon, style=filled, fillcolor="#c9e7c5"',
}


def export_dag(program: Program) -> str:
    """DOT graph of the model's effective computation.

    One node per effective instruction, one per distinct leaf (raw inputs,
    tunable terminals, zero-initialized register reads), plus one output
    node; the head appears as weighted edges into the output node. Node
    count is therefore effective_instructions + distinct_leaves + 1.
    """
    mask = effective_instructions(program)
    lines = ["digraph model {", "  rankdir=BT;"]
    counter = [0]
    leaf_ids: dict = {}

    def new_node(label: str, style: str) -> str:
        node = f"n{counter[0]}"
        counter[0] += 1
        escaped = label.replace('"', '\\"')
        lines.append(f'  {node} [label="{escaped}", {_STYLE[style]}];')
        return node

    def leaf(label: str, style: str) -> str:
        if label not in leaf_ids:
            leaf_ids[label] = new_node(label, style)
        return leaf_ids[label]

    last_writer: dict = {}
    for i, ins in enumerate(program.instructions):
        if not mask[i]:
            continue
        if isinstance(ins.func, str):
            node = new_node(ins.func, "basic")
        else:
            node = new_node(_state_label(ins.func), "tunable_function")
        for op in ins.read_operands():
            if isinstance(op, Reg):
                src = last_writer.get(op.index) or leaf("0", "const")
            elif isinstance(op, Inp):
                src = leaf(f"x{op.index}", "input")
            else:
                src = leaf(_state_label(op), "tunable_terminal")
            lines.append(f"  {src} -> {node};")
        last_writer[ins.dest] = node

    if program.mvlr is not None:
        w = program.mvlr.coeffs
        out_node = new_node(f"MVLR intercept={_sig4(w[0])}", "head")
        for reg in range(program.mvlr_r):
            src = last_writer.get(reg)
            if src is None:
                continue  # an unwritten register contributes exactly 0
            lines.append(f'  {src} -> {out_node} [label="{_sig4(w[reg + 1])}"];')
    else:
        out_node = new_node("output R0", "head")
        src = last_writer.get(0) or leaf("0", "const")
        lines.append(f"  {src} -> {out_node};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dag_file(model_path, out_path=None) -> str:
    text = Path(model_path).read_text()
    dot = export_dag(program_from_text(text))
    if out_path is not None:
        Path(out_path).write_text(dot)
    return dot


# ---------------------------------------------------------------------------
# terminal-range frequency table

PERCENTILE_BINS = 100


def frequency_counts(programs, feature_count: int) -> np.ndarray:
    """(kind x percentile-bin) coverage counts over effective range
    terminals of the given models."""
    counts = np.zeros((len(prim.TERMINAL_KINDS), PERCENTILE_BINS), dtype=int)
    kind_row = {k: i for i, k in enumerate(prim.TERMINAL_KINDS)}
    for program in programs:
        mask = effective_instructions(program)
        for i, ins in enumerate(program.instructions):
            if not mask[i]:
                continue
            for op in ins.read_operands():
                if isinstance(op, TunablePrimitiveState) and op.is_terminal:
                    lo = (PERCENTILE_BINS * op.alpha) // feature_count
                    hi = (PERCENTILE_BINS * op.beta) // feature_count
                    counts[kind_row[op.kind], lo : hi + 1] += 1
    return counts


def frequency_table(run_dir) -> str:
    """Aggregate the coverage histogram over a run directory's reports and
    render it as a TSV (kinds as rows, percentile bins as columns)."""
    run_dir = Path(run_dir)
    reports = sorted(run_dir.glob("report_rep*.json"))
    if not reports:
        raise ConfigError(f"{run_dir}: no report_rep*.json files found")
    programs = []
    feature_count = None
    for path in reports:
        body = json.loads(path.read_text())
        feature_count = int(body["feature_count"])
        for fold in body["folds"]:
            programs.append(program_from_text(fold["best_program"]))
    counts = frequency_counts(programs, feature_count)
    header = "kind\t" + "\t".join(f"bin_{b}" for b in range(PERCENTILE_BINS))
    lines = [header]
    for row, kind in enumerate(prim.TERMINAL_KINDS):
        lines.append(kind + "\t" + "\t".join(str(v) for v in counts[row]))
    return "\n".join(lines) + "\n"
