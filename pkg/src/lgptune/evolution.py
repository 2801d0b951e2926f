"""Population search over register programs.

Tournament selection with a small elite feeds exactly one structure
operator per offspring: macro mutation (insert/delete an instruction),
micro mutation (replace one field, tuning any coefficient-bearing site it
touches), two-segment crossover, or an adjacent swap. After every operator
the program head is refit on the training targets, so structural search
and coefficient fitting stay interleaved.

Randomness is split per offspring from the master seed, which makes runs
bit-identical for any worker count.
"""
from __future__ import annotations

import multiprocessing
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import primitives as prim
from . import tuning
from .errors import ConfigError
from .program import (
    Inp,
    Instruction,
    Program,
    Reg,
    TunablePrimitiveState,
    effective_instructions,
    execute,
    head_predictions,
    predict,
)

INIT_LENGTH_RANGE = (1, 10)
CROSSOVER_SEGMENT_MAX = 10

OPERATOR_NAMES = ("macro_mut", "micro_mut", "crossover", "swap")

_MODE_DEFAULTS = {
    "fish": dict(
        population_size=250,
        generations=100,
        max_program_size=50,
        register_count=30,
        mvlr_r=20,
        cap_fraction=0.5,
        terminal_kinds=prim.TERMINAL_KINDS,
    ),
    "srbench": dict(
        population_size=500,
        generations=200,
        max_program_size=50,
        register_count=8,
        mvlr_r=4,
        cap_fraction=0.1,
        terminal_kinds=("LR",),
    ),
}


def default_operator_rates() -> dict:
    return {"macro_mut": 0.3, "micro_mut": 0.3, "crossover": 0.3, "swap": 0.1}


@dataclass(frozen=True)
class EvolutionConfig:
    """Search settings; `for_mode` fills the two published presets."""

    mode: str = "fish"
    population_size: int = 250
    generations: int = 100
    max_program_size: int = 50
    register_count: int = 30
    mvlr_r: int = 20
    cap_fraction: float = 0.5
    operator_rates: dict = field(default_factory=default_operator_rates)
    tournament_size: int = 7
    elitism: int = 1
    gd_steps: int = 5
    gd_step_size: float = 0.1
    seed: int = 0
    terminal_kinds: tuple = prim.TERMINAL_KINDS
    function_kinds: tuple = prim.FUNCTION_KINDS
    raw_inputs: bool = True
    use_mvlr: bool = True

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "EvolutionConfig":
        if mode not in _MODE_DEFAULTS:
            raise ConfigError(f"unknown mode '{mode}'")
        merged = dict(_MODE_DEFAULTS[mode])
        merged.update(overrides)
        cfg = cls(mode=mode, **merged)
        cfg.validate()
        return cfg

    def validate(self):
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.max_program_size < 1:
            raise ConfigError("max_program_size must be >= 1")
        if self.register_count < 1:
            raise ConfigError("register_count must be >= 1")
        if self.use_mvlr and not 1 <= self.mvlr_r <= self.register_count:
            raise ConfigError("mvlr_r must lie in [1, register_count]")
        if not 0.0 < self.cap_fraction <= 1.0:
            raise ConfigError("cap_fraction must lie in (0, 1]")
        if self.tournament_size < 1:
            raise ConfigError("tournament_size must be >= 1")
        if not 0 <= self.elitism < self.population_size:
            raise ConfigError("elitism must lie in [0, population_size)")
        if self.gd_steps < 0 or self.gd_step_size <= 0:
            raise ConfigError("bad gradient-descent settings")
        if set(self.operator_rates) != set(OPERATOR_NAMES):
            raise ConfigError(f"operator_rates needs exactly the keys {OPERATOR_NAMES}")
        total = sum(self.operator_rates.values())
        if any(v < 0 for v in self.operator_rates.values()) or abs(total - 1.0) > 1e-9:
            raise ConfigError("operator_rates must be non-negative and sum to 1")

    def catalog(self, feature_count: int) -> prim.PrimitiveCatalog:
        return prim.PrimitiveCatalog(
            feature_count=feature_count,
            terminal_kinds=tuple(self.terminal_kinds),
            function_kinds=tuple(self.function_kinds),
            raw_inputs=self.raw_inputs,
            cap_fraction=self.cap_fraction,
        )


@dataclass(frozen=True)
class Individual:
    program: Program
    fitness: float  # training MSE
    r2: float       # training R^2


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_r2: float
    mean_effective_size: float
    elapsed: float
    test_mse: Optional[float] = None
    test_r2: Optional[float] = None


def regression_metrics(predictions, targets):
    """(MSE, R^2); a constant target column scores 1 only on a perfect fit."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    resid = p - y
    mse = float(np.mean(resid * resid))
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    return mse, r2


def _offspring_rng(seed: int, spawn_key: tuple) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=spawn_key))


class Evolution:
    """Breeding engine bound to one training set."""

    def __init__(self, config: EvolutionConfig, X, Y):
        config.validate()
        self.config = config
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ConfigError("X must be (n, d) with one target per row")
        if self.X.shape[0] < 1:
            raise ConfigError("training set is empty")
        self.catalog = config.catalog(self.X.shape[1])
        self.n_features = self.X.shape[1]
        self._usable_kinds = self.catalog.usable_terminal_kinds()
        cats = ["reg"]
        if self.catalog.raw_inputs:
            cats.append("inp")
        if self._usable_kinds:
            cats.append("term")
        self._operand_categories = tuple(cats)
        self._func_pool = tuple(self.catalog.basic_functions) + tuple(
            self.catalog.function_kinds
        )
        if not self._func_pool:
            raise ConfigError("the function pool is empty")

    # ------------------------------------------------------------------
    # random construction

    def random_terminal_state(self, rng) -> TunablePrimitiveState:
        """Fresh terminal: random kind, random capped range, neutral
        coefficients (intercept 0, unit slope) awaiting their first tune."""
        kind = self._usable_kinds[rng.integers(len(self._usable_kinds))]
        lo = prim.min_range_width(kind)
        hi = self.catalog.max_range_width()
        width = int(rng.integers(lo, hi + 1))
        alpha = int(rng.integers(self.n_features - width + 1))
        beta = alpha + width - 1
        coeffs = np.zeros(prim.coeff_length(kind, alpha, beta))
        coeffs[1:] = 1.0
        return TunablePrimitiveState(kind, alpha, beta, coeffs)

    def random_function_state(self, rng, kind: str) -> TunablePrimitiveState:
        coeffs = rng.uniform(-prim.OMEGA_LIMIT, prim.OMEGA_LIMIT, prim.coeff_length(kind))
        return TunablePrimitiveState(kind, 0, 0, coeffs)

    def random_operand(self, rng):
        cat = self._operand_categories[rng.integers(len(self._operand_categories))]
        if cat == "reg":
            return Reg(int(rng.integers(self.config.register_count)))
        if cat == "inp":
            return Inp(int(rng.integers(self.n_features)))
        return self.random_terminal_state(rng)

    def random_func(self, rng):
        token = self._func_pool[rng.integers(len(self._func_pool))]
        if token in prim.FUNCTION_KINDS:
            return self.random_function_state(rng, token)
        return token

    def random_instruction(self, rng) -> Instruction:
        return Instruction(
            dest=int(rng.integers(self.config.register_count)),
            func=self.random_func(rng),
            op1=self.random_operand(rng),
            op2=self.random_operand(rng),
        )

    def random_program(self, rng) -> Program:
        length = int(rng.integers(INIT_LENGTH_RANGE[0], INIT_LENGTH_RANGE[1] + 1))
        instructions = tuple(self.random_instruction(rng) for _ in range(length))
        mvlr = None
        if self.config.use_mvlr:
            mvlr = TunablePrimitiveState("MVLR", 0, 0, np.zeros(self.config.mvlr_r + 1))
        return Program(instructions, self.config.register_count, mvlr)

    # ------------------------------------------------------------------
    # evaluation

    def finish(self, program: Program) -> Individual:
        """Refit the head, then score the program on the training set."""
        _, tr = execute(program, self.X, trace=True)
        return self._tune_head_and_score(program, tr.register_finals)

    def _tune_head_and_score(self, program: Program, finals) -> Individual:
        if program.mvlr is not None:
            program = tuning.tune_mvlr(program, finals, self.Y)
        preds = prim.clamp_finite(head_predictions(program, finals))
        mse, r2 = regression_metrics(preds, self.Y)
        return Individual(program, mse, r2)

    def init_population(self, rng) -> list:
        return [self.finish(self.random_program(rng)) for _ in range(self.config.population_size)]

    # ------------------------------------------------------------------
    # selection

    def select(self, population, rng) -> Individual:
        """Size-k tournament without replacement; ties go to the earlier
        population index."""
        k = min(self.config.tournament_size, len(population))
        drawn = rng.choice(len(population), size=k, replace=False)
        best = min(drawn, key=lambda i: (population[i].fitness, i))
        return population[int(best)]

    # ------------------------------------------------------------------
    # structure operators

    def macro_mutate(self, program: Program, rng) -> Program:
        """Insert or delete one instruction (fair coin, with fallbacks at
        the size bounds)."""
        instructions = list(program.instructions)
        insert = bool(rng.random() < 0.5)
        if insert and len(instructions) >= self.config.max_program_size:
            insert = False
        elif not insert and len(instructions) <= 1:
            insert = True
        if insert:
            pos = int(rng.integers(len(instructions) + 1))
            instructions.insert(pos, self.random_instruction(rng))
        else:
            del instructions[int(rng.integers(len(instructions)))]
        return program.with_instructions(instructions)

    def swap_mutate(self, program: Program, rng) -> Program:
        """Exchange an adjacent instruction pair; identity on length-1."""
        if len(program) < 2:
            return program
        instructions = list(program.instructions)
        i = int(rng.integers(len(instructions) - 1))
        instructions[i], instructions[i + 1] = instructions[i + 1], instructions[i]
        return program.with_instructions(instructions)

    def crossover(self, parent_a: Program, parent_b: Program, rng):
        """Exchange one contiguous segment (length <= 10) per parent.

        Children longer than max_program_size are truncated from the tail,
        ahead of the head. Without truncation the instruction multiset over
        both children equals the one over both parents.
        """
        a = list(parent_a.instructions)
        b = list(parent_b.instructions)
        la = int(rng.integers(1, min(CROSSOVER_SEGMENT_MAX, len(a)) + 1))
        sa = int(rng.integers(len(a) - la + 1))
        lb = int(rng.integers(1, min(CROSSOVER_SEGMENT_MAX, len(b)) + 1))
        sb = int(rng.integers(len(b) - lb + 1))
        child_a = a[:sa] + b[sb : sb + lb] + a[sa + la :]
        child_b = b[:sb] + a[sa : sa + la] + b[sb + lb :]
        limit = self.config.max_program_size
        return (
            parent_a.with_instructions(child_a[:limit]),
            parent_b.with_instructions(child_b[:limit]),
        )

    def micro_mutate(self, program: Program, rng) -> Program:
        """Replace one field of one instruction; see `_micro_offspring`."""
        return self._micro_offspring(program, rng).program

    def _replace_dest(self, rng, current: int) -> int:
        if self.config.register_count < 2:
            return current
        while True:
            cand = int(rng.integers(self.config.register_count))
            if cand != current:
                return cand

    def _replace_func(self, rng, current):
        for _ in range(16):
            cand = self.random_func(rng)
            if isinstance(cand, TunablePrimitiveState) or cand != current:
                return cand
        return cand

    def _replace_operand(self, rng, current):
        for _ in range(16):
            cand = self.random_operand(rng)
            if isinstance(cand, TunablePrimitiveState) or cand != current:
                return cand
        return cand

    def _micro_offspring(self, program: Program, rng) -> Individual:
        """One micro mutation, scored.

        Replaces dest, func, op1 or op2 of a random instruction (never the
        instruction count). When the new field is a coefficient-bearing
        site, the site is tuned against the targets on a traced execution;
        the tuned variant is kept only if it scores at least as well as the
        untuned one after each head refit.
        """
        idx = int(rng.integers(len(program)))
        ins = program.instructions[idx]
        slot = ("dest", "func", "op1", "op2")[int(rng.integers(4))]
        if slot == "dest":
            new_ins = Instruction(self._replace_dest(rng, ins.dest), ins.func, ins.op1, ins.op2)
        elif slot == "func":
            new_ins = Instruction(ins.dest, self._replace_func(rng, ins.func), ins.op1, ins.op2)
        elif slot == "op1":
            new_ins = Instruction(ins.dest, ins.func, self._replace_operand(rng, ins.op1), ins.op2)
        else:
            new_ins = Instruction(ins.dest, ins.func, ins.op1, self._replace_operand(rng, ins.op2))

        instructions = list(program.instructions)
        instructions[idx] = new_ins
        candidate = program.with_instructions(instructions)
        _, tr = execute(candidate, self.X, trace=True)
        untuned = self._tune_head_and_score(candidate, tr.register_finals)

        touched = getattr(new_ins, slot) if slot != "dest" else None
        if not isinstance(touched, TunablePrimitiveState):
            return untuned
        tuned_state = self._tune_site(touched, slot, idx, tr)
        if tuned_state is None:
            return untuned
        tuned_ins = Instruction(
            new_ins.dest,
            tuned_state if slot == "func" else new_ins.func,
            tuned_state if slot == "op1" else new_ins.op1,
            tuned_state if slot == "op2" else new_ins.op2,
        )
        instructions[idx] = tuned_ins
        tuned_prog = program.with_instructions(instructions)
        _, tr2 = execute(tuned_prog, self.X, trace=True)
        tuned = self._tune_head_and_score(tuned_prog, tr2.register_finals)
        return tuned if tuned.fitness <= untuned.fitness else untuned

    def _tune_site(self, state, slot, idx, tr):
        """Tune one traced site; returns None when the site was never read
        (an unused operand of a unary instruction)."""
        if state.is_function:
            x = tr.function_inputs.get(idx)
            if x is None:
                return None
            return tuning.tune_function(
                state, x, self.Y, steps=self.config.gd_steps, step_size=self.config.gd_step_size
            )
        slices = tr.terminal_inputs.get((idx, slot))
        if slices is None:
            return None
        return tuning.tune_terminal(state, slices, self.Y)

    # ------------------------------------------------------------------
    # offspring pipeline

    def build_offspring(self, op: str, parents, spawn_key) -> Individual:
        """Apply one operator with an offspring-local RNG stream."""
        rng = _offspring_rng(self.config.seed, tuple(spawn_key))
        if op == "macro_mut":
            return self.finish(self.macro_mutate(parents[0], rng))
        if op == "micro_mut":
            return self._micro_offspring(parents[0], rng)
        if op == "crossover":
            child, _ = self.crossover(parents[0], parents[1], rng)
            return self.finish(child)
        if op == "swap":
            return self.finish(self.swap_mutate(parents[0], rng))
        raise ConfigError(f"unknown operator '{op}'")

    # ------------------------------------------------------------------
    # main loop

    def evolve(self, progress: Optional[Callable] = None, workers: int = 1, validation=None):
        """Run the generational loop; returns (best Individual, history).

        `validation` is an optional (X, Y) pair; when given, each history
        record carries the best-so-far individual's held-out metrics.
        """
        cfg = self.config
        started = time.perf_counter()
        rng_init = _offspring_rng(cfg.seed, (0, 0))
        master = _offspring_rng(cfg.seed, (0, 1))
        population = self.init_population(rng_init)

        history = []
        best = min(population, key=lambda ind: ind.fitness)
        val_cache = {}

        def record(gen):
            rec = self._generation_record(
                gen, population, best, validation, val_cache, time.perf_counter() - started
            )
            history.append(rec)
            if progress is not None:
                progress(rec)

        record(0)
        pool = None
        op_names = list(OPERATOR_NAMES)
        op_probs = np.array([cfg.operator_rates[o] for o in op_names])
        try:
            if workers > 1:
                pool = multiprocessing.get_context("fork").Pool(
                    workers, initializer=_worker_init, initargs=(cfg, self.X, self.Y)
                )
            for gen in range(1, cfg.generations + 1):
                elites = sorted(
                    range(len(population)), key=lambda i: (population[i].fitness, i)
                )[: cfg.elitism]
                tasks = []
                for slot in range(cfg.population_size - cfg.elitism):
                    op = op_names[int(master.choice(len(op_names), p=op_probs))]
                    n_parents = 2 if op == "crossover" else 1
                    parents = tuple(
                        self.select(population, master).program for _ in range(n_parents)
                    )
                    tasks.append((op, parents, (1, gen, slot)))
                if pool is not None:
                    offspring = pool.map(_worker_build, tasks, chunksize=8)
                else:
                    offspring = [self.build_offspring(*task) for task in tasks]
                population = [population[i] for i in elites] + offspring
                gen_best = min(population, key=lambda ind: ind.fitness)
                if gen_best.fitness < best.fitness:
                    best = gen_best
                record(gen)
        finally:
            if pool is not None:
                pool.close()
                pool.join()
        return best, history

    def _generation_record(self, gen, population, best, validation, val_cache, elapsed):
        fits = np.array([ind.fitness for ind in population])
        sizes = [
            int(effective_instructions(ind.program).sum()) for ind in population
        ]
        test_mse = test_r2 = None
        if validation is not None:
            key = id(best.program)
            if key not in val_cache:
                preds = predict(best.program, validation[0])
                val_cache.clear()
                val_cache[key] = regression_metrics(preds, validation[1])
            test_mse, test_r2 = val_cache[key]
        pop_best = min(range(len(population)), key=lambda i: (population[i].fitness, i))
        return GenerationRecord(
            generation=gen,
            best_fitness=float(fits.min()),
            mean_fitness=float(fits.mean()),
            best_r2=float(population[pop_best].r2),
            mean_effective_size=float(np.mean(sizes)),
            elapsed=float(elapsed),
            test_mse=test_mse,
            test_r2=test_r2,
        )


# worker-pool plumbing: each worker holds its own engine on the same data,
# so offspring results depend only on (config, data, spawn_key).
_WORKER_ENGINE = None


def _worker_init(config, X, Y):
    global _WORKER_ENGINE
    _WORKER_ENGINE = Evolution(config, X, Y)


def _worker_build(task):
    op, parents, spawn_key = task
    return _WORKER_ENGINE.build_offspring(op, parents, spawn_key)


def evolve(config: EvolutionConfig, X, Y, progress=None, workers: int = 1, validation=None):
    """Convenience wrapper: build an engine and run it."""
    return Evolution(config, X, Y).evolve(progress=progress, workers=workers, validation=validation)
