"""Shared builders for the tests: random programs drawn from the real
search distribution and small synthetic datasets."""
import numpy as np

from lgptune.evolution import Evolution, EvolutionConfig


def make_engine(
    n=40,
    d=24,
    seed=0,
    register_count=6,
    mvlr_r=3,
    use_mvlr=True,
    terminal_kinds=None,
    population_size=10,
    generations=1,
    **overrides,
):
    """A small engine over random data; its random_program is the canonical
    source of structurally valid random programs."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    Y = rng.normal(size=n)
    kwargs = dict(
        population_size=population_size,
        generations=generations,
        register_count=register_count,
        mvlr_r=mvlr_r,
        use_mvlr=use_mvlr,
        seed=seed,
    )
    if terminal_kinds is not None:
        kwargs["terminal_kinds"] = terminal_kinds
    kwargs.update(overrides)
    cfg = EvolutionConfig.for_mode("fish", **kwargs)
    return Evolution(cfg, X, Y)


def random_programs(engine, count, seed=1):
    rng = np.random.default_rng(seed)
    return [engine.random_program(rng) for _ in range(count)]
