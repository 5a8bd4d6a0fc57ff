"""Genetic search for CNN genes that evolve a seed state into a target mask."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import PAYLOAD_LEN, CAState, Gene, evolve_to_segmentation

N_TEMPLATE = 19  # A, B and z are evolved; dt is evolved separately within (0, 1]


@dataclass
class GAParams:
    population: int = 32
    generations: int = 60
    tournament: int = 3
    crossover: float = 0.8
    mutation: float = 0.05
    mutation_sigma: float = 0.3
    elitism: int = 2
    max_steps: int = 20
    init_scale: float = 1.0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be in [0, population)")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")


@dataclass
class GAResult:
    gene: Gene
    fitness: float
    mask: np.ndarray
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def best_curve(self) -> list[float]:
        return [h[1] for h in self.history]

    def write_log(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "best", "mean"])
            for g, best, mean in self.history:
                w.writerow([g, repr(best), repr(mean)])


def f1_overlap(mask: np.ndarray, target: np.ndarray) -> float:
    """Pixel-overlap F1; two empty masks agree perfectly."""
    tp = np.count_nonzero(mask & target)
    denom = np.count_nonzero(mask) + np.count_nonzero(target)
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def _random_gene(rng: np.random.Generator, scale: float) -> Gene:
    p = rng.normal(0.0, scale, PAYLOAD_LEN)
    p[19] = rng.uniform(0.1, 1.0)
    return Gene.from_payload(p)


def inverse_evolve_ga(seed: CAState, target, ga: GAParams | None = None, rng_seed: int = 0,
                      u=None, initial=()) -> GAResult:
    """Search for a gene whose evolution from ``seed`` reproduces ``target``.

    ``u`` is the CNN input (defaults to the seed as a +-1 image).  Genes in
    ``initial`` are placed at the front of generation 0.  Mutation
    probability per template entry is biased toward entries whose mutations
    changed the evolved mask in the previous generation.
    """
    ga = ga or GAParams()
    target = np.asarray(target, dtype=bool)
    if target.size == 0:
        raise ValueError("zero-area target")
    if target.shape != seed.shape:
        raise ValueError(f"target shape {target.shape} differs from seed shape {seed.shape}")
    if u is None:
        u = np.where(seed.mask(), 1.0, -1.0)
    rng = np.random.default_rng(rng_seed)

    def evaluate(gene):
        ev = evolve_to_segmentation(seed, gene, u, ga.max_steps)
        return f1_overlap(ev.mask, target), ev.mask

    pop = list(initial)[: ga.population]
    while len(pop) < ga.population:
        pop.append(_random_gene(rng, ga.init_scale))
    scored = [evaluate(g) for g in pop]
    fit = np.array([s[0] for s in scored])
    masks = [s[1] for s in scored]
    credit = np.zeros(N_TEMPLATE)
    history = []

    def ranked():
        # stable: ties resolved by individual index
        return sorted(range(len(pop)), key=lambda i: (-fit[i], i))

    for gen in range(ga.generations + 1):
        order = ranked()
        history.append((gen, float(fit[order[0]]), float(fit.mean())))
        if fit[order[0]] >= 1.0 or gen == ga.generations:
            break
        bias = (1.0 + credit) / (1.0 + credit).mean()
        rates = np.clip(ga.mutation * bias, 0.0, 1.0)

        def pick():
            contenders = rng.integers(0, len(pop), ga.tournament)
            return min(contenders, key=lambda i: (-fit[i], i))

        new_pop = [pop[i] for i in order[: ga.elitism]]
        new_fit = [fit[i] for i in order[: ga.elitism]]
        new_masks = [masks[i] for i in order[: ga.elitism]]
        children, parents, mutated = [], [], []
        while len(new_pop) + len(children) < ga.population:
            a, b = pick(), pick()
            pa, pb = pop[a].payload(), pop[b].payload()
            child = pa.copy()
            if rng.random() < ga.crossover:
                swap = rng.random(PAYLOAD_LEN) < 0.5
                child[swap] = pb[swap]
            hit = rng.random(N_TEMPLATE) < rates
            child[:N_TEMPLATE][hit] += rng.normal(0.0, ga.mutation_sigma, hit.sum())
            if rng.random() < ga.mutation:
                child[19] += rng.normal(0.0, 0.1)
            child[19] = float(np.clip(child[19], 0.05, 1.0))
            children.append(Gene.from_payload(child))
            parents.append(a)
            mutated.append(hit)
        credit = np.zeros(N_TEMPLATE)
        for child, a, hit in zip(children, parents, mutated):
            f, m = evaluate(child)
            if hit.any() and not np.array_equal(m, masks[a]):
                credit[hit] += 1.0
            new_pop.append(child)
            new_fit.append(f)
            new_masks.append(m)
        pop, fit, masks = new_pop, np.array(new_fit), new_masks

    best = ranked()[0]
    return GAResult(pop[best], float(fit[best]), masks[best], history)
