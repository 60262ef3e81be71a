"""Evolutionary search over the 8 Taylor-loss parameters.

Candidates are sampled by a covariance-matrix-adapting evolution strategy
(ask/tell interface, so a simpler sampler can be swapped in), optionally
screened by the trainability gate before any training happens, and scored
by validation accuracy of a small network trained with the candidate loss.
Gated-out candidates are assigned fitness zero without consuming any
training budget, which is the entire point of the gate: the strategy still
receives every sampled point, only the expensive evaluations are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable

import numpy as np

from . import adversarial
from .invariant import gate_candidate
from .losses import LAMBDA_DIM, as_loss_params, gamma_taylor
from .net import Dataset, Network, TrainConfig, TrainingDivergedError, accuracy, split_dataset, train


@dataclass
class SearchConfig:
    generations: int
    eval_budget: TrainConfig
    population_size: int = 20
    use_invariant: bool = True
    sigma0: float = 0.5
    rng_seed: int = 0
    hidden_sizes: tuple = (8,)
    val_fraction: float = 0.2
    epsilon_star: float | None = None

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population size must be at least 4")
        if self.generations < 1:
            raise ValueError("need at least one generation")
        if self.sigma0 <= 0:
            raise ValueError("initial step size must be positive")

    def to_dict(self) -> dict:
        return {
            "generations": self.generations,
            "population_size": self.population_size,
            "use_invariant": self.use_invariant,
            "sigma0": self.sigma0,
            "rng_seed": self.rng_seed,
            "hidden_sizes": list(self.hidden_sizes),
            "val_fraction": self.val_fraction,
            "epsilon_star": self.epsilon_star,
            "eval_budget": {
                "eta": self.eval_budget.eta,
                "epochs": self.eval_budget.epochs,
                "logit_floor": self.eval_budget.logit_floor,
            },
        }


@dataclass
class Candidate:
    params: np.ndarray
    fitness: float
    gated: bool
    generation: int = -1
    diverged: bool = False
    epochs_trained: int = 0

    def to_dict(self) -> dict:
        return {
            "params": [float(v) for v in self.params],
            "fitness": self.fitness,
            "gated": self.gated,
            "generation": self.generation,
            "diverged": self.diverged,
            "epochs_trained": self.epochs_trained,
        }


class CmaEs:
    """Minimizing covariance-matrix-adaptation ES with rank-based weights.

    Standard parameterization for small dimensions; all randomness comes
    from the seeded generator, so a fixed seed replays the exact candidate
    stream.
    """

    def __init__(self, x0, sigma0: float, population_size: int, rng_seed: int = 0):
        self.mean = np.asarray(x0, dtype=float).copy()
        self.dim = self.mean.size
        self.sigma = float(sigma0)
        self.popsize = int(population_size)
        if self.popsize < 4:
            raise ValueError("population size must be at least 4")
        self.rng = np.random.default_rng(rng_seed)

        self.mu = self.popsize // 2
        raw = np.log((self.popsize + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = raw / raw.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)

        n = self.dim
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.cov = np.eye(n)
        self.ps = np.zeros(n)
        self.pc = np.zeros(n)
        self.generation = 0

    def _decompose(self):
        cov = (self.cov + self.cov.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(cov)
        d = np.sqrt(np.maximum(eigvals, 1e-20))
        return eigvecs, d

    def ask(self) -> list[np.ndarray]:
        basis, scales = self._decompose()
        z = self.rng.standard_normal((self.popsize, self.dim))
        return [self.mean + self.sigma * (basis @ (scales * zi)) for zi in z]

    def tell(self, solutions: list[np.ndarray], losses: list[float]) -> None:
        if len(solutions) != self.popsize or len(losses) != self.popsize:
            raise ValueError("tell() needs exactly one loss per asked solution")
        order = np.argsort(np.asarray(losses, dtype=float), kind="stable")
        selected = np.asarray([solutions[i] for i in order[: self.mu]])
        old_mean = self.mean.copy()
        y = (selected - old_mean) / self.sigma
        y_w = self.weights @ y
        self.mean = old_mean + self.sigma * y_w

        basis, scales = self._decompose()
        inv_sqrt = basis @ np.diag(1.0 / scales) @ basis.T
        self.ps = (1 - self.cs) * self.ps + np.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt @ y_w)
        self.generation += 1
        denom = np.sqrt(1 - (1 - self.cs) ** (2 * self.generation))
        hsig = np.linalg.norm(self.ps) / denom / self.chi_n < 1.4 + 2 / (self.dim + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        rank_mu = (y * self.weights[:, None]).T @ y
        self.cov = (
            (1 - self.c1 - self.cmu) * self.cov
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hsig) * self.cc * (2 - self.cc) * self.cov)
            + self.cmu * rank_mu
        )
        self.sigma *= np.exp((self.cs / self.damps) * (np.linalg.norm(self.ps) / self.chi_n - 1))

    def state_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "sigma": self.sigma,
            "popsize": self.popsize,
            "cov": self.cov.tolist(),
            "ps": self.ps.tolist(),
            "pc": self.pc.tolist(),
            "generation": self.generation,
        }


def _candidate_seed(base_seed: int, generation: int, index: int) -> int:
    seq = np.random.SeedSequence(base_seed, spawn_key=(generation, index))
    return int(seq.generate_state(1)[0])


def evaluate_candidate(
    params,
    train_ds: Dataset,
    val_ds: Dataset,
    eval_budget: TrainConfig,
    use_invariant: bool,
    n: int | None = None,
    hidden_sizes: tuple = (8,),
    epsilon_star: float | None = None,
    gate: Callable | None = None,
) -> Candidate:
    """Gate, train, and score one parameter vector.

    Rejected candidates return immediately with fitness 0 and zero epochs
    trained.  Training divergence also scores 0 but is flagged separately.
    """
    params = as_loss_params(params)
    n = train_ds.n_classes if n is None else n
    if use_invariant:
        decision = (gate or gate_candidate)(params, n)
        if not decision.accepted:
            return Candidate(params=params, fitness=0.0, gated=True)

    gamma_fn = partial(gamma_taylor, params)
    net = Network((train_ds.dim, *hidden_sizes, n), rng_seed=eval_budget.rng_seed)
    try:
        train(net, train_ds, gamma_fn, eval_budget)
    except TrainingDivergedError as exc:
        return Candidate(
            params=params,
            fitness=0.0,
            gated=False,
            diverged=True,
            epochs_trained=len(exc.run_log.accuracy),
        )
    if epsilon_star is None:
        fitness = accuracy(net, val_ds)
    else:
        fitness = adversarial.adversarial_accuracy(net, val_ds, gamma_fn, epsilon_star)
    return Candidate(params=params, fitness=float(fitness), gated=False, epochs_trained=eval_budget.epochs)


@dataclass
class SearchRun:
    best: Candidate
    history: list = field(default_factory=list)
    es_state: dict = field(default_factory=dict)

    def best_so_far(self) -> list[float]:
        series, best = [], 0.0
        for generation in self.history:
            for cand in generation:
                best = max(best, cand.fitness)
            series.append(best)
        return series


def search_detailed(config: SearchConfig, dataset: Dataset, gate: Callable | None = None) -> SearchRun:
    """Full search loop; returns history plus strategy state for checkpointing."""
    train_ds, val_ds = split_dataset(dataset, config.val_fraction, config.rng_seed)
    es = CmaEs(np.zeros(LAMBDA_DIM), config.sigma0, config.population_size, rng_seed=config.rng_seed)
    best: Candidate | None = None
    history: list[list[Candidate]] = []
    for gen in range(config.generations):
        solutions = es.ask()
        generation: list[Candidate] = []
        for idx, solution in enumerate(solutions):
            budget = replace(config.eval_budget, rng_seed=_candidate_seed(config.rng_seed, gen, idx))
            cand = evaluate_candidate(
                solution,
                train_ds,
                val_ds,
                budget,
                config.use_invariant,
                n=dataset.n_classes,
                hidden_sizes=config.hidden_sizes,
                epsilon_star=config.epsilon_star,
                gate=gate,
            )
            cand.generation = gen
            generation.append(cand)
            if best is None or cand.fitness > best.fitness:
                best = cand
        es.tell(solutions, [-c.fitness for c in generation])
        history.append(generation)
    assert best is not None
    return SearchRun(best=best, history=history, es_state=es.state_dict())


def search(config: SearchConfig, dataset: Dataset, gate: Callable | None = None):
    """Run the search; returns (best candidate, per-generation history)."""
    run = search_detailed(config, dataset, gate=gate)
    return run.best, run.history
