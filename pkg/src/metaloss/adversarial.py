"""Single-step sign-gradient attacks and robustness sweeps.

The attack is white-box: gradients of the training loss with respect to
the inputs are taken from the attacked model itself, their signs scaled by
an attack strength epsilon and added to the inputs.  By default gradients
come from the same loss the network was trained with; a separate gamma
evaluator can be supplied for cross-loss attacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .losses import DEFAULT_LOGIT_FLOOR, as_loss_params, gamma_taylor
from .net import Dataset, Network, TrainConfig, TrainingDivergedError, one_hot, train


@dataclass(frozen=True)
class AttackConfig:
    """Attack strengths (ascending; 0 means clean evaluation) and clamp bounds."""

    epsilons: tuple
    clamp_range: tuple | None = None

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValueError("need at least one attack strength")
        if any(e < 0 for e in eps):
            raise ValueError("attack strengths must be non-negative")
        if list(eps) != sorted(eps):
            raise ValueError("attack strengths must be sorted ascending")
        object.__setattr__(self, "epsilons", eps)
        if self.clamp_range is not None:
            lo, hi = self.clamp_range
            if not lo < hi:
                raise ValueError("clamp range must satisfy lo < hi")
            object.__setattr__(self, "clamp_range", (float(lo), float(hi)))


def input_gradient(net: Network, x, y_onehot, gamma_fn: Callable, floor: float = DEFAULT_LOGIT_FLOOR) -> np.ndarray:
    """Gradient of the training loss with respect to the input features.

    The decomposed update direction is (1/n) * sum_k gamma_k * grad(h_k),
    which is the negative loss gradient; extending its backward pass one
    layer past the first weight matrix and negating gives the loss
    gradient on x.
    """
    h, activations = net.forward_cached(np.asarray(x, dtype=float))
    gamma = np.asarray(gamma_fn(np.maximum(h, floor), np.asarray(y_onehot, dtype=float)), dtype=float)
    _, _, input_grad = net.backward_gamma(h, activations, gamma)
    return -input_grad / net.n_classes


def fgsm_perturb(x, grad, epsilon: float, clamp_range: tuple | None = None) -> np.ndarray:
    """x + epsilon * sign(grad), clamped; sign(0) = 0 leaves coordinates alone."""
    if epsilon < 0:
        raise ValueError("attack strength must be non-negative")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if x.shape != grad.shape:
        raise ValueError("input and gradient shapes differ")
    x_adv = x + epsilon * np.sign(grad)
    if clamp_range is not None:
        x_adv = np.clip(x_adv, clamp_range[0], clamp_range[1])
    return x_adv


def _input_gradients(net: Network, dataset: Dataset, gamma_fn: Callable) -> np.ndarray:
    labels_onehot = one_hot(dataset.labels, dataset.n_classes)
    return np.asarray(
        [input_gradient(net, dataset.features[i], labels_onehot[i], gamma_fn) for i in range(len(dataset))]
    )


def robustness_sweep(
    net: Network,
    dataset: Dataset,
    gamma_fn: Callable,
    attack: AttackConfig,
    attack_gamma_fn: Callable | None = None,
) -> list[tuple[float, float]]:
    """Accuracy under attack for each strength; gradients taken on clean inputs.

    Returns [(epsilon, accuracy), ...] in the configured order.  At
    epsilon = 0 the perturbed batch is the clean batch, so the first row of
    an epsilon-grid starting at 0 is the clean accuracy exactly.
    """
    clamp = attack.clamp_range
    if clamp is None:
        clamp = (float(dataset.features.min()), float(dataset.features.max()))
    signs = np.sign(_input_gradients(net, dataset, attack_gamma_fn or gamma_fn))
    rows = []
    for eps in attack.epsilons:
        x_adv = np.clip(dataset.features + eps * signs, clamp[0], clamp[1])
        preds = np.argmax(net.forward(x_adv), axis=1)
        rows.append((float(eps), float(np.mean(preds == dataset.labels))))
    return rows


def adversarial_accuracy(
    net: Network,
    dataset: Dataset,
    gamma_fn: Callable,
    epsilon: float,
    clamp_range: tuple | None = None,
) -> float:
    """Accuracy at a single attack strength."""
    [(_, acc)] = robustness_sweep(net, dataset, gamma_fn, AttackConfig((epsilon,), clamp_range))
    return acc


def adversarial_fitness(
    params,
    train_ds: Dataset,
    val_ds: Dataset,
    eval_budget: TrainConfig,
    epsilon_star: float,
    hidden_sizes: tuple = (8,),
) -> float:
    """Train with a candidate Taylor loss, score by attacked validation accuracy.

    With epsilon_star = 0 this reduces to plain validation accuracy.
    Divergent training scores 0.
    """
    params = as_loss_params(params)
    gamma_fn = partial(gamma_taylor, params)
    net = Network((train_ds.dim, *hidden_sizes, train_ds.n_classes), rng_seed=eval_budget.rng_seed)
    try:
        train(net, train_ds, gamma_fn, eval_budget)
    except TrainingDivergedError:
        return 0.0
    return adversarial_accuracy(net, val_ds, gamma_fn, epsilon_star)


def write_sweep_csv(rows: Sequence[tuple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epsilon,accuracy\n")
        for eps, acc in rows:
            fh.write(f"{eps:.9g},{acc:.9g}\n")
