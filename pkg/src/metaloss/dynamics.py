"""Entropy dynamics of a softmax head under the decomposed update rule.

The analyses here assume the symmetric state where the target scaled logit
is 1 - epsilon and all n - 1 non-target logits share the remaining mass
epsilon equally.  Under that assumption a single scalar (the entropy
reduction strength) says whether one update step concentrates the output
distribution toward the label (positive), diffuses it away (negative), or
leaves it unchanged (zero).

Two routes to that sign are provided: the closed-form strength expression,
and a brute-force oracle that applies the softmax Jacobian to raw logits
directly.  The closed form carries a known sign slip in one of its terms
(the term proportional to n - 2), so the two routes can disagree for n > 2
when both gamma values share a sign and their ratio falls in a narrow
band; the oracle is authoritative.  For n = 2 they always agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class LogitState:
    """Symmetric softmax state plus the gamma pair acting on it.

    epsilon is the total non-target probability mass, so the target scaled
    logit is 1 - epsilon and each non-target one is epsilon / (n - 1).
    """

    epsilon: float
    n: int
    gamma_t: float
    gamma_not_t: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("class count must be at least 2")
        if not (math.isfinite(self.gamma_t) and math.isfinite(self.gamma_not_t)):
            raise ValueError("gamma values must be finite")

    def scaled_logits(self) -> np.ndarray:
        h = np.full(self.n, self.epsilon / (self.n - 1))
        h[0] = 1.0 - self.epsilon
        return h


def entropy_reduction_strength(state: LogitState) -> float:
    """Closed-form strength of the pull toward zero training error.

    Positive means the output distribution's entropy shrinks (target logit
    grows), negative means it grows, zero means no change.  The two
    exponents are rescaled by their shared maximum before exponentiation,
    which leaves the ratio exact while keeping evaluation finite for
    |gamma| well beyond 1e4.
    """
    eps, n = state.epsilon, state.n
    if eps <= 0.0 or eps >= 1.0:
        raise ValueError(f"epsilon must lie strictly in (0, 1), got {eps!r}")
    gt, gnt = state.gamma_t, state.gamma_not_t
    exp_t = eps * (eps - 1.0) * (gnt - gt)
    exp_nt = (eps * (eps - 1.0) * gt * (n - 1) + eps * gnt * (eps * (n - 3) + n - 1)) / (n - 1) ** 2
    shift = max(exp_t, exp_nt)
    e_t = math.exp(exp_t - shift)
    e_nt = math.exp(exp_nt - shift)
    return (eps * (eps - 1.0) * (e_t - e_nt)) / ((eps - 1.0) * e_t - eps * e_nt)


def softmax_update_oracle(state: LogitState, eta: float) -> tuple[float, float]:
    """One explicit update of raw logits, pushed back through softmax.

    Treats the raw logits as free parameters: each receives
    eta * sum_k gamma_k * J_kj with J the softmax Jacobian, and the new
    scaled logits are read off the re-normalized softmax.  Returns the new
    (target, non-target) scaled logits.  This is the independent
    ground-truth check for the closed-form strength's sign.
    """
    if eta <= 0.0:
        raise ValueError("step size must be positive")
    h = state.scaled_logits()
    gammas = np.full(state.n, state.gamma_not_t)
    gammas[0] = state.gamma_t
    # sum_k gamma_k J_kj = h_j * (gamma_j - <gamma, h>)
    delta_f = h * (gammas - gammas @ h)
    f = np.log(np.maximum(h, 1e-300)) + eta * delta_f
    f -= f.max()
    new_h = np.exp(f)
    new_h /= new_h.sum()
    return float(new_h[0]), float(new_h[1:].mean())


def baikal_repulsion(epsilon: float, n: int) -> tuple[float, float]:
    """Per-logit push strengths of the Baikal rule near zero training error.

    Non-target logits are pushed up with coefficient (n - 1)/epsilon and
    the target logit with (2 - epsilon)/(epsilon^2 - 2*epsilon + 1).  The
    non-target push dominates as epsilon -> 0, so weight updates move the
    model away from zero error: zero error is not an attractor.
    """
    if n < 2:
        raise ValueError("class count must be at least 2")
    if epsilon <= 0.0:
        raise ValueError("repulsion coefficients diverge as epsilon -> 0")
    if epsilon >= 1.0:
        raise ValueError("epsilon must lie strictly in (0, 1)")
    coef_nontarget = (n - 1) / epsilon
    coef_target = (2.0 - epsilon) / (epsilon * epsilon - 2.0 * epsilon + 1.0)
    return coef_nontarget, coef_target


@dataclass(frozen=True)
class TraceRecord:
    """One per-sample, per-epoch attraction measurement."""

    epoch: int
    sample_id: int
    gamma_t: float
    gamma_not_t: float
    epsilon: float
    strength: float
    boundary: bool = False


def attraction_trace(run_log, gamma_fn: Callable) -> list[TraceRecord]:
    """Strength of the zero-error pull for every sample at every epoch.

    `run_log` must expose `target_h` (a sequence of per-epoch arrays of the
    target scaled logit for every sample) and `n_classes`.  gamma_t is the
    loss coefficient at the target logit, gamma_not_t at the mean
    non-target logit; with the non-target mass spread evenly that mean is
    epsilon / (n - 1), matching the symmetric-state assumption.  Records
    whose epsilon hits 0 or 1 exactly are flagged as boundary (strength
    NaN) and should be excluded from aggregates.
    """
    n = run_log.n_classes
    records: list[TraceRecord] = []
    for epoch, target_h in enumerate(run_log.target_h):
        target_h = np.asarray(target_h, dtype=float)
        for sample_id, h_t in enumerate(target_h):
            eps = 1.0 - float(h_t)
            mean_nt = eps / (n - 1)
            g_t = float(gamma_fn(np.float64(h_t), np.float64(1.0)))
            g_nt = float(gamma_fn(np.float64(mean_nt), np.float64(0.0)))
            if eps <= 0.0 or eps >= 1.0:
                records.append(TraceRecord(epoch, sample_id, g_t, g_nt, eps, float("nan"), boundary=True))
                continue
            strength = entropy_reduction_strength(LogitState(eps, n, g_t, g_nt))
            records.append(TraceRecord(epoch, sample_id, g_t, g_nt, eps, strength))
    return records


def write_trace_csv(records: Sequence[TraceRecord], path) -> None:
    """Write trace records as CSV, floats rendered with 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,sample_id,gamma_t,gamma_not_t,epsilon,strength\n")
        for r in records:
            fh.write(f"{r.epoch},{r.sample_id},{r.gamma_t:.9g},{r.gamma_not_t:.9g},{r.epsilon:.9g},{r.strength:.9g}\n")


def strength_sign_fractions(records: Sequence[TraceRecord]) -> dict[int, dict[str, float]]:
    """Per-epoch fractions of positive / negative strengths (boundary rows excluded)."""
    by_epoch: dict[int, list[float]] = {}
    for r in records:
        if r.boundary:
            continue
        by_epoch.setdefault(r.epoch, []).append(r.strength)
    out: dict[int, dict[str, float]] = {}
    for epoch, values in sorted(by_epoch.items()):
        arr = np.asarray(values)
        out[epoch] = {
            "positive": float(np.mean(arr > 0)),
            "negative": float(np.mean(arr < 0)),
            "count": int(arr.size),
        }
    return out
