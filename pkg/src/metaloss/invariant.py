"""Trainability gate on Taylor-loss parameters.

At the start of training the expected softmax output is uniform, 1/n per
class.  Evaluating the gamma linear combination there gives one coefficient
for the target class and one shared by the non-target classes, and two
strict inequalities on those values carve out a region of parameter space
in which the update rule pushes outputs the wrong way and the model never
trains.  Candidates falling in that region can be discarded before any
training is spent on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import GammaCoeffs, as_loss_params, expand_coeffs


@dataclass(frozen=True)
class InvariantReport:
    """Both untrainability inequalities evaluated at uniform outputs.

    An inequality "holds" when lhs < rhs (strictly).  `violated` is true
    only when both hold together; boundary cases count as trainable.
    `margin` is the largest lhs - rhs over the two inequalities, so a
    positive margin means at least one inequality strictly fails and the
    candidate is trainable.
    """

    constraint1_lhs: float
    constraint1_rhs: float
    constraint2_lhs: float
    constraint2_rhs: float
    violated: bool
    margin: float

    def to_dict(self) -> dict:
        return {
            "constraint1_lhs": self.constraint1_lhs,
            "constraint1_rhs": self.constraint1_rhs,
            "constraint2_lhs": self.constraint2_lhs,
            "constraint2_rhs": self.constraint2_rhs,
            "violated": self.violated,
            "margin": self.margin,
        }


def check_invariant(coeffs: GammaCoeffs, n: int) -> InvariantReport:
    """Evaluate the two untrainability inequalities exactly as stated.

    The non-target null-epoch coefficient is g0 = c1 + ch/n + chh/n^2 and
    the target one is g0 + cy + cyy + chy/n.  The inequalities are

        c1 + cy + cyy + (ch + chy)/n + chh/n^2  <  (n - 1) * g0
        cy + cyy + chy/n                        <  (n - 2) * g0

    (The second is the first with g0 subtracted from both sides, so the
    two always agree; both are evaluated and reported for transparency.)
    """
    if n < 2:
        raise ValueError("class count must be at least 2")
    g0 = coeffs.c1 + coeffs.ch / n + coeffs.chh / n**2
    lhs1 = coeffs.c1 + coeffs.cy + coeffs.cyy + (coeffs.ch + coeffs.chy) / n + coeffs.chh / n**2
    rhs1 = (n - 1) * g0
    lhs2 = coeffs.cy + coeffs.cyy + coeffs.chy / n
    rhs2 = (n - 2) * g0
    violated = (lhs1 < rhs1) and (lhs2 < rhs2)
    margin = max(lhs1 - rhs1, lhs2 - rhs2)
    return InvariantReport(
        constraint1_lhs=float(lhs1),
        constraint1_rhs=float(rhs1),
        constraint2_lhs=float(lhs2),
        constraint2_rhs=float(rhs2),
        violated=bool(violated),
        margin=float(margin),
    )


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    reason: str | None = None


def gate_candidate(params, n: int) -> GateDecision:
    """Accept or reject a candidate parameter vector before training.

    The all-zero vector is rejected explicitly: its gamma is zero
    everywhere (no gradient signal), yet it sits on the boundary of both
    strict inequalities and would otherwise slip through.
    """
    params = as_loss_params(params)
    if not np.any(params):
        return GateDecision(accepted=False, reason="degenerate zero gradients")
    report = check_invariant(expand_coeffs(params), n)
    if report.violated:
        return GateDecision(accepted=False, reason="invariant violated")
    return GateDecision(accepted=True)
