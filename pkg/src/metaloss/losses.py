"""Per-logit update coefficients (gamma) for four loss families.

Every loss function acting on a softmax classifier can be reduced, inside
the SGD weight update, to one scalar coefficient per class logit:

    theta <- theta + eta * (1/n) * sum_k  gamma_k * grad_theta(h_k)

where h_k is the k-th scaled logit (softmax output) and n the class count.
A positive gamma_k pushes h_k up, a negative one pushes it down, and the
set of gamma values fully characterizes how the loss steers training.

This module provides the gamma evaluators for mean squared error,
cross-entropy, the Baikal loss, and the third-order Taylor-polynomial
loss driven by an 8-vector of parameters (lambda).  It also provides the
linear-combination form of the Taylor gamma, its reduction in the
zero-training-error regime, its value at the null epoch (uniform outputs),
and the closed-form label-smoothing transform on the linear-combination
coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAMBDA_DIM = 8

# Scaled logits are clamped to this floor before any division so that the
# cross-entropy and Baikal coefficients stay finite when softmax underflows.
DEFAULT_LOGIT_FLOOR = 1e-12


def as_loss_params(values) -> np.ndarray:
    """Validate and return an 8-element float parameter vector."""
    params = np.asarray(values, dtype=float).reshape(-1)
    if params.shape != (LAMBDA_DIM,):
        raise ValueError(f"expected {LAMBDA_DIM} loss parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise ValueError("loss parameters must all be finite")
    return params


def check_scaled_logits(values, tol: float = 1e-9) -> np.ndarray:
    """Validate a vector of softmax outputs: entries in [0, 1], summing to 1."""
    h = np.asarray(values, dtype=float).reshape(-1)
    if h.size < 2:
        raise ValueError("need at least 2 classes")
    if np.any(h < -tol) or np.any(h > 1 + tol):
        raise ValueError("scaled logits must lie in [0, 1]")
    if abs(float(h.sum()) - 1.0) > tol:
        raise ValueError(f"scaled logits must sum to 1 (got {h.sum()!r})")
    return h


def gamma_mse(h, y):
    """Mean-squared-error coefficient: 2y - 2h.  Zero exactly when h = y."""
    return 2.0 * np.asarray(y, dtype=float) - 2.0 * np.asarray(h, dtype=float)


def gamma_ce(h, y, floor: float | None = DEFAULT_LOGIT_FLOOR):
    """Cross-entropy coefficient: y / h, with h clamped to `floor`.

    Pass ``floor=None`` to evaluate without clamping; h = 0 then raises,
    since y/h is indeterminate (y = 1) or conventionally zero (y = 0) only
    in the limit.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if floor is None:
        if np.any(h <= 0.0):
            raise ValueError("cross-entropy gamma is indeterminate at h = 0; clamp h or pass a floor")
        return y / h
    return y / np.maximum(h, floor)


def gamma_baikal(h, y, floor: float | None = DEFAULT_LOGIT_FLOOR):
    """Baikal coefficient: 1/h + y/h**2, with h clamped to `floor`.

    The coefficient grows without bound as h -> 0, so unclamped evaluation
    (``floor=None``) raises at h = 0.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if floor is None:
        if np.any(h <= 0.0):
            raise ValueError("Baikal gamma is unbounded at h = 0; clamp h or pass a floor")
    else:
        h = np.maximum(h, floor)
    return 1.0 / h + y / (h * h)


def gamma_taylor(params, h, y):
    """Third-order Taylor-polynomial coefficient, fully expanded in (h, y)."""
    l0, l1, l2, l3, l4, l5, l6, l7 = as_loss_params(params)
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        2.0 * l3 * h
        - 2.0 * l1 * l3
        + 2.0 * l6 * h * y
        - 2.0 * l6 * l0 * h
        - 2.0 * l1 * l6 * y
        + 2.0 * l1 * l6 * l0
        + l2
        + l5 * y
        - l5 * l0
        + l7 * y * y
        - 2.0 * l7 * l0 * y
        + l7 * l0 * l0
        + 3.0 * l4 * h * h
        - 6.0 * l1 * l4 * h
        + 3.0 * l4 * l1 * l1
    )


@dataclass(frozen=True)
class GammaCoeffs:
    """Coefficients of gamma as a linear combination of [1, h, h^2, h*y, y, y^2]."""

    c1: float
    ch: float
    chh: float
    chy: float
    cy: float
    cyy: float

    def evaluate(self, h, y):
        """Evaluate c1 + ch*h + chh*h^2 + chy*h*y + cy*y + cyy*y^2."""
        h = np.asarray(h, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.c1 + self.ch * h + self.chh * h * h + self.chy * h * y + self.cy * y + self.cyy * y * y

    def to_dict(self) -> dict:
        return {"c1": self.c1, "ch": self.ch, "chh": self.chh, "chy": self.chy, "cy": self.cy, "cyy": self.cyy}

    @classmethod
    def from_dict(cls, d: dict) -> "GammaCoeffs":
        return cls(**{k: float(d[k]) for k in ("c1", "ch", "chh", "chy", "cy", "cyy")})


def expand_coeffs(params) -> GammaCoeffs:
    """Collect the Taylor gamma polynomial into linear-combination coefficients.

    Many parameter vectors map to the same coefficients; the conversion is
    one-way.
    """
    l0, l1, l2, l3, l4, l5, l6, l7 = as_loss_params(params)
    return GammaCoeffs(
        c1=l2 - 2.0 * l1 * l3 + 2.0 * l0 * l1 * l6 - l0 * l5 + l7 * l0 * l0 + 3.0 * l4 * l1 * l1,
        ch=2.0 * l3 - 2.0 * l0 * l6 - 6.0 * l1 * l4,
        chh=3.0 * l4,
        chy=2.0 * l6,
        cy=l5 - 2.0 * l1 * l6 - 2.0 * l7 * l0,
        cyy=l7,
    )


@dataclass(frozen=True)
class ZeroErrorCoeffs:
    """gamma reduced to a + b*y + c*y^2 once every output matches its label."""

    a: float
    b: float
    c: float

    def gamma_target(self) -> float:
        return self.a + self.b + self.c

    def gamma_nontarget(self) -> float:
        return self.a

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c}


def zero_error_coeffs(params) -> ZeroErrorCoeffs:
    """Closed forms of the zero-error reduction in terms of the parameters."""
    l0, l1, l2, l3, l4, l5, l6, l7 = as_loss_params(params)
    return ZeroErrorCoeffs(
        a=l2 - 2.0 * l1 * l3 - l5 * l0 + 2.0 * l1 * l6 * l0 + l7 * l0 * l0 + 3.0 * l4 * l1 * l1,
        b=2.0 * l3 - 2.0 * l6 * l0 - 2.0 * l1 * l6 + l5 - 2.0 * l7 * l0 - 6.0 * l4 * l1,
        c=2.0 * l6 + l7 + 3.0 * l4,
    )


def zero_error_from_coeffs(coeffs: GammaCoeffs) -> ZeroErrorCoeffs:
    """Zero-error reduction computed by substituting h = y, y in {0, 1}."""
    return ZeroErrorCoeffs(
        a=coeffs.c1,
        b=coeffs.ch + coeffs.cy,
        c=coeffs.chh + coeffs.chy + coeffs.cyy,
    )


def null_epoch_gamma(coeffs: GammaCoeffs, n: int) -> tuple[float, float]:
    """gamma at uniform outputs h = 1/n: (target value, non-target value)."""
    if n < 2:
        raise ValueError("class count must be at least 2")
    h = 1.0 / n
    return float(coeffs.evaluate(h, 1.0)), float(coeffs.evaluate(h, 0.0))


def smoothed_targets(alpha: float, n: int) -> tuple[float, float]:
    """Label values under smoothing: target 1 - alpha*(n-1)/n, non-target alpha/n."""
    return 1.0 - alpha * (n - 1) / n, alpha / n


def smooth_coeffs(coeffs: GammaCoeffs, alpha: float, n: int) -> GammaCoeffs:
    """Fold label smoothing of strength alpha into the coefficients.

    Evaluating the returned coefficients on hard labels {0, 1} reproduces,
    for every h, the original coefficients evaluated on the smoothed label
    values.  Smoothing is therefore representable inside the Taylor
    parameterization itself.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"smoothing factor must lie in (0, 1), got {alpha!r}")
    if n < 2:
        raise ValueError("class count must be at least 2")
    a_n = alpha / n
    t = 1.0 - alpha * (n - 1) / n
    return GammaCoeffs(
        c1=coeffs.c1 + coeffs.cy * a_n + coeffs.cyy * a_n * a_n,
        ch=coeffs.ch + coeffs.chy * a_n,
        chh=coeffs.chh,
        chy=coeffs.chy * t - coeffs.chy * a_n,
        cy=coeffs.cy * t - coeffs.cy * a_n,
        cyy=coeffs.cyy * t * t - coeffs.cyy * a_n * a_n,
    )


# Parameter vector whose Taylor gamma coincides with the MSE gamma pointwise.
MSE_LAMBDA = np.array([0.0, 0.0, 0.0, -1.0, 0.0, 2.0, 0.0, 0.0])

# Reference constants of a previously evolved loss for a 10-class image task,
# kept as regression baselines for the dynamics analyses.  The two branch
# polynomials give gamma as a function of h alone (the label dependence is
# folded into the constants), and the null-epoch pair is the reported
# (target, non-target) gamma at h = 1/10.  The reported non-target value is
# arithmetically inconsistent with the reported branch polynomial (off by
# 0.1009692, a decimal slip in the quadratic term); both are kept verbatim.
EVOLVED_LOSS_ZERO_ERROR = ZeroErrorCoeffs(a=-373.917, b=-129.928, c=-11.3145)
EVOLVED_LOSS_NONTARGET_BRANCH = GammaCoeffs(c1=-373.917, ch=-130.264, chh=-11.2188, chy=0.0, cy=0.0, cyy=0.0)
EVOLVED_LOSS_TARGET_BRANCH = GammaCoeffs(c1=-372.470735, ch=-131.47, chh=-11.2188, chy=0.0, cy=0.0, cyy=0.0)
EVOLVED_LOSS_NULL_EPOCH_REPORTED = (-385.729923, -386.9546188)
