"""Desk-scale laboratory for loss-function metalearning."""

from .losses import (
    DEFAULT_LOGIT_FLOOR,
    EVOLVED_LOSS_NONTARGET_BRANCH,
    EVOLVED_LOSS_NULL_EPOCH_REPORTED,
    EVOLVED_LOSS_TARGET_BRANCH,
    EVOLVED_LOSS_ZERO_ERROR,
    LAMBDA_DIM,
    MSE_LAMBDA,
    GammaCoeffs,
    ZeroErrorCoeffs,
    as_loss_params,
    expand_coeffs,
    gamma_baikal,
    gamma_ce,
    gamma_mse,
    gamma_taylor,
    null_epoch_gamma,
    smooth_coeffs,
    smoothed_targets,
    zero_error_coeffs,
    zero_error_from_coeffs,
)
from .invariant import GateDecision, InvariantReport, check_invariant, gate_candidate
from .dynamics import (
    LogitState,
    TraceRecord,
    attraction_trace,
    baikal_repulsion,
    entropy_reduction_strength,
    softmax_update_oracle,
    strength_sign_fractions,
    write_trace_csv,
)
from .net import (
    Dataset,
    Network,
    RunLog,
    TrainConfig,
    TrainingDivergedError,
    accuracy,
    decomposed_step,
    load_checkpoint,
    load_idx,
    make_blobs,
    one_hot,
    save_checkpoint,
    split_dataset,
    train,
)
from .evolution import Candidate, CmaEs, SearchConfig, evaluate_candidate, search, search_detailed
from .adversarial import (
    AttackConfig,
    adversarial_accuracy,
    adversarial_fitness,
    fgsm_perturb,
    input_gradient,
    robustness_sweep,
    write_sweep_csv,
)

__version__ = "0.1.0"
