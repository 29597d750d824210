from enum import Enum


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    LINEAR = "linear"

class ActionSpace(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"

class Algorithm(str, Enum):
    P3O = "p3o"
    ON_POLICY_ONLY = "on_policy_only"
    FIXED_COEFF_P3O = "fixed_coeff_p3o"
    IPG_FIXED_NU = "ipg_fixed_nu"

class KlDirection(str, Enum):
    BEHAVIOR_TARGET = "behavior_target"  # KL(beta || pi_theta)
    TARGET_BEHAVIOR = "target_behavior"  # KL(pi_theta || beta)

class AdvantageSource(str, Enum):
    RECOMPUTE = "recompute"
    STORED = "stored"

class Preset(str, Enum):
    ATARI = "atari"
    MUJOCO = "mujoco"

class GradientTerm(str, Enum):
    ON_POLICY = "on_policy"
    OFF_POLICY = "off_policy"
    KL_PENALTY = "kl_penalty"
    INTERPOLATED = "interpolated"

class DiagTarget(str, Enum):
    ACER_CORRECTION = "acer-correction"
    BIAS = "bias"
    LEMMA1 = "lemma1"
    ESS_DRIFT = "ess-drift"

class Subcommand(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
    DIAG = "diag"
