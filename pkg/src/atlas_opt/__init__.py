"""Alternating-training label smoothing on a desk-scale prompt-tuning
surrogate, with soft-label generation and convergence-bound diagnostics."""

from .diagnostics import (
    BoundInputs,
    BoundReport,
    VarianceEstimate,
    atlas_bound,
    estimate_beta,
    estimate_variances,
    full_gradient,
    alternating_deviation_check,
    smoothed_deviation_check,
    ls_bound,
    probe_smoothness,
    trajectory_bound_check,
)
from .harness import (
    EvalResult,
    SweepSpec,
    SyntheticTask,
    SyntheticTaskConfig,
    directional_check,
    evaluate,
    generate_task,
    harmonic_mean,
    run_ablation_grid,
    run_experiment,
    run_sweep,
)
from .labels import (
    CslTable,
    IslTable,
    MixWeight,
    OneHotLabel,
    SmoothingConfig,
    build_csl,
    build_isl,
    mix_csl_isl,
    schedule_phase,
    select_label,
    vanilla_smooth,
)
from .model import (
    ClassVocabulary,
    FrozenEncoder,
    ImageSample,
    ModelConfig,
    ModelParts,
    encode_class,
    forward_probs,
    grad_prompt,
    init_prompt,
    loss,
    zero_shot_probs,
)
from .numerics import (
    cosine_similarity,
    cross_entropy,
    deterministic_sum,
    softmax_ce_grad_logits,
    softmax_with_temperature,
)
from .trainer import (
    LabelTables,
    TrainConfig,
    TrainMode,
    TrainReport,
    batch_iterator,
    run_training,
    supervision_for,
)

__version__ = "0.1.0"
