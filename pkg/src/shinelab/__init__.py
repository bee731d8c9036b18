"""Deterministic desk-scale lab for training-free subject insertion on a
toy flow-matching transformer: anchor-based latent optimization, blurred-
query guidance, adaptive background blending, and the supporting numerics.
"""

from .abb import (
    AbbConfig,
    LayerRanking,
    adaptive_mask,
    attention_mask,
    blend,
    downsample_mask,
    rank_layers_by_iou,
    upsample_mask,
)
from .backbone import (
    AdapterParams,
    AttentionCapture,
    InterventionPlan,
    ModelParams,
    TokenSeq,
    blur_group,
    predict_velocity,
    text_tokens_from_prompt,
)
from .dsg import DsgConfig, dsg_combine, negative_velocity
from .msa import (
    AnchorVelocity,
    MsaConfig,
    compute_anchor,
    msa_gradient,
    msa_loss,
    msa_step,
    run_msa_inner_loop,
)
from .numerics import (
    BinaryMask,
    Kernel1D,
    Kernel2D,
    ToeplitzBlur,
    attn_blur_equivalence_residual,
    binarize,
    convolve1d,
    convolve2d,
    dilate,
    gaussian_kernel_1d,
    gaussian_kernel_2d,
    iou,
    key_blur_residual,
    max_connected_component,
    softmax_rows,
    toeplitz_from_kernel,
)
from .pipeline import (
    CompositionConfig,
    CompositionInputs,
    RunReport,
    StepRecord,
    compose,
    config_from_mapping,
    config_to_mapping,
    decode,
    encode,
    latent_checksum,
)
from .scheduling import (
    NoiseSource,
    SigmaSchedule,
    euler_step,
    forward_diffuse,
    make_schedule,
    noisy_background,
)

__version__ = "0.1.0"
