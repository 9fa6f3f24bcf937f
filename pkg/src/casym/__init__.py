"""casym: channel-attention asymmetry auditing for 2D+ slice-stack segmentation.

The toolkit trains a small segmentation net on stacked-slice samples,
computes per-channel saliency maps with six methods, pools them into
per-channel intensity distributions, and scores channel bias with symmetric
and full Wasserstein distances. Weight surgery (uniform-channel / average
initialization) provides the mitigation side.
"""

from .bias import (
    BiasReport,
    ChannelDistribution,
    Histogram,
    bhattacharyya,
    build_bias_report,
    channel_distributions,
    fwd,
    js_divergence,
    shared_histogram,
    swd,
    wasserstein_1d,
)
from .errors import ConfigError, DataError, DivergenceError, ToolError
from .net import (
    Model,
    ModelConfig,
    TrainConfig,
    activations_and_grads,
    bce_with_logits,
    build_model,
    forward,
    grad_wrt_input,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
    train,
)
from .quality import ConfusionCounts, ScoreSummary, accuracy, confusion, dice, iou
from .quality import precision, recall, summarize
from .saliency import (
    PredictionMask,
    SaliencyMap,
    compute_saliency,
    gradcam,
    gradcampp,
    gradcampp_channel_occluded,
    load_saliency,
    prediction_mask,
    saliency_foreground,
    saliency_full_output,
    saliency_occlusion,
    saliency_sampled,
    save_saliency,
)
from .surgery import InitStrategy, adapt_kernel, apply_strategy, apply_to_checkpoint
from .surgery import average_channels, uniformize_channel
from .tensor import channel_mean, ntf_read, ntf_write
from .volume import (
    Sample2DPlus,
    Volume,
    dataset_split,
    load_volume,
    stack_2dplus,
    stack_all,
    synth_volume,
)

__version__ = "0.1.0"
