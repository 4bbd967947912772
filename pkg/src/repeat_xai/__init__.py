"""Certainty-of-importance maps for image representation explanations.

Pixels are modeled as Bernoulli variables across repeated stochastic
explanations: the package estimates per-pixel importance probabilities,
their Bernoulli-variance uncertainty, and ships the evaluation harness
(randomization sanity check, GMM-based OOD detection, entropy complexity).
"""

from .base_methods import (
    MaskConfig,
    ShapConfig,
    generate_masks,
    kernel_shap_importance,
    kernel_shap_solve,
    relax_importance,
    relax_uncertainty,
    tta_uncertainty,
)
from .core import (
    RealizationFlags,
    RepeatConfig,
    RepeatResult,
    aggregate,
    bernoulli_sample,
    bernoulli_uncertainty,
    repeat_explain,
    weight_map,
)
from .encoders import EncoderHandle, build_encoder, cosine_similarity, encode, encode_batch, randomize
from .errors import DegenerateRunError, FormatError, ValidationError
from .evaluation import (
    EvalRecord,
    GmmModel,
    OodReport,
    aggregate_uncertainty,
    auroc,
    complexity,
    discrete_complexity,
    emprt_from_maps,
    emprt_score,
    gmm_fit,
    gmm_responsibilities,
    ood_posterior,
    run_ood_experiment,
    structured_encoder,
    synth_corpus,
)
from .tensors import (
    Histogram,
    ImageTensor,
    bilinear_resize,
    histogram,
    load_image,
    load_map,
    read_raw,
    save_map,
    shannon_entropy,
    write_raw,
)
from .thresholds import (
    ThresholdMethod,
    ThresholdResult,
    binarize,
    select_threshold,
    threshold_li,
    threshold_mean,
    threshold_otsu,
    threshold_triangle,
)

__version__ = "0.1.0"
