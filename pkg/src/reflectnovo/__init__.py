"""De novo peptide sequencing with reflection-token training and steering."""

from .vocab import (
    PeptideSequence,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_peptide,
    peptide_neutral_mass,
)
from .spectrum import (
    PSM,
    PreprocessConfig,
    Spectrum,
    SynthConfig,
    emit_mgf,
    generate_corpus,
    parse_mgf,
    preprocess_spectrum,
    synthesize_psm,
    theoretical_ions,
)
from .augment import (
    AugmentConfig,
    AugmentedTarget,
    InjectionRecord,
    augment_batch,
    finalize_target,
    inject_rple,
    inject_rpre,
)
from .model import (
    ModelConfig,
    SpectrumTransformer,
    finite_difference_check,
    forward,
    init_model,
    loss_and_gradients,
)
from .train import (
    Checkpoint,
    TrainConfig,
    adamw_update,
    load_checkpoint,
    lr_at_step,
    save_checkpoint,
    train,
)
from .decode import (
    Hypothesis,
    RawPrediction,
    beam_decode,
    forced_prefix_decode,
    greedy_decode,
    parse_token_string,
    postprocess_reflection,
    render_tokens,
)
from .evaluate import EvalReport, evaluate, reflection_usage

__version__ = "0.1.0"
