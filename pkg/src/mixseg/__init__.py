"""mixseg: token-level segmentation of mixed human/AI text.

A BiGRU emission network over frozen token embeddings feeds a linear-chain
CRF decoder; HMM and MEMM baselines and boundary-detection metrics round
out the toolkit.
"""

from mixseg.core import (
    PATTERNS,
    BoundarySet,
    Hyperparameters,
    LabelSequence,
    MixedTextRecord,
    TokenSequence,
    extract_boundaries,
    labels_from_boundaries,
    segment_labels_to_token_labels,
    validate_record,
)
from mixseg.crf import (
    CrfParams,
    EmissionScores,
    brute_force_best_path,
    brute_force_log_partition,
    grad_nll,
    log_partition,
    nll_loss,
    posterior_marginals,
    score_sequence,
    viterbi_decode,
)
from mixseg.emissions import (
    BiGruParams,
    DropoutPolicy,
    EmbeddingTable,
    bigru_forward,
    dropout_rate,
    emissions_backward,
    head_forward,
    lookup_embeddings,
    xavier_init,
)
from mixseg.baselines import (
    HmmParams,
    MemmParams,
    hmm_decode,
    hmm_fit,
    memm_decode,
    memm_fit,
)
from mixseg.metrics import (
    MetricsReport,
    Prediction,
    boundary_mae,
    evaluate,
    f1_at_k,
    token_metrics,
    top_k_boundaries,
)
from mixseg.training import (
    SegmenterModel,
    TrainConfig,
    build_llrd_groups,
    clip_gradients,
    optimizer_step,
    predict_one,
    train,
)
from mixseg.data_io import (
    SynthConfig,
    load_dataset,
    load_model,
    read_embeddings,
    save_dataset,
    save_model,
    synth_generate,
    write_embeddings,
)

__version__ = "0.1.0"
