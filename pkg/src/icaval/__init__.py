"""Desk-scale data valuation and reweighted fine-tuning.

Per-example scores estimate how much each training example would reduce
the loss on a curated holdout set; the flagship scorer conditions the
model on retrieved holdout demonstrations instead of retraining. Scores
drive per-batch gradient reweighting during fine-tuning of a tiny
decoder-only transformer with exact reverse-mode gradients.
"""

from .corpus import (
    Alphabet,
    Dataset,
    DatasetFormatError,
    Example,
    GenConfig,
    TokenizeError,
    generate,
    generate_synthetic_pref,
    generate_synthetic_sft,
    load_jsonl,
    save_jsonl,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .embed import EmbedIndex, build_index, embed_example, knn
from .model import (
    LossSpec,
    ModelConfig,
    ModelParams,
    SequenceTooLong,
    conditional_nll_loss,
    dpo_loss,
    example_loss,
    forward_logits,
    init_params,
    loss_and_grad,
    nll_loss,
    simpo_loss,
)
from .pretrain import PretrainConfig, pretrain_backbone
from .reweight import (
    WeightingMode,
    compute_weights,
    maxmin_weights,
    percentile_filter,
    softmax_weights,
    weighted_gradient,
)
from .score import (
    ScoreTable,
    ScorerContext,
    ica_score,
    oneshot_score,
    oracle_one_step_gain,
    oracle_retrain,
    rho_score,
    score_dataset,
)
from .trainloop import (
    RunMetrics,
    TrainConfig,
    TrainingDiverged,
    evaluate_holdout,
    greedy_select,
    refresh_schedule,
    train,
)

__version__ = "0.1.0"
