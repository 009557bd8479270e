"""Training, attack, and evaluation toolkit for isolated Arabic-letter
classifiers over pooled speech embeddings."""

__version__ = "0.1.0"

from .adversarial import AttackConfig, Perturbation, adversarial_train, fgsm, pgd, project
from .corpus import (
    Consonant,
    Diacritic,
    LetterLabel,
    Manifest,
    ManifestEntry,
    SpeakerMeta,
    Split,
    decode_label,
    encode_label,
    load_manifest,
    save_manifest,
    split_manifest,
)
from .embedding import EmbeddingDataset, assemble, mean_pool, read_hrf, write_hrf
from .evaluation import EvalReport, SweepResult, evaluate, evaluate_robust, sweep, top_confusions
from .neural import (
    AdamState,
    Batch,
    MlpModel,
    adam_step,
    backward,
    cross_entropy,
    forward,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .oracle import LinearSurrogate, SyntheticSpec, finite_diff_grad, generate, vertex_attack

__all__ = [name for name in dir() if not name.startswith("_")]
