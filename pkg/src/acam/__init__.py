"""Knowledge-enhanced top-n recommender with attribute-level co-attention."""

from .autodiff import Tape, Tensor
from .evaluation import (EvalReport, RankedList, SplitSpec, evaluate, hr_at_n,
                         make_ranked_list, ndcg_at_n, rr, split)
from .kg import (AttributeTable, Dataset, Interaction, Triple, Vocab,
                 kge_batch_loss, load_dataset, load_interactions, load_triples,
                 transh_energy)
from .model import (Hyperparams, ModelParams, UserHistory, coattention,
                    item_representation, predict, user_representation)
from .sampling import popularity_counts, sample_negatives
from .synthetic import WorldSpec, generate, write_world
from .training import (Adam, EpochStats, LabeledPair, TrainConfig, joint_loss,
                       train, train_kge_only)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AttributeTable", "Dataset", "EpochStats", "EvalReport",
    "Hyperparams", "Interaction", "LabeledPair", "ModelParams", "RankedList",
    "SplitSpec", "Tape", "Tensor", "TrainConfig", "Triple", "UserHistory",
    "Vocab", "WorldSpec", "coattention", "evaluate", "generate", "hr_at_n",
    "item_representation", "joint_loss", "kge_batch_loss", "load_dataset",
    "load_interactions", "load_triples", "make_ranked_list", "ndcg_at_n",
    "popularity_counts", "predict", "rr", "sample_negatives", "split",
    "train", "train_kge_only", "transh_energy", "user_representation",
    "write_world", "__version__",
]
