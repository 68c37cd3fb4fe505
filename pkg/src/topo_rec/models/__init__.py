from .losses import bpr_loss, svdgcn_partition_loss, ultragcn_aux, ultragcn_losses
from .propagation import DgcfState, EmbeddingState, dgcf_propagate, lightgcn_propagate
from .svdgcn import SvdGcnState, svdgcn_embed
from .training import MODEL_KINDS, TrainConfig, TrainedModel, train, save_trained, load_trained

__all__ = [
    "DgcfState", "EmbeddingState", "MODEL_KINDS", "SvdGcnState", "TrainConfig", "TrainedModel",
    "bpr_loss", "dgcf_propagate", "lightgcn_propagate", "load_trained", "save_trained",
    "svdgcn_embed", "svdgcn_partition_loss", "train", "ultragcn_aux", "ultragcn_losses",
]
