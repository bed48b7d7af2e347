"""Multi-source unsupervised domain adaptation by approximate label matching."""

from .alm import (ALMClassifier, AdaptedSourceModel, AlmModel, Architecture, Domain,
                  MultiDomainSet, TransformSpec, fit_alm, fit_phi, load_alm,
                  predict_consensus, project_rotation, save_alm)
from .baselines import (KernelMeanMatching, KMMVoteClassifier, TCAVoteClassifier,
                        TransferComponentAnalysis, confidence_vote, kmm_weights,
                        rbf_kernel, resample_weighted, tca_fit_transform)
from .nn import FeedForwardNet, NetClassifier, TrainConfig, forward, mlp_init, train

__version__ = "0.1.0"

__all__ = [
    "ALMClassifier", "AdaptedSourceModel", "AlmModel", "Architecture", "Domain",
    "MultiDomainSet", "TransformSpec", "fit_alm", "fit_phi", "load_alm", "save_alm",
    "predict_consensus", "project_rotation",
    "KernelMeanMatching", "KMMVoteClassifier", "TCAVoteClassifier",
    "TransferComponentAnalysis", "confidence_vote", "kmm_weights", "rbf_kernel",
    "resample_weighted", "tca_fit_transform",
    "FeedForwardNet", "NetClassifier", "TrainConfig", "forward", "mlp_init", "train",
]
