"""Multimodal semi-supervised classification via adversarial consensus.

Per-modality encoder networks are pushed toward indistinguishable latent
representations by an adversarial discriminator while a classifier keeps
those representations label-informative; the unlabeled pool participates in
the consensus game, which is what makes the training transductive.
"""

from .data import (MultimodalDataset, SyntheticSpec, generate_synthetic,
                   load_bank_marketing, load_multimodal_csv, micro_macro_f1,
                   split_labels)
from .model import (ConsensusModel, ModelConfig, Representation,
                    classification_loss, discrimination_loss, load_checkpoint,
                    reconstruction_loss, sample_noise, save_checkpoint)
from .similarity import (RepresentationPmf, SimilarityReport, dataset_similarity,
                         entropy, kl, relative_divergence, to_pmf)
from .svm import LinearSvmModel, fit_svm, predict_svm
from .training import (TrainingConfig, TrainingFailure, TrainingTrace,
                       TrainResult, evaluate_f1, fit_svm_head, train)
from .baselines import TriTrainConfig, TriTrainEnsemble, tri_predict, tri_train
from .experiment import ExperimentConfig, RunResult, parse_config, run_experiment

__version__ = "0.1.0"
