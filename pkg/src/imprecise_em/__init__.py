"""EM learning of softmax classifiers from imprecise labels.

Partial candidate sets, missing labels, noisy labels, and mixtures of them
all enter through one posterior computation; see :mod:`imprecise_em.posterior`.
"""

__version__ = "0.1.0"

from .automaton import LabelNFA, brute_force_posterior, forward_backward, nfa_from_dataset
from .labels import (Candidates, Exact, ImpreciseDataset, Kind, Noisy, NoisyCandidates, Sample,
                     Unlabeled, make_asymmetric_noise, make_blobs, make_mixed, make_partial,
                     make_symmetric_noise, read_dataset, select_labeled_subset, write_dataset)
from .model import Classifier, forward, init_classifier
from .noise import NoiseModel, noisy_marginal, transition_matrix
from .posterior import (PosteriorTarget, posterior_exact, posterior_noisy,
                        posterior_noisy_partial, posterior_partial, posterior_unlabeled)
from .trainer import TrainConfig, evaluate, exact_em_check, train
