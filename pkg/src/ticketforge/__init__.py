"""Lottery-ticket pruning and cross-domain transfer for convolutional text classifiers."""

from .corpus import DomainDataset, divergence_matrix, ingest_reviews, jsd, kl_divergence, unigram_distribution
from .lottery import InitStrategy, RoundRecord, TrainConfig, apply_init_strategy, run_lottery, train_round
from .pruning import MaskSet, PruneConfig, expected_sparsity, l0_project_topk, prune_round, sparsity_of
from .store import Ticket, load_ticket, save_ticket
from .textcnn import ModelConfig, count_params, forward, he_bound, init_params
from .transfer import TransferRecord, TransferStrategy, phase_transition_scan, run_transfer
from .vocab import SubwordVocab, bpe_train, char_coverage, encode

__version__ = "0.1.0"
