"""Learned pairing policy and its actor-critic training loop."""
from .loac import (CriticContext, EpochRecord, TrainConfig, TrainState, infer,
                   init_state, loac_run, run_epoch, select_best)
from .network import Adam, PairingPolicy, column_softmax, train_step
from .replay import ReplayBuffer
from .sampler import greedy_pairing, sample_pairings, selection_probabilities
from .traits import NormalizationRecord, TraitMatrices, normalize_traits, raw_traits

__all__ = ["CriticContext", "EpochRecord", "TrainConfig", "TrainState", "infer", "init_state",
           "loac_run", "run_epoch", "select_best", "Adam", "PairingPolicy", "column_softmax", "train_step", "ReplayBuffer",
           "greedy_pairing", "sample_pairings", "selection_probabilities",
           "NormalizationRecord", "TraitMatrices", "normalize_traits", "raw_traits"]
