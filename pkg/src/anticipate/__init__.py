"""Human action anticipation: intention recognition, multi-sequence action
prediction with beam search, and beam-based expected-reward planning."""

from .data import Dataset, FeatureGroup, FeatureSequence, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .decoder import Beam, BeamSet, beam_decode, cumulative_probability, exhaustive_decode, greedy_decode
from .models import (PredictionModel, RecognitionModel, TrainingConfig, decode_step, encode, recognize,
                     sample_sequence, train_prediction, train_recognition)
from .nn import LstmState, Params
from .vocabulary import ActionVocabulary

__version__ = "0.1.0"

__all__ = [
    "ActionVocabulary", "Beam", "BeamSet", "Dataset", "FeatureGroup", "FeatureSequence", "LstmState", "Params",
    "PredictionModel", "RecognitionModel", "SyntheticSpec", "TrainingConfig", "beam_decode",
    "cumulative_probability", "decode_step", "encode", "exhaustive_decode", "generate_synthetic",
    "greedy_decode", "load_dataset", "recognize", "sample_sequence", "save_dataset", "train_prediction",
    "train_recognition",
]
