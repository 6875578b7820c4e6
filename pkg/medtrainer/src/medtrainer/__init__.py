"""medtrainer: toy multimodal encoder-decoder over function-image/sequence pairs."""

from .errors import SchemaMismatch
from .generate import generate_ots, sequence_complete
from .io import PairDataset, load_vocab, write_candidates_csv
from .losses import NegativeQueue, foc_loss, fom_loss, lm_loss
from .model import MedModel, MixupEmbedder, ModelConfig
from .tokenizer import TokenizerConfig, detokenize, tokenize
from .train import TrainSchedule, load_checkpoint, train

__version__ = "0.1.0"
