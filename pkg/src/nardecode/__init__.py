"""Non-autoregressive sequence decoding methods on a synthetic task."""

from .config import Config
from .ctc import (InfeasibleTargetError, PosteriorGrid, Vocab, best_path_decode,
                  collapse, ctc_loss, enumerate_paths, viterbi_alignment)
from .data import Dataset, TaskSpec, Utterance, generate, load_dataset, save_dataset
from .metrics import EvalReport, corpus_eval, edit_alignment

__version__ = "0.1.0"
