"""Slot-filling non-autoregressive forced alignment on a small numpy autodiff core."""

from .aligner import (AlignerConfig, AlignerModel, TrainHyper, build_slot_sequence, discretize,
                      make_targets, nar_decode, nar_decode_batch, train, training_loss)
from .encoder import Encoder, EncoderConfig, open_stream, stream_finalize, stream_push
from .metrics import aas, aas_corpus
from .postproc import AlignmentResult, WordTiming, to_alignment
from .protocol import AsrOutput, format_output, parse_output
from .synthdata import Manifest, SynthConfig, Utterance, corrupt_labels, gen_corpus, make_utterances

__version__ = "0.1.0"
