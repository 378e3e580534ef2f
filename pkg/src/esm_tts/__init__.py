"""Bilingual TTS conditioning: token masks, the embedding strength modulator,
and phonology/language control, on a toy encoder."""

from .conditioning import (
    ControlSpec,
    EmbeddingTables,
    SpanControl,
    apply_combination,
    combination_slots,
    condition_sequence,
    control_double,
    enhance_expressiveness,
    resolve_label_vectors,
    smooth_transition,
)
from .config import RunConfig
from .esm import ESMConfig, ESMDiagnostics, ESMParams, cosine_head, decompose, esm_forward, esm_forward_mixed, multi_head
from .model import ToyModel, pipeline_backward, pipeline_forward, toy_encode
from .tokens import (
    CorpusKind,
    Language,
    Phonology,
    TokenInventory,
    TokenKind,
    Utterance,
    assign_labels,
    build_inventory,
    compute_language_mask,
    compute_phonology_mask,
    parse_utterance,
    serialize_utterance,
)

__version__ = "0.1.0"
