"""Bag-of-visual-words retrieval."""

from .bovw import (
    RetrievalConfig,
    Vocabulary,
    GlobalDescriptor,
    RetrievalIndex,
    build_vocabulary,
    global_descriptor,
    word_histogram,
    inverse_document_frequency,
    query,
    accuracy_at_k,
    save_vocabulary,
    load_vocabulary,
    image_label,
    run_retrieval,
)
