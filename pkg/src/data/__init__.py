"""Synthetic triplet and evaluation-pair generation."""

from .synth import (
    PhotometricConfig,
    SynthConfig,
    TrainingTriplet,
    photometric_augment,
    generate_triplet,
    synthetic_anchor,
    load_anchor,
    write_triplet,
    load_triplet,
    write_triplet_dataset,
    read_manifest,
    write_eval_dataset,
    write_retrieval_dataset,
    list_images,
    derive_seeds,
)
