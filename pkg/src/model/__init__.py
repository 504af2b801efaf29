"""Score-map network."""

from .unet import (
    ModelConfig,
    DetectorNet,
    build_model,
    forward,
    predict_score_map,
    count_parameters,
    save_weights,
    load_weights,
    read_weights_header,
)
