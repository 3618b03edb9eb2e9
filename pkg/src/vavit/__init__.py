"""Variational audio-visual multi-speaker tracking, simulation and evaluation."""

from .core import (
    InputError,
    NumericError,
    GaussianBelief,
    DynamicsModel,
    gaussian_logpdf,
    spd_project,
    bhattacharyya_likelihood,
    predict_belief,
)
from .avmap import (
    AffineExpert,
    SubbandMapping,
    AudioMappingModel,
    train_mapping,
    affine_loglik,
    region_posterior,
    doa_point_model,
    load_mapping,
    save_mapping,
)
from .tracker import (
    TrackerConfig,
    Tracker,
    FrameObservations,
    VisualObservation,
    AudioObservation,
)
from .sim import ScenarioConfig, GroundTruth, simulate_scenario

__version__ = "0.1.0"
