"""Relighting-based color constancy: von Kries data synthesis, a cascaded estimator and its evaluation."""
__version__ = "0.1.0"

from .color import (Domain, Illuminant, LinearImage, angular_error, correct, gamma_decode, gamma_encode,
                    inverse_tone_map, relight, reprocess, tone_map, unprocess_srgb)
from .errors import (BadMagicError, CheckpointMismatchError, DataError, DivisionGuardError, FormatError,
                     InvalidInputError, InvalidMetadataError, NumericFaultError, RelightError,
                     SensorMismatchError, UnsupportedFormatError)
from .augment import (AugmentationConfig, Provenance, TrainingPair, geometric_augment, make_random_relight_pair,
                      make_reshuffle_pair, make_uip_pair, sample_uip_illuminant, sie_next)
from .dataio import (Manifest, SampleRecord, import_ppm_as_uip, kfold_split, load_manifest, preprocess,
                     read_ccraw, synth_mondrian, write_ccraw)
from .network import BackboneConfig, CascadeModel, cascade_forward, count_params, isam_forward
from .training import TrainConfig, adam_step, multistage_angular_loss, train
from .evaluation import (MetricsReport, compute_stats, evaluate, gray_edge1, gray_world, shades_of_gray,
                         white_patch)

__all__ = [name for name in dir() if not name.startswith("_")]
