"""Repeat-factor rebalancing (RFS, IRFS, E-IRFS) for object-detection datasets."""
from ._accel import BACKEND
from .errors import (AnnotationParseError, AnnotationValidationError, DiagnosticError,
                     EmptyDatasetError, FactorDomainError, FactorOverflowError,
                     GenerationError, InsufficientDataError, ManifestFormatError,
                     RebalanceError)
from .factors import (Method, RebalanceConfig, RepeatFactorTable, build_table,
                      eirfs_factor, eirfs_first_derivative, eirfs_second_derivative,
                      image_repeat, irfs_factor, irfs_inner, rfs_factor,
                      selection_probabilities)
from .frequency import FrequencyTable, compute_frequencies
from .ingest import (CategoryInfo, DatasetIndex, ImageRecord, ValidationIssue, load_dataset,
                     parse_coco, parse_yolo, read_manifest, validate, write_manifest)
from .sampling import EpochManifest, draw_epoch, expand_epoch, plan_epochs

__version__ = "0.1.0"
