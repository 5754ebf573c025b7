"""
microus-screen: micro-ultrasound prostate cancer screening pipeline.

Core modules:
  - dataset: cohort types, manifest I/O, validation, prostate volume
  - autoencoder: convolutional autoencoder and 256-d slice features
  - forest: class-balanced random forest with OOB scoring
  - screening: imaging and clinical patient-level pipelines
  - evaluation: patient-level cross-validation, metrics, ROC
  - synthesis: phantom cohorts with planted lesions
  - cli: reproducible command-line runs
"""

__version__ = "1.0.0"

from src.dataset import Cohort, PatientRecord, SliceImage, SliceLabel, Study

__all__ = [
    "Cohort",
    "PatientRecord",
    "SliceImage",
    "SliceLabel",
    "Study",
]
