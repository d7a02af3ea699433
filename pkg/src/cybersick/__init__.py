"""cybersick: EEG/ERP cybersickness classification with per-subject calibration.

Deterministic, dependency-light pipeline: epoched ERP datasets, artifact and
outlier screening, compact convolutional / transformer classifiers trained
leave-one-subject-out, per-subject calibration fine-tuning, and
gradient-based attribution maps.
"""

__version__ = "0.1.0"
