"""Detect and filter FGSM-perturbed frames in video streams.

The package is split by stage: ``frame_io`` (Y4M/PPM/manifest), ``tinynet``
(the seeded gradient-source CNN), ``attack`` (FGSM), ``features`` (multi-scale
frame statistics), ``isoforest`` (Isolation Forest), ``pipeline`` (batch and
streaming detection), ``evaluation`` (confusion matrix, metrics, ROC) and
``report`` (SVG figures, decorated frames).
"""

__version__ = "0.1.0"
