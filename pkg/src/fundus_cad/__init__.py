"""Glaucoma screening pipeline for eye fundus images.

A self-contained numerical engine: tape-based autodiff tensors, a modified
VGG-style fully-convolutional classifier, gradient-weighted class activation
heatmaps for localization, training with early stopping and stratified
cross-validation, binary-classification metrics, and an HTTP inference
service with a CLI front door.
"""

__version__ = "0.1.0"
