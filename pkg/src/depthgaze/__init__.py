"""Depth-aware video saliency: a candidate-transition baseline and a convolutional autoencoder."""

__version__ = "0.1.0"
