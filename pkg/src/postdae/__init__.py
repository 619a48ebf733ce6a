"""Denoising-autoencoder post-processing for segmentation masks, with the
synthetic data, corruption, CRF baseline and evaluation tooling around it."""

__version__ = "0.1.0"
