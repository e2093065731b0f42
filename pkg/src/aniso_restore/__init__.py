"""Anisotropic non-Lipschitz regularized image restoration and two-stage segmentation."""
