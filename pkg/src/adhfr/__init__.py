"""Adversarial discriminative NIR-VIS face recognition at desk scale."""

__version__ = "0.1.0"
