"""Continual few-shot GAN adaptation with low-rank adapters.

A frozen generator is adapted to each new task through LoRA factors on its
fully-connected layers and LoRA-in-LoRA factors on its convolutions; each
task's adapters are stored separately so earlier tasks never degrade.
"""
from colora.runtime import apply_reference_mode

apply_reference_mode()

__version__ = "0.1.0"
