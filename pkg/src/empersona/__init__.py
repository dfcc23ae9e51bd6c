"""Empathetic response generation with listener-consistent personality.

Training, calibration, retrieval and evaluation all run on a small
reverse-mode autodiff core (``autodiff``) with numba-accelerated kernels
(``backend``). Everything is CPU-only and deterministic given a seed.
"""

__version__ = "0.1.0"
