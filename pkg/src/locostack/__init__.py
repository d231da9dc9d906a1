"""Terrain-aware locomotion stack: motion synthesis and augmentation, a
few-step diffusion motion generator, a motion-tracking reward suite, a
reduced closed-loop tracker environment with RL training stages, and an
evaluation harness."""

__version__ = "0.1.0"
