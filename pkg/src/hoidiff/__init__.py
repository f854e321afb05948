"""hoidiff: diffusion models for hand-object manipulation trajectories.

A small CPU-only toolkit covering the full loop: synthetic grasp
trajectory generation, a conditional clean-sample diffusion model over
pose sequences, mesh retrieval by scene features, inference-time
contact steering against retrieved geometry, and a six-metric
evaluation suite with rendered report figures.
"""

__version__ = "0.1.0"
