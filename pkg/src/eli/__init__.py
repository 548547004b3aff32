"""Energy-based realignment of drifted latent representations.

Trains a small energy network to score pre-drift latents low and post-drift
latents high, then walks drifted latents down the learned energy surface to
recover a frozen classifier head's accuracy on its original task.
"""

__version__ = "0.1.0"
