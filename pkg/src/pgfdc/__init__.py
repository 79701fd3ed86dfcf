"""PPO with rewards shaped by a demonstration discriminator and a curiosity model, on sparse-reward grid worlds."""

__version__ = "0.1.0"
