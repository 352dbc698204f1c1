"""Deep residual contrastive RL on analytic goal-conditioned environments."""

__version__ = "0.1.0"
