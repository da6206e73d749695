"""Music-conditioned dance generation: local-attention encoder, recurrent pose decoder, curriculum training and metrics."""

__version__ = "0.1.0"
