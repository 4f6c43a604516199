"""Streaming speaker anonymization: causal content tokens, delayed
interleaved autoregressive acoustic-token generation, and prompt-pool
pseudo-speakers."""

from .config import FRAME_MS, FRAME_SAMPLES, MAX_DELAY, SAMPLE_RATE, ModelConfig

__version__ = "0.1.0"

__all__ = ["FRAME_MS", "FRAME_SAMPLES", "MAX_DELAY", "SAMPLE_RATE", "ModelConfig", "__version__"]
