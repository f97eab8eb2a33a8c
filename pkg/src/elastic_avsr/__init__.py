"""Elastic multi-scale audio-visual transcription at desk scale.

One trained model serves every configured audio/video token compression
rate: per-rate projectors and low-rank adapters are selected at inference
time while the frozen encoders and base decoder are shared.
"""

__version__ = "0.1.0"
