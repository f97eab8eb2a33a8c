"""Frozen per-frame encoders mapping raw frames to feature tokens.

Stand-ins for large pre-trained speech/lip encoders: a randomly
initialized two-layer MLP (tanh) applied independently to each frame,
never trained. Weights live outside the autodiff graph, so no gradient
can reach them by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .corpus import make_rng


class FrozenEncoder:
    """Per-frame MLP d_in -> d_hidden -> d_enc with tanh, weights frozen."""

    def __init__(self, modality, d_in, d_enc, d_hidden=None, seed=0):
        if modality not in ("audio", "video"):
            raise ValueError(f"unknown modality {modality!r}")
        self.modality = modality
        self.d_in = d_in
        self.d_enc = d_enc
        self.d_hidden = d_hidden or 2 * d_enc
        rng = make_rng((seed, modality))
        self.w1 = rng.normal(scale=1.0 / np.sqrt(d_in), size=(d_in, self.d_hidden)).astype(np.float32)
        self.b1 = np.zeros(self.d_hidden, dtype=np.float32)
        self.w2 = rng.normal(scale=1.0 / np.sqrt(self.d_hidden), size=(self.d_hidden, d_enc)).astype(np.float32)
        self.b2 = np.zeros(d_enc, dtype=np.float32)

    def encode(self, frames):
        """frames: [..., N, d_in] -> tokens [..., N, d_enc]; length preserved."""
        frames = np.asarray(frames)
        if frames.shape[-1] != self.d_in:
            raise ValueError(
                f"{self.modality} encoder expects frame dim {self.d_in}, got {frames.shape[-1]}"
            )
        dtype = frames.dtype if frames.dtype in (np.float32, np.float64) else np.float32
        h = np.tanh(frames @ self.w1.astype(dtype) + self.b1.astype(dtype))
        return h @ self.w2.astype(dtype) + self.b2.astype(dtype)

    def checksum(self):
        """Digest of the weights; must be invariant across any training run."""
        h = hashlib.sha256()
        for arr in (self.w1, self.b1, self.w2, self.b2):
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()

    def state(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def load_state(self, state):
        self.w1 = np.asarray(state["w1"], dtype=np.float32).reshape(self.w1.shape)
        self.b1 = np.asarray(state["b1"], dtype=np.float32).reshape(self.b1.shape)
        self.w2 = np.asarray(state["w2"], dtype=np.float32).reshape(self.w2.shape)
        self.b2 = np.asarray(state["b2"], dtype=np.float32).reshape(self.b2.shape)
