"""Per-rate projectors aligning compressed modality tokens with the decoder.

One two-layer MLP (Linear -> ReLU -> Linear) per modality and compression
rate. Input width follows the compression method: stacking multiplies the
encoder dim by the rate, pooling keeps it.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compression import CompressionMethod, ScaleGrid
from .corpus import make_rng


class Projector:
    """Linear(d_in -> d_hidden) -> ReLU -> Linear(d_hidden -> d_model)."""

    def __init__(self, d_in, d_hidden, d_model, rng, dtype=np.float32):
        self.d_in, self.d_hidden, self.d_model = d_in, d_hidden, d_model

        def linear(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
            return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)

        self.w1, self.b1 = linear(d_in, d_hidden)
        self.w2, self.b2 = linear(d_hidden, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"projector expects input dim {self.d_in}, got {x.shape[-1]}")
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @property
    def param_count(self):
        return self.d_in * self.d_hidden + self.d_hidden + self.d_hidden * self.d_model + self.d_model


class ProjectorBank:
    """One projector per configured audio rate and per video rate."""

    def __init__(self, grid: ScaleGrid, d_audio_enc, d_video_enc, d_model, d_hidden=None, seed=0, dtype=np.float32):
        self.grid = grid
        d_hidden = d_hidden or 2 * d_model
        self.d_hidden = d_hidden
        stack = grid.method is CompressionMethod.STACK
        self.audio = []
        self.video = []
        for rate in grid.audio_rates:
            d_in = rate * d_audio_enc if stack else d_audio_enc
            self.audio.append(Projector(d_in, d_hidden, d_model, make_rng((seed, "proj.audio", rate)), dtype))
        for rate in grid.video_rates:
            d_in = rate * d_video_enc if stack else d_video_enc
            self.video.append(Projector(d_in, d_hidden, d_model, make_rng((seed, "proj.video", rate)), dtype))

    def project(self, x: Tensor, modality, rate_index) -> Tensor:
        bank = self.audio if modality == "audio" else self.video
        rates = self.grid.audio_rates if modality == "audio" else self.grid.video_rates
        if not 0 <= rate_index < len(bank):
            raise IndexError(f"no {modality} projector at rate index {rate_index} (have {len(bank)})")
        del rates
        return bank[rate_index](x)

    def parameters(self):
        out = {}
        for rate, proj in zip(self.grid.audio_rates, self.audio):
            for k, v in proj.parameters().items():
                out[f"proj.audio.{rate}.{k}"] = v
        for rate, proj in zip(self.grid.video_rates, self.video):
            for k, v in proj.parameters().items():
                out[f"proj.video.{rate}.{k}"] = v
        return out

    @property
    def param_count(self):
        return sum(p.param_count for p in self.audio) + sum(p.param_count for p in self.video)
