"""Token-sequence length reduction at configured rates.

Two methods: average pooling (kernel = stride = rate, feature dim kept)
and stacking (rate consecutive frames concatenated along the feature dim).
Both use floor semantics: trailing frames that do not fill a window are
dropped. Built from differentiable primitives so gradients pass through.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import autodiff as ad
from .autodiff import Tensor


class CompressionMethod(Enum):
    AVGPOOL = "avgpool"
    STACK = "stack"

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown compression method {name!r}; expected avgpool or stack") from None


class CompressionError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleGrid:
    """Configured audio and video compression rates; one may be empty for
    single-modality tasks."""

    audio_rates: tuple = ()
    video_rates: tuple = ()
    method: CompressionMethod = CompressionMethod.AVGPOOL

    def __post_init__(self):
        object.__setattr__(self, "audio_rates", tuple(int(r) for r in self.audio_rates))
        object.__setattr__(self, "video_rates", tuple(int(r) for r in self.video_rates))
        if not self.audio_rates and not self.video_rates:
            raise CompressionError("grid needs at least one audio or video rate")
        for name, rates in (("audio", self.audio_rates), ("video", self.video_rates)):
            if any(r < 1 for r in rates):
                raise CompressionError(f"{name} rates must be positive, got {rates}")
            if any(b <= a for a, b in zip(rates, rates[1:])):
                raise CompressionError(f"{name} rates must be strictly increasing, got {rates}")

    @property
    def num_audio(self):
        return len(self.audio_rates)

    @property
    def num_video(self):
        return len(self.video_rates)

    def pairs(self):
        """All scale indices (i, j); a missing modality contributes index 0."""
        gs = range(self.num_audio) if self.audio_rates else (0,)
        ts = range(self.num_video) if self.video_rates else (0,)
        return [(i, j) for i in gs for j in ts]

    @property
    def size(self):
        return len(self.pairs())

    def rates_at(self, index):
        """(audio_rate, video_rate) for scale index (i, j); None if absent."""
        i, j = index
        if index not in self.pairs():
            raise CompressionError(f"scale index {index} outside grid {self.audio_rates}x{self.video_rates}")
        a = self.audio_rates[i] if self.audio_rates else None
        v = self.video_rates[j] if self.video_rates else None
        return a, v

    def finest(self):
        return (0, 0)


def compress(x: Tensor, rate: int, method: CompressionMethod) -> Tensor:
    """Shorten along the time axis: [..., N, d] -> [..., floor(N/rate), d']
    where d' = d for AVGPOOL and rate*d for STACK."""
    if rate < 1:
        raise CompressionError(f"compression rate must be >= 1, got {rate}")
    n = x.shape[-2]
    d = x.shape[-1]
    if rate == 1:
        return x
    if n < rate:
        raise CompressionError(f"sequence shorter than compression rate: N={n} < rate={rate}")
    m = n // rate
    kept = ad.narrow(x, x.data.ndim - 2, 0, m * rate)
    windows = ad.reshape(kept, x.shape[:-2] + (m, rate, d))
    if method is CompressionMethod.AVGPOOL:
        return ad.mean(windows, axis=windows.data.ndim - 2)
    return ad.reshape(kept, x.shape[:-2] + (m, rate * d))


def compress_all(x_audio, x_video, grid: ScaleGrid):
    """Compress both streams at every grid scale: dict (i, j) -> (audio, video),
    entries None for an absent modality."""
    out = {}
    for i, j in grid.pairs():
        a_rate, v_rate = grid.rates_at((i, j))
        ca = compress(x_audio, a_rate, grid.method) if a_rate is not None else None
        cv = compress(x_video, v_rate, grid.method) if v_rate is not None else None
        out[(i, j)] = (ca, cv)
    return out
