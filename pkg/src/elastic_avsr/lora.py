"""Low-rank adaptation of frozen projection matrices, with three routing
strategies over the compression-scale grid.

MS keeps one global adapter pair shared by every scale; SS keeps one pair
per (audio, video) scale index; MSS sums a global pair and the scale's
specific pair. The adapted product is computed as (x @ down) @ up and added
to the frozen base product scaled by `s`.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compression import ScaleGrid
from .corpus import make_rng

DEFAULT_SCALE = 0.125  # tunable scalar multiplier on the adapter product


class LoraStrategy(Enum):
    MS = "ms"
    SS = "ss"
    MSS = "mss"

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown adaptation strategy {name!r}; expected ms, ss or mss") from None


class LoraConfigError(ValueError):
    pass


def rank_for(d_model: int, rank_divisor: int) -> int:
    """Bottleneck rank rule: hidden size divided by the configured divisor."""
    if rank_divisor < 1:
        raise LoraConfigError(f"rank_divisor must be >= 1, got {rank_divisor}")
    if d_model % rank_divisor != 0:
        raise LoraConfigError(f"rank_divisor {rank_divisor} does not divide hidden size {d_model}")
    return d_model // rank_divisor


class LoraPair:
    """down: [d, r], up: [r, d]; up starts at zero so training begins at the
    unmodified base model."""

    def __init__(self, d, rank, rng, dtype=np.float32):
        self.down = Tensor(
            rng.normal(scale=1.0 / np.sqrt(d), size=(d, rank)).astype(dtype), requires_grad=True
        )
        self.up = Tensor(np.zeros((rank, d), dtype=dtype), requires_grad=True)

    def apply(self, x: Tensor) -> Tensor:
        return ad.matmul(ad.matmul(x, self.down), self.up)


class LoraBank:
    """Adapter pairs for every adapted layer matrix, routed by strategy."""

    def __init__(self, strategy, grid: ScaleGrid, layer_keys, d_model, rank, s=DEFAULT_SCALE, seed=0, dtype=np.float32):
        if rank > d_model // 2:
            raise LoraConfigError(f"rank {rank} too large for hidden size {d_model} (need rank <= d/2)")
        self.strategy = strategy
        self.grid = grid
        self.layer_keys = tuple(layer_keys)
        self.d_model = d_model
        self.rank = rank
        self.s = float(s)
        self.global_pairs = {}
        self.specific_pairs = {}
        if strategy in (LoraStrategy.MS, LoraStrategy.MSS):
            for key in self.layer_keys:
                self.global_pairs[key] = LoraPair(d_model, rank, make_rng((seed, "lora.ms", key)), dtype)
        if strategy in (LoraStrategy.SS, LoraStrategy.MSS):
            for index in grid.pairs():
                self.specific_pairs[index] = {
                    key: LoraPair(d_model, rank, make_rng((seed, "lora.ss", index[0], index[1], key)), dtype)
                    for key in self.layer_keys
                }

    def _check_index(self, scale_index):
        if scale_index not in self.grid.pairs():
            raise LoraConfigError(f"scale index {scale_index} outside grid (pairs: {self.grid.pairs()})")

    def adapted_forward(self, x: Tensor, base_w: Tensor, layer_key, scale_index) -> Tensor:
        """x @ base_w plus the strategy's scaled adapter product(s)."""
        self._check_index(scale_index)
        out = ad.matmul(x, base_w)
        if self.strategy in (LoraStrategy.SS, LoraStrategy.MSS):
            pair = self.specific_pairs[scale_index][layer_key]
            out = ad.add(out, ad.mul_scalar(pair.apply(x), self.s))
        if self.strategy in (LoraStrategy.MS, LoraStrategy.MSS):
            pair = self.global_pairs[layer_key]
            out = ad.add(out, ad.mul_scalar(pair.apply(x), self.s))
        return out

    def active_parameter_names(self, scale_index):
        """Names of the adapter parameters a single-scale deployment needs."""
        self._check_index(scale_index)
        names = []
        i, j = scale_index
        if self.strategy in (LoraStrategy.MS, LoraStrategy.MSS):
            names += [f"lora.ms.{key}.{part}" for key in self.layer_keys for part in ("down", "up")]
        if self.strategy in (LoraStrategy.SS, LoraStrategy.MSS):
            names += [f"lora.ss.{i}.{j}.{key}.{part}" for key in self.layer_keys for part in ("down", "up")]
        return sorted(names)

    def parameters(self):
        out = {}
        for key, pair in self.global_pairs.items():
            out[f"lora.ms.{key}.down"] = pair.down
            out[f"lora.ms.{key}.up"] = pair.up
        for (i, j), pairs in self.specific_pairs.items():
            for key, pair in pairs.items():
                out[f"lora.ss.{i}.{j}.{key}.down"] = pair.down
                out[f"lora.ss.{i}.{j}.{key}.up"] = pair.up
        return out

    @property
    def param_count(self):
        per_pair = 2 * self.d_model * self.rank
        n_global = len(self.global_pairs)
        n_specific = sum(len(p) for p in self.specific_pairs.values())
        return per_pair * (n_global + n_specific)

    def pruned(self, scale_index):
        """A bank serving only `scale_index`, sharing the same tensors, with
        the grid collapsed to that single scale (index (0, 0))."""
        self._check_index(scale_index)
        a, v = self.grid.rates_at(scale_index)
        sub_grid = ScaleGrid(
            audio_rates=(a,) if a is not None else (),
            video_rates=(v,) if v is not None else (),
            method=self.grid.method,
        )
        clone = LoraBank.__new__(LoraBank)
        clone.strategy = self.strategy
        clone.grid = sub_grid
        clone.layer_keys = self.layer_keys
        clone.d_model = self.d_model
        clone.rank = self.rank
        clone.s = self.s
        clone.global_pairs = dict(self.global_pairs)
        clone.specific_pairs = {}
        if self.strategy in (LoraStrategy.SS, LoraStrategy.MSS):
            clone.specific_pairs[(0, 0)] = dict(self.specific_pairs[scale_index])
        return clone
