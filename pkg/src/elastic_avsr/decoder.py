"""Decoder-only causal transformer over assembled multimodal prefixes.

The input sequence is [audio tokens | video tokens | prompt tokens | target
prefix]; every position attends causally over the whole assembly and logits
are read out at target-prefix positions only. Query/value projections (the
adapted matrix set is configurable) route through the LoRA bank when one is
active; with no bank the frozen base matrices act alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import make_rng


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    vocab_size: int = 35  # emittable ids: specials + symbols
    embed_size: int = 42  # emittable ids + prompt words
    max_len: int = 512
    rank_divisor: int = 32
    positions: str = "sinusoidal"
    adapted_matrices: tuple = ("q", "v")
    precision: str = "float32"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.positions != "sinusoidal":
            raise ValueError(f"unknown positional scheme {self.positions!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        object.__setattr__(self, "adapted_matrices", tuple(self.adapted_matrices))
        unknown = set(self.adapted_matrices) - {"q", "k", "v", "o"}
        if unknown:
            raise ValueError(f"adapted_matrices contains unknown entries {sorted(unknown)}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    @property
    def head_dim(self):
        return self.d_model // self.heads


def sinusoidal_positions(max_len, d_model, dtype=np.float32):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angles = pos / np.power(10000.0, 2 * i / d_model)
    pe = np.zeros((max_len, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


class Decoder:
    """Pre-LN transformer decoder with a token embedding and output head."""

    def __init__(self, cfg: DecoderConfig, seed=0):
        self.cfg = cfg
        dtype = cfg.dtype
        rng = make_rng((seed, "decoder"))
        d, dff = cfg.d_model, cfg.d_ff

        def w(shape, fan_in):
            return Tensor(rng.normal(scale=1.0 / np.sqrt(fan_in), size=shape).astype(dtype), requires_grad=True)

        self.tok_emb = Tensor(rng.normal(scale=0.02, size=(cfg.embed_size, d)).astype(dtype), requires_grad=True)
        self.layers = []
        for _ in range(cfg.layers):
            self.layers.append(
                {
                    "ln1_g": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                    "ln1_b": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                    "wq": w((d, d), d),
                    "wk": w((d, d), d),
                    "wv": w((d, d), d),
                    "wo": w((d, d), d),
                    "ln2_g": Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                    "ln2_b": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                    "w_ff1": w((d, dff), d),
                    "b_ff1": Tensor(np.zeros(dff, dtype=dtype), requires_grad=True),
                    "w_ff2": w((dff, d), dff),
                    "b_ff2": Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                }
            )
        self.ln_f_g = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.ln_f_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.head = w((d, cfg.vocab_size), d)
        self.positions = sinusoidal_positions(cfg.max_len, d, dtype)

    def layer_keys(self):
        """Adapted-matrix identifiers, e.g. '0.q', '0.v', '1.q', ..."""
        return [f"{l}.{m}" for l in range(self.cfg.layers) for m in self.cfg.adapted_matrices]

    def parameters(self):
        out = {"decoder.tok_emb": self.tok_emb, "decoder.ln_f.g": self.ln_f_g, "decoder.ln_f.b": self.ln_f_b, "decoder.head": self.head}
        for l, layer in enumerate(self.layers):
            for k, t in layer.items():
                out[f"decoder.layers.{l}.{k}"] = t
        return out

    def _causal_mask(self, t):
        mask = np.triu(np.full((t, t), -1e9, dtype=self.cfg.dtype), k=1)
        return Tensor(mask)

    def _project(self, x, layer_idx, layer, name, bank, scale_index):
        key = f"{layer_idx}.{name}"
        if bank is not None and name in self.cfg.adapted_matrices:
            return bank.adapted_forward(x, layer[f"w{name}"], key, scale_index)
        return ad.matmul(x, layer[f"w{name}"])

    def _split_heads(self, x, b, t):
        h, hd = self.cfg.heads, self.cfg.head_dim
        return ad.transpose(ad.reshape(x, (b, t, h, hd)), (0, 2, 1, 3))

    def forward(self, h0: Tensor, bank=None, scale_index=(0, 0)) -> Tensor:
        """h0: embedded assembly [B, T, d] -> final hidden states [B, T, d]."""
        b, t, d = h0.shape
        if t > self.cfg.max_len:
            raise ValueError(f"assembled length {t} exceeds max_len {self.cfg.max_len}")
        mask = self._causal_mask(t)
        x = h0
        inv_sqrt = 1.0 / np.sqrt(self.cfg.head_dim)
        for idx, layer in enumerate(self.layers):
            xn = ad.layer_norm(x, layer["ln1_g"], layer["ln1_b"])
            q = self._split_heads(self._project(xn, idx, layer, "q", bank, scale_index), b, t)
            k = self._split_heads(self._project(xn, idx, layer, "k", bank, scale_index), b, t)
            v = self._split_heads(self._project(xn, idx, layer, "v", bank, scale_index), b, t)
            scores = ad.mul_scalar(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt)
            probs = ad.softmax(ad.add(scores, mask), axis=-1)
            ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, t, d))
            x = ad.add(x, self._project(ctx, idx, layer, "o", bank, scale_index))
            xn2 = ad.layer_norm(x, layer["ln2_g"], layer["ln2_b"])
            ff = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(xn2, layer["w_ff1"]), layer["b_ff1"])), layer["w_ff2"]), layer["b_ff2"])
            x = ad.add(x, ff)
        return ad.layer_norm(x, self.ln_f_g, self.ln_f_b)

    def logits_at(self, hidden: Tensor, start: int, length: int) -> Tensor:
        """Output logits for positions [start, start+length): [B, length, V]."""
        return ad.matmul(ad.narrow(hidden, 1, start, length), self.head)

    def embed_ids(self, ids) -> Tensor:
        return ad.embedding(self.tok_emb, np.asarray(ids))

    def position_slice(self, start, length):
        return Tensor(self.positions[start : start + length])
