"""The single universal model: frozen encoders, per-rate projectors, frozen
base decoder, and a LoRA bank routed by compression scale."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .compression import CompressionMethod, ScaleGrid, compress
from .corpus import CorpusSpec
from .decoder import Decoder, DecoderConfig
from .encoders import FrozenEncoder
from .lora import LoraBank, LoraStrategy, rank_for
from .projectors import ProjectorBank
from .vocab import BOS_ID, Vocabulary

TASKS = ("asr", "vsr", "avsr")


@dataclass
class Batch:
    """Samples stacked for one forward pass; transcripts share one length so
    frame counts agree and no padding is needed."""

    sample_ids: list
    audio: np.ndarray | None  # [B, N_A, d_A]
    video: np.ndarray | None  # [B, N_V, d_V]
    targets: np.ndarray  # [B, L] transcript ids, each row ending in EOS

    @property
    def size(self):
        return self.targets.shape[0]

    @property
    def target_len(self):
        return self.targets.shape[1]


def make_batch(samples, task) -> Batch:
    lengths = {len(s.transcript) for s in samples}
    if len(lengths) != 1:
        raise ValueError(f"batch requires equal transcript lengths, got {sorted(lengths)}")
    audio = np.stack([s.audio for s in samples]) if task in ("asr", "avsr") else None
    video = np.stack([s.video for s in samples]) if task in ("vsr", "avsr") else None
    targets = np.asarray([s.transcript for s in samples], dtype=np.int64)
    return Batch([s.sample_id for s in samples], audio, video, targets)


class MultiScaleModel:
    """Bundles every component; one instance serves all configured scales."""

    def __init__(self, corpus_spec: CorpusSpec, decoder_cfg: DecoderConfig, grid: ScaleGrid,
                 strategy: LoraStrategy, task: str, seed: int = 0,
                 d_audio_enc: int = 32, d_video_enc: int = 32, lora_s: float = 0.125):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
        if task in ("asr", "avsr") and not grid.audio_rates:
            raise ValueError(f"task {task} needs audio rates in the grid")
        if task in ("vsr", "avsr") and not grid.video_rates:
            raise ValueError(f"task {task} needs video rates in the grid")
        if task == "asr" and grid.video_rates:
            raise ValueError("asr grid must not configure video rates")
        if task == "vsr" and grid.audio_rates:
            raise ValueError("vsr grid must not configure audio rates")
        self.corpus_spec = corpus_spec
        self.cfg = decoder_cfg
        self.grid = grid
        self.strategy = strategy
        self.task = task
        self.seed = seed
        self.lora_s = lora_s
        self.vocab = Vocabulary(corpus_spec.vocab_size)
        if decoder_cfg.vocab_size != self.vocab.output_size or decoder_cfg.embed_size != self.vocab.embedding_size:
            raise ValueError(
                f"decoder vocab ({decoder_cfg.vocab_size}/{decoder_cfg.embed_size}) does not match corpus "
                f"({self.vocab.output_size}/{self.vocab.embedding_size})"
            )
        self.encoders = {}
        if task in ("asr", "avsr"):
            self.encoders["audio"] = FrozenEncoder("audio", corpus_spec.d_audio, d_audio_enc, seed=corpus_spec.seed)
        if task in ("vsr", "avsr"):
            self.encoders["video"] = FrozenEncoder("video", corpus_spec.d_video, d_video_enc, seed=corpus_spec.seed)
        self.decoder = Decoder(decoder_cfg, seed=seed)
        self.projectors = ProjectorBank(
            grid,
            d_audio_enc=d_audio_enc,
            d_video_enc=d_video_enc,
            d_model=decoder_cfg.d_model,
            seed=seed,
            dtype=decoder_cfg.dtype,
        )
        rank = rank_for(decoder_cfg.d_model, decoder_cfg.rank_divisor)
        self.lora = LoraBank(
            strategy, grid, self.decoder.layer_keys(), decoder_cfg.d_model, rank,
            s=lora_s, seed=seed, dtype=decoder_cfg.dtype,
        )
        self.frozen_base = False
        self.prompt_ids = np.asarray(self.vocab.prompt_ids(task), dtype=np.int64)

    # -- parameter bookkeeping -------------------------------------------------

    def base_parameters(self):
        return self.decoder.parameters()

    def adapter_parameters(self):
        out = dict(self.projectors.parameters())
        out.update(self.lora.parameters())
        return out

    def parameters(self):
        out = self.base_parameters()
        out.update(self.adapter_parameters())
        return out

    def trainable_parameters(self):
        return {n: t for n, t in self.parameters().items() if t.requires_grad}

    def freeze_base(self):
        for t in self.base_parameters().values():
            t.requires_grad = False
        self.frozen_base = True

    def checksum(self, names=None):
        params = self.parameters()
        names = sorted(params) if names is None else sorted(names)
        h = hashlib.sha256()
        for n in names:
            h.update(n.encode())
            h.update(np.ascontiguousarray(params[n].data).tobytes())
        for enc in self.encoders.values():
            h.update(enc.checksum().encode())
        return h.hexdigest()

    # -- forward passes ----------------------------------------------------------

    def encode_batch(self, batch: Batch):
        """Frozen per-frame encoding; outputs are constants for the graph."""
        enc_a = self.encoders["audio"].encode(batch.audio) if batch.audio is not None else None
        enc_v = self.encoders["video"].encode(batch.video) if batch.video is not None else None
        return enc_a, enc_v

    def assemble(self, enc_a, enc_v, prefix_ids, scale_index, bank="default", pool_first=None):
        """Compress, project, embed, add positions, run the decoder.

        Returns (hidden, prompt_end): hidden [B, T, d]; positions from
        prompt_end onward correspond to the target prefix. `pool_first`
        applies an extra average pooling to encoder outputs before the
        normal pipeline (the training-free baseline). `bank=None` runs the
        un-adapted base decoder (the pre-training phase).
        """
        if bank == "default":
            bank = self.lora
        dtype = self.cfg.dtype
        a_rate, v_rate = self.grid.rates_at(scale_index)
        segments = []
        if enc_a is not None:
            x = Tensor(np.asarray(enc_a, dtype=dtype))
            if pool_first:
                x = compress(x, pool_first, CompressionMethod.AVGPOOL)
            segments.append(self.projectors.project(compress(x, a_rate, self.grid.method), "audio", scale_index[0]))
        if enc_v is not None:
            x = Tensor(np.asarray(enc_v, dtype=dtype))
            if pool_first:
                x = compress(x, pool_first, CompressionMethod.AVGPOOL)
            segments.append(self.projectors.project(compress(x, v_rate, self.grid.method), "video", scale_index[1]))
        b = prefix_ids.shape[0]
        prompt = np.tile(self.prompt_ids, (b, 1))
        segments.append(self.decoder.embed_ids(prompt))
        segments.append(self.decoder.embed_ids(prefix_ids))
        h0 = ad.concat(segments, axis=1)
        t = h0.shape[1]
        if t > self.cfg.max_len:
            raise ValueError(f"assembled length {t} exceeds max_len {self.cfg.max_len}")
        h0 = ad.add(h0, self.decoder.position_slice(0, t))
        hidden = self.decoder.forward(h0, bank, scale_index)
        prompt_end = t - prefix_ids.shape[1]
        return hidden, prompt_end

    def forward_at_scale(self, batch: Batch, scale_index, bank="default", pool_first=None) -> Tensor:
        """Teacher-forced logits at target positions: [B, L, vocab]."""
        enc_a, enc_v = self.encode_batch(batch)
        prefix = np.concatenate(
            [np.full((batch.size, 1), BOS_ID, dtype=np.int64), batch.targets[:, :-1]], axis=1
        )
        hidden, prompt_end = self.assemble(enc_a, enc_v, prefix, scale_index, bank=bank, pool_first=pool_first)
        return self.decoder.logits_at(hidden, prompt_end, batch.target_len)

    def loss_at_scale(self, batch: Batch, scale_index, bank="default", pool_first=None) -> Tensor:
        """Mean next-token NLL over transcript positions (teacher forcing)."""
        logits = self.forward_at_scale(batch, scale_index, bank=bank, pool_first=pool_first)
        return ad.softmax_cross_entropy(logits, batch.targets)

    def step_logits(self, enc_a, enc_v, prefix_ids, scale_index, bank="default", pool_first=None):
        """Logits for the next token after the given prefix: [B, vocab]."""
        hidden, _ = self.assemble(enc_a, enc_v, np.asarray(prefix_ids), scale_index, bank=bank, pool_first=pool_first)
        last = self.decoder.logits_at(hidden, hidden.shape[1] - 1, 1)
        return ad.reshape(last, (last.shape[0], last.shape[2]))


def build_model(corpus_spec, grid, strategy, task, seed=0, decoder_overrides=None,
                d_audio_enc=32, d_video_enc=32, lora_s=0.125):
    """Construct a model whose vocab sizes follow the corpus spec."""
    vocab = Vocabulary(corpus_spec.vocab_size)
    overrides = dict(decoder_overrides or {})
    overrides.setdefault("vocab_size", vocab.output_size)
    overrides.setdefault("embed_size", vocab.embedding_size)
    cfg = DecoderConfig(**overrides)
    if isinstance(strategy, str):
        strategy = LoraStrategy.parse(strategy)
    return MultiScaleModel(
        corpus_spec, cfg, grid, strategy, task, seed=seed,
        d_audio_enc=d_audio_enc, d_video_enc=d_video_enc, lora_s=lora_s,
    )
