"""Decoder and assembled-model tests: causality, loss oracle, gradients."""

import math

import numpy as np
import pytest

from elastic_avsr import autodiff as ad
from elastic_avsr import corpus as cp
from elastic_avsr.compression import ScaleGrid
from elastic_avsr.lora import LoraStrategy
from elastic_avsr.model import build_model, make_batch

from gradcheck import finite_difference, relative_error


def tiny_corpus(num_samples=4, seed=11, **kw):
    base = dict(
        num_samples=num_samples,
        vocab_size=4,
        min_len=2,
        max_len=2,
        frames_per_symbol_video=1,
        d_audio=5,
        d_video=4,
        p_audio_corrupt=0.0,
        p_video_corrupt=0.0,
        noise_std=0.1,
        seed=seed,
    )
    base.update(kw)
    return cp.generate(cp.CorpusSpec(**base))


def tiny_model(corpus, strategy=LoraStrategy.SS, precision="float64", grid=None, task="avsr", seed=5):
    grid = grid or ScaleGrid(audio_rates=(1, 2), video_rates=(1, 2))
    return build_model(
        corpus.spec,
        grid,
        strategy,
        task,
        seed=seed,
        decoder_overrides=dict(layers=2, heads=2, d_model=32, d_ff=16, max_len=64, rank_divisor=16, precision=precision),
        d_audio_enc=6,
        d_video_enc=6,
    )


def test_causality_future_target_does_not_change_past_logits():
    corpus = tiny_corpus(min_len=4, max_len=4)
    model = tiny_model(corpus)
    batch = make_batch(corpus.samples[:1], "avsr")
    base = model.forward_at_scale(batch, (0, 0)).data.copy()
    perturbed = make_batch(corpus.samples[:1], "avsr")
    l = 2
    perturbed.targets[0, l] = (perturbed.targets[0, l] % 4) + 3  # different symbol id
    out = model.forward_at_scale(perturbed, (0, 0)).data
    # Prefix token l+1 embeds target l; logits at positions <= l are untouched.
    assert np.array_equal(out[:, : l + 1], base[:, : l + 1])
    assert not np.array_equal(out[:, l + 1 :], base[:, l + 1 :])


def test_zero_lora_factors_match_base_model_logits():
    corpus = tiny_corpus()
    model = tiny_model(corpus, strategy=LoraStrategy.MSS)
    for pairs in model.lora.specific_pairs.values():
        for pair in pairs.values():
            pair.down.data[:] = 0
            pair.up.data[:] = 0
    for pair in model.lora.global_pairs.values():
        pair.down.data[:] = 0
        pair.up.data[:] = 0
    batch = make_batch(corpus.samples[:2], "avsr")
    adapted = model.forward_at_scale(batch, (1, 0)).data
    base = model.forward_at_scale(batch, (1, 0), bank=None).data
    assert np.allclose(adapted, base, atol=1e-12)


def test_uniform_logits_loss_is_log_vocab():
    corpus = tiny_corpus(vocab_size=4)  # output vocab = 7
    model = tiny_model(corpus)
    model.decoder.head.data[:] = 0
    batch = make_batch(corpus.samples[:2], "avsr")
    loss = model.loss_at_scale(batch, (0, 0))
    assert float(loss.data) == pytest.approx(math.log(7), rel=1e-6)


def test_loss_matches_positionwise_oracle():
    corpus = tiny_corpus(min_len=3, max_len=3)
    model = tiny_model(corpus)
    batch = make_batch(corpus.samples[:1], "avsr")
    loss = float(model.loss_at_scale(batch, (1, 1)).data)
    # Oracle: re-run the forward per position, scoring one step at a time.
    enc_a, enc_v = model.encode_batch(batch)
    targets = batch.targets[0]
    prefix = [1] + list(targets[:-1])  # BOS + teacher forcing
    nlls = []
    for t in range(len(targets)):
        logits = model.step_logits(enc_a, enc_v, np.asarray([prefix[: t + 1]]), (1, 1)).data[0]
        shifted = logits - logits.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        nlls.append(-logp[targets[t]])
    assert loss == pytest.approx(float(np.mean(nlls)), rel=1e-9)


def test_forward_is_deterministic():
    corpus = tiny_corpus()
    model = tiny_model(corpus)
    batch = make_batch(corpus.samples[:2], "avsr")
    a = model.forward_at_scale(batch, (0, 1)).data
    b = model.forward_at_scale(batch, (0, 1)).data
    assert np.array_equal(a, b)


def test_overlong_sequence_reports_lengths():
    corpus = tiny_corpus(min_len=4, max_len=4)
    model = tiny_model(corpus)
    model.decoder.cfg = model.cfg  # unchanged; guard below uses assemble's check
    batch = make_batch(corpus.samples[:1], "avsr")
    object.__setattr__(model.cfg, "max_len", 8)
    with pytest.raises(ValueError, match="exceeds max_len"):
        model.forward_at_scale(batch, (0, 0))


def test_full_parameter_gradient_check_base_model():
    corpus = tiny_corpus()
    model = tiny_model(corpus, grid=ScaleGrid(audio_rates=(1,), video_rates=(1,)))
    batch = make_batch(corpus.samples[:2], "avsr")
    params = {}
    params.update(model.base_parameters())
    params.update(model.projectors.parameters())

    def loss():
        return model.loss_at_scale(batch, (0, 0), bank=None).data

    fd = finite_difference(loss, params)
    out = model.loss_at_scale(batch, (0, 0), bank=None)
    out.backward()
    worst = 0.0
    for name, p in params.items():
        err = relative_error(p.grad if p.grad is not None else np.zeros_like(p.data), fd[name])
        worst = max(worst, err)
        assert err < 1e-4, f"{name}: rel err {err:.2e}"
    assert worst < 1e-4


def test_freeze_base_blocks_gradients():
    corpus = tiny_corpus()
    model = tiny_model(corpus, precision="float32")
    model.freeze_base()
    batch = make_batch(corpus.samples[:2], "avsr")
    model.loss_at_scale(batch, (0, 0)).backward()
    assert all(t.grad is None for t in model.base_parameters().values())
    grads = [t for t in model.adapter_parameters().values() if t.grad is not None]
    assert grads


def test_task_modes_shape_the_assembly():
    corpus = tiny_corpus(min_len=3, max_len=3)
    asr = tiny_model(corpus, grid=ScaleGrid(audio_rates=(1, 2)), task="asr")
    vsr = tiny_model(corpus, grid=ScaleGrid(video_rates=(1, 2)), task="vsr")
    batch_a = make_batch(corpus.samples[:1], "asr")
    batch_v = make_batch(corpus.samples[:1], "vsr")
    assert asr.forward_at_scale(batch_a, (1, 0)).shape == (1, 4, 7)
    assert vsr.forward_at_scale(batch_v, (0, 1)).shape == (1, 4, 7)
    assert len(asr.prompt_ids) == 5
    assert len(vsr.prompt_ids) == 5


def test_avsr_prompt_is_seven_tokens():
    corpus = tiny_corpus()
    model = tiny_model(corpus)
    assert len(model.prompt_ids) == 7


def test_mismatched_task_grid_rejected():
    corpus = tiny_corpus()
    with pytest.raises(ValueError, match="must not configure video"):
        tiny_model(corpus, grid=ScaleGrid(audio_rates=(1,), video_rates=(1,)), task="asr")
