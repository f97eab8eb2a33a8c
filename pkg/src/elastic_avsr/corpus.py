"""Synthetic paired audio/video token-stream corpus with transcripts.

Each transcript symbol is rendered as a run of feature frames: the symbol
maps to a fixed codeword over frame slots (2*frames_per_symbol_video audio
slots, frames_per_symbol_video video slots), each slot drawn from a small
embedding alphabet, plus Gaussian noise. Distributing the symbol's identity
across slots makes average pooling genuinely lossy (window means collapse
slot order), so error rates degrade as compression grows. Per-modality
corruption replaces a symbol's frames with pure noise so that neither
modality alone suffices.

On disk a corpus is a directory with `manifest.json` plus one raw
little-endian float32 blob; round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .vocab import EOS_ID, NUM_SPECIALS, Vocabulary

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "data.bin"
FORMAT_VERSION = 1


class CorpusError(ValueError):
    """Raised for invalid specs or malformed on-disk corpora."""


def make_rng(seed):
    """Seedable portable generator (PCG64) used across the package.

    seed: an int, or a tuple of ints and strings (strings hash to stable
    integers) so sub-streams can be derived from one corpus seed.
    """

    def entropy(s):
        if isinstance(s, str):
            return int.from_bytes(hashlib.sha256(s.encode()).digest()[:8], "little")
        return int(s)

    if isinstance(seed, (tuple, list)):
        seq = np.random.SeedSequence([entropy(s) for s in seed])
    else:
        seq = np.random.SeedSequence(entropy(seed))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class CorpusSpec:
    num_samples: int = 2000
    vocab_size: int = 32
    min_len: int = 4
    max_len: int = 12
    frames_per_symbol_video: int = 4
    d_audio: int = 16
    d_video: int = 16
    p_audio_corrupt: float = 0.15
    p_video_corrupt: float = 0.15
    noise_std: float = 0.3
    alphabet_size: int = 2
    seed: int = 0

    def validate(self):
        if self.num_samples < 0:
            raise CorpusError("num_samples must be >= 0")
        if self.vocab_size < 1:
            raise CorpusError("vocab_size must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise CorpusError("need 1 <= min_len <= max_len")
        if self.frames_per_symbol_video < 1:
            raise CorpusError("frames_per_symbol_video must be >= 1")
        if self.d_audio < 1 or self.d_video < 1:
            raise CorpusError("feature dims must be >= 1")
        for p in (self.p_audio_corrupt, self.p_video_corrupt):
            if not 0.0 <= p <= 1.0:
                raise CorpusError("corruption probabilities must lie in [0, 1]")
        if self.noise_std < 0:
            raise CorpusError("noise_std must be >= 0")
        if self.alphabet_size < 2:
            raise CorpusError("alphabet_size must be >= 2")
        return self


@dataclass
class Sample:
    sample_id: str
    audio: np.ndarray  # [N_A, d_audio] float32
    video: np.ndarray  # [N_V, d_video] float32
    transcript: list[int]  # symbol ids, ends with EOS

    @property
    def num_symbols(self):
        return len(self.transcript) - 1


class Codebooks:
    """Per-modality slot codewords and alphabet embeddings, derived from the
    corpus seed so they reproduce without being stored."""

    def __init__(self, spec: CorpusSpec):
        rng = make_rng(spec.seed)
        v = spec.vocab_size
        b = spec.alphabet_size
        self.audio_slots = 2 * spec.frames_per_symbol_video
        self.video_slots = spec.frames_per_symbol_video
        self.audio_alphabet = rng.normal(size=(b, spec.d_audio))
        self.video_alphabet = rng.normal(size=(b, spec.d_video))
        self.audio_words = _distinct_codewords(rng, v, self.audio_slots, b)
        self.video_words = rng.integers(0, b, size=(v, self.video_slots))

    def audio_frames(self, symbol):
        """Noiseless audio rendering of one symbol: [audio_slots, d_audio]."""
        return self.audio_alphabet[self.audio_words[symbol]]

    def video_frames(self, symbol):
        return self.video_alphabet[self.video_words[symbol]]


def _distinct_codewords(rng, count, slots, alphabet):
    if alphabet**slots < count:
        raise CorpusError(
            f"alphabet_size**audio_slots = {alphabet**slots} cannot encode {count} symbols"
        )
    seen = set()
    words = np.empty((count, slots), dtype=np.int64)
    i = 0
    while i < count:
        w = tuple(rng.integers(0, alphabet, size=slots))
        if w in seen:
            continue
        seen.add(w)
        words[i] = w
        i += 1
    return words


@dataclass
class Corpus:
    spec: CorpusSpec
    samples: list[Sample] = field(default_factory=list)

    @property
    def vocabulary(self):
        return Vocabulary(self.spec.vocab_size)

    @property
    def codebooks(self):
        return Codebooks(self.spec)

    def __len__(self):
        return len(self.samples)


def generate(spec: CorpusSpec) -> Corpus:
    """Deterministically generate a corpus from its spec."""
    spec.validate()
    books = Codebooks(spec)
    rng = make_rng((spec.seed, 0xC0DE))
    samples = []
    r_v = spec.frames_per_symbol_video
    for idx in range(spec.num_samples):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        symbols = rng.integers(0, spec.vocab_size, size=length)
        audio = np.concatenate([books.audio_frames(s) for s in symbols], axis=0)
        video = np.concatenate([books.video_frames(s) for s in symbols], axis=0)
        if spec.noise_std > 0:
            audio = audio + rng.normal(scale=spec.noise_std, size=audio.shape)
            video = video + rng.normal(scale=spec.noise_std, size=video.shape)
        for k in range(length):
            if rng.random() < spec.p_audio_corrupt:
                audio[2 * r_v * k : 2 * r_v * (k + 1)] = rng.normal(size=(2 * r_v, spec.d_audio))
            if rng.random() < spec.p_video_corrupt:
                video[r_v * k : r_v * (k + 1)] = rng.normal(size=(r_v, spec.d_video))
        transcript = [int(s) + NUM_SPECIALS for s in symbols] + [EOS_ID]
        samples.append(
            Sample(
                sample_id=f"sample-{idx:06d}",
                audio=audio.astype(np.float32),
                video=video.astype(np.float32),
                transcript=transcript,
            )
        )
    return Corpus(spec=spec, samples=samples)


def save(corpus: Corpus, path) -> None:
    """Write manifest.json + one float32 little-endian blob for this split."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    records = []
    for s in corpus.samples:
        audio = np.ascontiguousarray(s.audio, dtype="<f4")
        video = np.ascontiguousarray(s.video, dtype="<f4")
        records.append(
            {
                "id": s.sample_id,
                "audio_offset": len(blob),
                "audio_shape": list(audio.shape),
                "video_offset": len(blob) + audio.nbytes,
                "video_shape": list(video.shape),
                "transcript": list(map(int, s.transcript)),
            }
        )
        blob += audio.tobytes()
        blob += video.tobytes()
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "<f4",
        "blob": BLOB_NAME,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(bytes(blob)).hexdigest(),
        "spec": asdict(corpus.spec),
        "vocab": {"num_symbols": corpus.spec.vocab_size, "pad": 0, "bos": 1, "eos": 2},
        "samples": records,
    }
    (path / BLOB_NAME).write_bytes(bytes(blob))
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load(path) -> Corpus:
    """Load a corpus directory, verifying the blob checksum and offsets."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorpusError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CorpusError(f"malformed manifest {manifest_path}: {e}") from e
    for key in ("format_version", "dtype", "blob", "blob_sha256", "spec", "samples"):
        if key not in manifest:
            raise CorpusError(f"manifest {manifest_path} missing key {key!r}")
    blob_path = path / manifest["blob"]
    if not blob_path.exists():
        raise CorpusError(f"manifest references missing blob: {blob_path}")
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CorpusError(f"checksum mismatch for {blob_path}: {digest} != {manifest['blob_sha256']}")
    spec = CorpusSpec(**manifest["spec"]).validate()
    samples = []
    for rec in manifest["samples"]:
        audio = _read_block(blob, rec, "audio", blob_path)
        video = _read_block(blob, rec, "video", blob_path)
        samples.append(
            Sample(
                sample_id=rec["id"],
                audio=audio,
                video=video,
                transcript=list(map(int, rec["transcript"])),
            )
        )
    return Corpus(spec=spec, samples=samples)


def _read_block(blob, rec, kind, blob_path):
    shape = tuple(rec[f"{kind}_shape"])
    offset = rec[f"{kind}_offset"]
    nbytes = int(np.prod(shape)) * 4
    if offset + nbytes > len(blob):
        raise CorpusError(
            f"record {rec['id']}: {kind} block [{offset}, {offset + nbytes}) exceeds blob {blob_path} ({len(blob)} bytes)"
        )
    return np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
