"""Toy vocabulary: reserved ids, transcript symbols, and prompt tokens.

Output ids 0..num_symbols+2 are what the decoder can emit (PAD/BOS/EOS plus
the symbols). Prompt words live in a separate id range above the output
vocabulary: they are embedded but never predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
NUM_SPECIALS = 3

# Word-level prompt tokenization of "Transcribe {task_prompt} to text."
# The audio-visual prompt is exactly 7 tokens, matching the cost model's
# default prompt length; audio-only / video-only prompts are 5 tokens.
PROMPT_WORDS = ("transcribe", "speech", "and", "video", "to", "text", ".")

TASK_PROMPTS = {
    "asr": ("transcribe", "speech", "to", "text", "."),
    "vsr": ("transcribe", "video", "to", "text", "."),
    "avsr": ("transcribe", "speech", "and", "video", "to", "text", "."),
}


@dataclass(frozen=True)
class Vocabulary:
    """Id layout for a corpus with `num_symbols` transcript symbols."""

    num_symbols: int

    @property
    def output_size(self):
        """Ids the decoder can emit: specials + symbols."""
        return NUM_SPECIALS + self.num_symbols

    @property
    def embedding_size(self):
        """All embeddable ids: output ids plus prompt words."""
        return self.output_size + len(PROMPT_WORDS)

    def symbol_id(self, symbol_index):
        if not 0 <= symbol_index < self.num_symbols:
            raise ValueError(f"symbol index {symbol_index} outside [0, {self.num_symbols})")
        return NUM_SPECIALS + symbol_index

    def prompt_ids(self, task):
        """Fixed prompt token ids for a task in {asr, vsr, avsr}."""
        if task not in TASK_PROMPTS:
            raise ValueError(f"unknown task {task!r}, expected one of {sorted(TASK_PROMPTS)}")
        base = self.output_size
        return [base + PROMPT_WORDS.index(w) for w in TASK_PROMPTS[task]]

    def describe(self, token_id):
        """Human-readable name for any embeddable id."""
        if token_id == PAD_ID:
            return "<pad>"
        if token_id == BOS_ID:
            return "<bos>"
        if token_id == EOS_ID:
            return "<eos>"
        if token_id < self.output_size:
            return f"s{token_id - NUM_SPECIALS}"
        if token_id < self.embedding_size:
            return PROMPT_WORDS[token_id - self.output_size]
        raise ValueError(f"token id {token_id} outside embedding range")
