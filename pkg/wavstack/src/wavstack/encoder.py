"""Frozen speech encoder producing the 13-representation layer stack.

The encoder is a 12-block transformer over a convolutional waveform
frontend (~50 frames per second at 16 kHz, 768-dim states). Extraction
captures the block input (layer 0) plus each block's output (layers 1-12)
in inference mode, so results are deterministic for a fixed set of weights.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from transformers import Wav2Vec2Config, Wav2Vec2Model
from transformers.utils import logging as hf_logging

N_LAYERS = 13
EMBED_DIM = 768


class FrozenEncoder:
    """Inference-only wrapper turning a 16 kHz waveform into [13, n_frames, 768]."""

    def __init__(self, model: Wav2Vec2Model):
        cfg = model.config
        if cfg.hidden_size != EMBED_DIM or cfg.num_hidden_layers != N_LAYERS - 1:
            raise ValueError(
                f"encoder must expose {N_LAYERS - 1} transformer layers of width "
                f"{EMBED_DIM}, got {cfg.num_hidden_layers} x {cfg.hidden_size}"
            )
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model

    @classmethod
    def load(cls, encoder_id: str | Path) -> "FrozenEncoder":
        hf_logging.disable_progress_bar()
        return cls(Wav2Vec2Model.from_pretrained(str(encoder_id)))

    def extract(self, waveform: np.ndarray) -> np.ndarray:
        """Layer stack for one mono float waveform at 16 kHz."""
        waveform = np.asarray(waveform, dtype=np.float32)
        if waveform.ndim != 1 or waveform.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        with torch.no_grad():
            out = self.model(
                torch.from_numpy(waveform)[None, :], output_hidden_states=True
            )
        states = out.hidden_states
        if len(states) != N_LAYERS:
            raise ValueError(f"encoder returned {len(states)} states, expected {N_LAYERS}")
        stack = np.stack([s[0].numpy() for s in states])
        if stack.shape[1] < 1:
            raise ValueError("waveform too short for one encoder frame")
        return stack.astype(np.float32, copy=False)


def init_encoder(out_dir: str | Path, seed: int = 4200) -> Path:
    """Materialize a randomly initialized base-architecture encoder locally.

    The extractor's contracts (13 states, 768 dims, ~50 fps, determinism)
    are weight-independent, so a seeded random encoder serves offline use
    and tests; point --encoder at a real checkpoint directory otherwise.
    """
    hf_logging.disable_progress_bar()
    out_dir = Path(out_dir)
    torch.manual_seed(seed)
    model = Wav2Vec2Model(Wav2Vec2Config())
    model.save_pretrained(out_dir)
    return out_dir
