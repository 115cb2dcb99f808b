"""Bridge from audio files to layerprobe embedding datasets.

Decodes WAV recordings, converts them to 16 kHz mono, runs a frozen
speech encoder, and writes the 13 hidden representations per recording
as an embedding-store dataset the probing harness consumes directly.
"""

from .audio import TARGET_SAMPLE_RATE, downmix, load_mono_16k, pcm_to_float, resample
from .encoder import EMBED_DIM, N_LAYERS, FrozenEncoder, init_encoder
from .extract import ExtractionJob, LabelRow, extract, make_manifest, read_labels_csv

__all__ = [
    "TARGET_SAMPLE_RATE",
    "EMBED_DIM",
    "N_LAYERS",
    "FrozenEncoder",
    "ExtractionJob",
    "LabelRow",
    "downmix",
    "extract",
    "init_encoder",
    "load_mono_16k",
    "make_manifest",
    "pcm_to_float",
    "read_labels_csv",
    "resample",
]
