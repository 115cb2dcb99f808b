import numpy as np
import pytest
from scipy.io import wavfile

from wavstack.encoder import init_encoder

CSV_HEADER = (
    "record_id,speaker_id,task,split,"
    "strained,irregular_articulatory_breakdowns,rapid_rate,slow_rate,distortions"
)


def write_wav(path, rate, samples):
    wavfile.write(path, rate, samples)


def sine(duration_s, freq, rate, amplitude=0.3):
    t = np.arange(int(duration_s * rate)) / rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def to_int16(x):
    return np.clip(x * 32767.0, -32768, 32767).astype(np.int16)


@pytest.fixture(scope="session")
def encoder_dir(tmp_path_factory):
    return str(init_encoder(tmp_path_factory.mktemp("encoder"), seed=77))


@pytest.fixture(scope="session")
def clip_corpus(tmp_path_factory):
    """Five labeled clips: four mono 16 kHz, one stereo 44.1 kHz."""
    root = tmp_path_factory.mktemp("corpus")
    audio = root / "audio"
    audio.mkdir()
    rng = np.random.default_rng(13)

    durations = {}

    write_wav(audio / "r0.wav", 16000, to_int16(sine(0.5, 440, 16000)))
    durations["r0"] = 0.5
    # silence is a legitimate recording and pins the frame-rate arithmetic
    write_wav(audio / "r1.wav", 16000, np.zeros(16000, dtype=np.int16))
    durations["r1"] = 1.0
    write_wav(
        audio / "r2.wav", 16000,
        to_int16(0.2 * rng.standard_normal(int(0.7 * 16000)).clip(-3, 3) / 3),
    )
    durations["r2"] = 0.7
    write_wav(
        audio / "r3.wav", 16000,
        to_int16(sine(0.6, 220, 16000) + sine(0.6, 950, 16000, amplitude=0.15)),
    )
    durations["r3"] = 0.6
    stereo = np.stack(
        [
            sine(0.8, 330, 44100),
            0.1 * rng.standard_normal(int(0.8 * 44100)).clip(-3, 3) / 3,
        ],
        axis=1,
    )
    write_wav(audio / "r4.wav", 44100, to_int16(stereo))
    durations["r4"] = 0.8

    labels = root / "labels.csv"
    labels.write_text(
        CSV_HEADER + "\n"
        "r0,spk0,AMR,train,1,0,0,0,0\n"
        "r1,spk1,AMR,train,0,1,0,1,0\n"
        "r2,spk2,AMR,val,0,0,1,0,1\n"
        "r3,spk3,AMR,test,1,1,0,0,0\n"
        "r4,spk4,AMR,test,0,0,0,1,1\n"
    )
    return {"root": root, "audio": audio, "labels": labels, "durations": durations}
