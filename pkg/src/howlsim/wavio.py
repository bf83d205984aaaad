"""Mono WAV helpers. All toolkit audio is 16 kHz mono, written as 32-bit float."""

import struct

import numpy as np
from scipy.io import wavfile

from .errors import ConfigError

SAMPLE_RATE = 16000

_PCM_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def read_wav(path, expect_sr=SAMPLE_RATE):
    """Read a mono WAV as float64 in [-1, 1]. PCM16/PCM32 input is rescaled."""
    sr, data = wavfile.read(path)
    if expect_sr is not None and sr != expect_sr:
        raise ConfigError(f"{path}: sample rate {sr}, expected {expect_sr}")
    if data.ndim != 1:
        raise ConfigError(f"{path}: expected mono, got {data.ndim} channels")
    if data.dtype in _PCM_SCALE:
        return data.astype(np.float64) / _PCM_SCALE[data.dtype]
    return data.astype(np.float64)


def write_wav(path, x, sr=SAMPLE_RATE):
    """Write float samples as a 32-bit float mono WAV."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("write_wav expects a 1-D signal")
    wavfile.write(path, sr, x.astype(np.float32))


def wav_info(path):
    """(sample_rate, channels, n_samples) from the RIFF header, data unread."""
    with open(path, "rb") as f:
        riff = f.read(12)
        if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise ConfigError(f"{path}: not a RIFF/WAVE file")
        sample_rate = channels = block_align = None
        data_bytes = None
        while True:
            head = f.read(8)
            if len(head) < 8:
                break
            tag, size = head[:4], struct.unpack("<I", head[4:])[0]
            if tag == b"fmt ":
                fmt = f.read(size)
                channels, sample_rate = struct.unpack("<HI", fmt[2:8])
                block_align = struct.unpack("<H", fmt[12:14])[0]
            elif tag == b"data":
                data_bytes = size
                f.seek(size + (size & 1), 1)
            else:
                f.seek(size + (size & 1), 1)
        if sample_rate is None or data_bytes is None or not block_align:
            raise ConfigError(f"{path}: missing fmt or data chunk")
        return sample_rate, channels, data_bytes // block_align
