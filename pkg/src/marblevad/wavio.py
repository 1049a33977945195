"""RIFF/WAVE reading and writing for linear PCM and 32-bit float audio.

Integer samples are scaled symmetrically by 2^(bits-1), so 16-bit 16384
loads as 0.5. Multichannel files are downmixed to mono by averaging.
"""

from dataclasses import dataclass
import struct

import numpy as np

_PCM = 0x0001
_IEEE_FLOAT = 0x0003
_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base error for WAV parsing and writing."""


class MalformedWavError(WavError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """Well-formed WAV using a codec or bit depth outside this reader's set."""


@dataclass
class Waveform:
    """Mono audio: float amplitudes in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def n_samples(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate


def _chunks(buf, path):
    """Yield (chunk id, payload) from a RIFF body, honoring word alignment."""
    pos = 0
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        pos += 8
        if pos + size > len(buf):
            raise MalformedWavError(f"{path}: chunk {cid!r} overruns the file")
        yield cid, buf[pos:pos + size]
        pos += size + (size & 1)


def _decode(path, tag, bits, data):
    if tag == _PCM:
        if bits == 8:
            x = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
            return (x - 128.0) / 128.0
        if bits == 16:
            if len(data) % 2:
                raise MalformedWavError(f"{path}: 16-bit data size is odd")
            return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
        if bits == 24:
            if len(data) % 3:
                raise MalformedWavError(f"{path}: 24-bit data size not a multiple of 3")
            b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            raw = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            raw[raw >= 1 << 23] -= 1 << 24
            return raw.astype(np.float64) / float(1 << 23)
        raise UnsupportedWavError(f"{path}: {bits}-bit integer PCM is not supported")
    if tag == _IEEE_FLOAT:
        if bits == 32:
            if len(data) % 4:
                raise MalformedWavError(f"{path}: float data size not a multiple of 4")
            return np.frombuffer(data, dtype="<f4").astype(np.float64)
        raise UnsupportedWavError(f"{path}: {bits}-bit float is not supported")
    raise UnsupportedWavError(f"{path}: unsupported WAV format tag 0x{tag:04X}")


def _parse_fmt(path, fmt):
    if len(fmt) < 16:
        raise MalformedWavError(f"{path}: fmt chunk too short")
    tag, n_ch, sr, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _EXTENSIBLE:
        # actual format tag is the first word of the SubFormat GUID
        if len(fmt) < 26:
            raise MalformedWavError(f"{path}: extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if n_ch < 1 or sr < 1:
        raise MalformedWavError(f"{path}: invalid channel count or sample rate")
    return tag, n_ch, sr, block_align, bits


def load_wav(path):
    """Load a WAV file as a mono Waveform with amplitudes in [-1, 1].

    Accepts 8/16/24-bit integer PCM and 32-bit IEEE float, mono or
    multichannel (channels averaged). Raises FileNotFoundError for a missing
    path, MalformedWavError for container damage, and UnsupportedWavError
    for codecs outside that set.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    fmt = data = None
    for cid, payload in _chunks(raw[12:], path):
        if cid == b"fmt " and fmt is None:
            fmt = payload
        elif cid == b"data" and data is None:
            data = payload
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: missing data chunk")
    tag, n_ch, sr, _block_align, bits = _parse_fmt(path, fmt)
    samples = _decode(path, tag, bits, data)
    if samples.size == 0:
        raise MalformedWavError(f"{path}: empty data chunk")
    if samples.size % n_ch:
        raise MalformedWavError(f"{path}: sample count not a multiple of {n_ch} channels")
    if n_ch > 1:
        samples = samples.reshape(-1, n_ch).mean(axis=1)
    return Waveform(samples, sr)


def wav_duration(path):
    """Duration in seconds, read from container headers without decoding."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    fmt = data_size = None
    for cid, payload in _chunks(raw[12:], path):
        if cid == b"fmt " and fmt is None:
            fmt = payload
        elif cid == b"data" and data_size is None:
            data_size = len(payload)
    if fmt is None or data_size is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")
    _tag, n_ch, sr, block_align, bits = _parse_fmt(path, fmt)
    if block_align == 0:
        block_align = n_ch * max(bits, 8) // 8
    return (data_size // block_align) / sr


_INT_BITS = {"pcm8": 8, "pcm16": 16, "pcm24": 24}


def save_wav(path, waveform, fmt="pcm16"):
    """Write a mono WAV file; fmt is one of pcm8, pcm16, pcm24, float32."""
    x = np.asarray(waveform.samples, dtype=np.float64)
    sr = int(waveform.sample_rate)
    if fmt == "float32":
        payload = x.astype("<f4").tobytes()
        body = _fmt_chunk(_IEEE_FLOAT, sr, 32) + _fact_chunk(x.size)
    elif fmt in _INT_BITS:
        bits = _INT_BITS[fmt]
        full = float(1 << (bits - 1))
        q = np.clip(np.rint(x * full), -full, full - 1).astype(np.int64)
        if bits == 8:
            payload = (q + 128).astype(np.uint8).tobytes()
        elif bits == 16:
            payload = q.astype("<i2").tobytes()
        else:
            u = (q & 0xFFFFFF).astype(np.uint32)
            b = np.empty((x.size, 3), dtype=np.uint8)
            b[:, 0] = u & 0xFF
            b[:, 1] = (u >> 8) & 0xFF
            b[:, 2] = (u >> 16) & 0xFF
            payload = b.tobytes()
        body = _fmt_chunk(_PCM, sr, bits)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def _fmt_chunk(tag, sr, bits):
    block = bits // 8  # mono
    payload = struct.pack("<HHIIHH", tag, 1, sr, sr * block, block, bits)
    return b"fmt " + struct.pack("<I", len(payload)) + payload


def _fact_chunk(n_frames):
    return b"fact" + struct.pack("<II", 4, n_frames)
