"""WAV ingestion and framing.

Only RIFF/WAVE containers with 16-bit PCM are accepted; unknown chunks are
skipped. Samples are normalized by 1/32768 (full-scale PCM16 maps onto
[-1, 1)) and cut into non-overlapping frames of 160 samples (0.01 s at
16 kHz); a trailing remainder shorter than one frame is discarded rather
than zero-padded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FRAME_DIM = 160
SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
FRAMES_MAGIC = b"NOVELDET-FRAMES\n"


class WavFormatError(ValueError):
    """The file is valid RIFF but an unsupported WAV flavor."""


class WavParseError(ValueError):
    """The byte stream is not a well-formed RIFF/WAVE file."""


@dataclass
class WavFile:
    sample_rate: int
    samples: np.ndarray  # int16, shape [channels, n_samples]

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16)
        if self.samples.ndim == 1:
            self.samples = self.samples[None, :]
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]


@dataclass
class FrameSequence:
    frames: np.ndarray  # float64, [T, frame_dim], values in [-1, 1]
    sample_rate: int
    frame_dim: int = FRAME_DIM

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)

    @property
    def n_frames(self):
        return self.frames.shape[0]


def read_wav(data: bytes) -> WavFile:
    """Parse a RIFF/WAVE byte stream containing 16-bit PCM."""
    if len(data) < 12:
        raise WavParseError("file shorter than RIFF header (offset 0)")
    if data[0:4] != b"RIFF":
        raise WavParseError("missing RIFF tag at offset 0")
    if data[8:12] != b"WAVE":
        raise WavParseError("missing WAVE tag at offset 8")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            raise WavParseError(
                f"chunk {cid!r} at offset {pos} claims {size} bytes but file ends")
        if cid == b"fmt ":
            if size < 16:
                raise WavParseError(f"fmt chunk too short at offset {pos}")
            code, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH",
                                                                  data, body)
            if code != 1:
                raise WavFormatError(f"unsupported format code {code} "
                                     "(only PCM=1)")
            if bits != 16:
                raise WavFormatError(f"unsupported bit depth {bits} (only 16)")
            if channels < 1:
                raise WavParseError(f"fmt chunk declares {channels} channels")
            fmt = (channels, rate)
        elif cid == b"data":
            if fmt is None:
                raise WavParseError(f"data chunk at offset {pos} before fmt")
            channels, _ = fmt
            if size % (2 * channels) != 0:
                raise WavParseError(
                    f"data chunk size {size} not a whole number of frames "
                    f"(offset {pos})")
            pcm = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
        # unknown chunks (LIST, fact, ...) are skipped
        pos = body + size + (size % 2)  # chunks are word-aligned
    if fmt is None:
        raise WavParseError("no fmt chunk found")
    if pcm is None:
        raise WavParseError("no data chunk found")
    channels, rate = fmt
    deinterleaved = pcm.reshape(-1, channels).T.copy()
    return WavFile(rate, deinterleaved)


def write_wav(wav: WavFile) -> bytes:
    """Serialize to canonical form: fmt then data, no extra chunks."""
    interleaved = np.ascontiguousarray(wav.samples.T.astype("<i2")).tobytes()
    block_align = 2 * wav.channels
    fmt = struct.pack("<HHIIHH", 1, wav.channels, wav.sample_rate,
                      wav.sample_rate * block_align, block_align, 16)
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(interleaved)) + interleaved)
    if len(interleaved) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def mixdown(wav: WavFile) -> WavFile:
    """Average channels to mono; rounding halves away from zero."""
    if wav.channels == 1:
        return wav
    mean = wav.samples.astype(np.float64).mean(axis=0)
    rounded = np.sign(mean) * np.floor(np.abs(mean) + 0.5)
    return WavFile(wav.sample_rate, rounded.astype(np.int16)[None, :])


def frame_signal(wav: WavFile, frame_dim: int = FRAME_DIM) -> FrameSequence:
    """Cut a mono signal into consecutive frames scaled to [-1, 1)."""
    if wav.channels != 1:
        raise ValueError(f"frame_signal requires mono input, got "
                         f"{wav.channels} channels")
    if frame_dim < 1:
        raise ValueError("frame_dim must be >= 1")
    n = wav.n_samples
    n_frames = n // frame_dim
    if n_frames == 0:
        raise ValueError(f"signal of {n} samples is shorter than one frame "
                         f"({frame_dim})")
    usable = wav.samples[0, :n_frames * frame_dim].astype(np.float64)
    frames = usable.reshape(n_frames, frame_dim) / PCM16_SCALE
    return FrameSequence(frames, wav.sample_rate, frame_dim)


def add_noise_snr(x: FrameSequence, snr_db: float, rng) -> FrameSequence:
    """Additive white Gaussian noise at the requested SNR.

    Signal power is the mean square over all frame values; the drawn noise is
    rescaled to hit the target noise power exactly, then the sum is clipped
    to [-1, 1]. snr_db=inf is the no-noise sentinel.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return x
    p_signal = float(np.mean(x.frames ** 2))
    if p_signal <= 0:
        raise ValueError("cannot set an SNR on a silent signal")
    p_noise = p_signal / (10.0 ** (snr_db / 10.0))
    noise = rng.normal(x.frames.shape)
    noise *= np.sqrt(p_noise / np.mean(noise ** 2))
    noisy = np.clip(x.frames + noise, -1.0, 1.0)
    return FrameSequence(noisy, x.sample_rate, x.frame_dim)


def save_frames(path, x: FrameSequence):
    """Cache a frame sequence: magic, frame_dim, T, sample_rate, f64 LE data."""
    with open(path, "wb") as f:
        f.write(FRAMES_MAGIC)
        f.write(struct.pack("<III", x.frame_dim, x.n_frames, x.sample_rate))
        f.write(np.ascontiguousarray(x.frames, dtype="<f8").tobytes())


def load_frames(path) -> FrameSequence:
    with open(path, "rb") as f:
        if f.read(len(FRAMES_MAGIC)) != FRAMES_MAGIC:
            raise ValueError("not a frame cache file")
        frame_dim, n_frames, rate = struct.unpack("<III", f.read(12))
        raw = f.read(frame_dim * n_frames * 8)
        frames = np.frombuffer(raw, dtype="<f8").reshape(n_frames, frame_dim)
    return FrameSequence(frames.copy(), rate, frame_dim)
