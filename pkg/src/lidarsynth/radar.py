"""FMCW radar cube processing: range FFT, then range-angle / range-velocity maps.

A measurement cube is (receive antennas x samples per chirp x chirps per
frame), complex.  The range transform runs an FFT over the samples axis;
the two maps add a second FFT over the antennas axis (angle) or the chirps
axis (velocity), collapse the unused third axis by summing magnitudes,
center-shift the new axis, compress with log1p, and min-max normalize.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "RadarCube",
    "RadarMap",
    "fft_1d",
    "ifft_1d",
    "range_transform",
    "range_angle_map",
    "range_velocity_map",
]


@dataclass
class RadarCube:
    """Complex I/Q cube with dims (n_rx, n_samples, n_chirps)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex64)
        if self.data.ndim != 3:
            raise ValueError(f"cube must be 3-D (rx, samples, chirps), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError("all cube dims must be at least 1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")

    @property
    def n_rx(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def n_chirps(self) -> int:
        return self.data.shape[2]

    def to_interleaved(self) -> np.ndarray:
        """Real view (n_rx, n_samples, n_chirps, 2) with (re, im) last."""
        out = np.empty(self.data.shape + (2,), dtype=np.float32)
        out[..., 0] = self.data.real
        out[..., 1] = self.data.imag
        return out

    @classmethod
    def from_interleaved(cls, arr: np.ndarray) -> "RadarCube":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[-1] != 2:
            raise ValueError(f"interleaved cube must be (rx, samples, chirps, 2), got {arr.shape}")
        return cls(arr[..., 0] + 1j * arr[..., 1])


@dataclass
class RadarMap:
    """A normalized 2-D magnitude map, values in [0, 1]."""

    kind: Literal["range_angle", "range_velocity"]
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in ("range_angle", "range_velocity"):
            raise ValueError(f"unknown map kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("map must be 2-D")
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("map values must lie in [0, 1]")


def fft_1d(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT: X[k] = sum_n x[n] exp(-2 pi i k n / N)."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("fft_1d expects a non-empty 1-D vector")
    return np.fft.fft(x).astype(np.complex128)


def ifft_1d(x: np.ndarray) -> np.ndarray:
    """Inverse of fft_1d (includes the 1/N factor)."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("ifft_1d expects a non-empty 1-D vector")
    return np.fft.ifft(x).astype(np.complex128)


def range_transform(cube: RadarCube) -> RadarCube:
    """FFT every (rx, chirp) fiber along the samples axis; shape unchanged."""
    return RadarCube(np.fft.fft(cube.data.astype(np.complex128), axis=1).astype(np.complex64))


def _normalize(mag: np.ndarray) -> np.ndarray:
    compressed = np.log1p(mag)
    top = compressed.max()
    if top <= 0.0:
        return np.zeros_like(compressed, dtype=np.float32)
    lo = compressed.min()
    span = top - lo
    if span == 0.0:
        return np.ones_like(compressed, dtype=np.float32)
    return ((compressed - lo) / span).astype(np.float32)


def range_angle_map(range_cube: RadarCube) -> RadarMap:
    """FFT over rx, sum |.| over chirps, center-shift angle axis, log1p, min-max.

    Input must already be range-transformed.  Output shape (n_rx, n_samples).
    """
    spec = np.fft.fft(range_cube.data.astype(np.complex128), axis=0)
    mag = np.abs(spec).sum(axis=2)  # (n_rx, n_samples)
    mag = np.fft.fftshift(mag, axes=0)
    return RadarMap("range_angle", _normalize(mag))


def range_velocity_map(range_cube: RadarCube) -> RadarMap:
    """FFT over chirps, sum |.| over rx, center-shift velocity axis, log1p, min-max.

    Input must already be range-transformed.  Output shape (n_chirps, n_samples).
    """
    spec = np.fft.fft(range_cube.data.astype(np.complex128), axis=2)
    mag = np.abs(spec).sum(axis=0)  # (n_samples, n_chirps)
    mag = np.fft.fftshift(mag.T, axes=0)  # (n_chirps, n_samples)
    return RadarMap("range_velocity", _normalize(mag))
