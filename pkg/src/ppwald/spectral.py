"""Fourier-domain identification of the ACER.

Transforms are discrete Fourier transforms scaled by ``dt`` so they
approximate the continuous transform ``(Psi c)(nu) = int c(x) exp(-2 pi i nu x) dx``,
with frequencies in cycles per second.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Curve, TimeGrid


class ResonanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    freqs: np.ndarray
    re: np.ndarray
    im: np.ndarray
    # sampling of the curve the spectrum came from
    t0: float = 0.0
    dt: float = 1.0
    n: int | None = None

    def __post_init__(self):
        if not (len(self.freqs) == len(self.re) == len(self.im)):
            raise ValueError("freqs, re and im must have equal lengths")

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.re) + 1j * np.asarray(self.im)

    @classmethod
    def from_complex(cls, freqs, values, t0=0.0, dt=1.0, n=None) -> "Spectrum":
        values = np.asarray(values, dtype=complex)
        return cls(np.asarray(freqs, dtype=float), values.real.copy(), values.imag.copy(), t0, dt, n)

    def is_hermitian(self, rtol: float = 1e-9) -> bool:
        v = self.values
        mirror = np.conj(np.roll(v[::-1], 1))
        scale = max(np.abs(v).max(), 1e-300)
        return bool(np.abs(v - mirror).max() <= rtol * scale)


def dft(c: Curve, pad_factor: int = 4) -> Spectrum:
    """Zero-padded DFT of ``c`` scaled by ``dt`` (standard FFT frequency order)."""
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")
    g = c.grid
    size = pad_factor * g.n
    freqs = np.fft.fftfreq(size, d=g.dt)
    values = g.dt * np.fft.fft(c.values, size)
    if g.t0 != 0:
        values = values * np.exp(-2j * np.pi * freqs * g.t0)
    return Spectrum.from_complex(freqs, values, g.t0, g.dt, g.n)


def idft(s: Spectrum) -> Curve:
    """Inverse of :func:`dft`, restricted to the original sampling window."""
    values = s.values
    if s.t0 != 0:
        # undo the time shift first: the shifted Nyquist bin need not be real
        values = values * np.exp(2j * np.pi * s.freqs * s.t0)
    if not Spectrum.from_complex(s.freqs, values).is_hermitian():
        raise ValueError("spectrum is not Hermitian-symmetric; inverse would be complex")
    x = np.fft.ifft(values).real / s.dt
    n = len(values) if s.n is None else s.n
    return Curve(TimeGrid(s.t0, s.dt, n), x[:n])


def _low_band(magnitude: np.ndarray, eps: float) -> np.ndarray:
    """Mask of the contiguous band of frequencies around 0 where
    ``magnitude >= eps * max(magnitude)``."""
    size = magnitude.size
    keep = magnitude >= eps * magnitude.max()
    keep[0] = True
    below = np.flatnonzero(~keep[: size // 2 + 1])
    cut = below[0] if below.size else size
    k = np.abs(np.fft.fftfreq(size) * size).round().astype(int)
    return k < cut


def deconvolve_spectral(f_hat: Curve, h_hat: Curve, eps: float = 0.02,
                        pad_factor: int = 4) -> Curve:
    """ACER(Delta; 0) from the ratio of transforms of the ITT curves.

    Cumulative curves are extended past ``T`` by their terminal value, so
    the ratio is formed from transforms of their increments. Frequencies
    are kept on the contiguous band around 0 where the (cumulative)
    treatment spectrum stays above ``eps`` times its peak; the ratio is
    set to zero elsewhere. The result is indexed by lag, on a grid starting
    at 0 with the step of the inputs.
    """
    f_hat._check(h_hat)
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = f_hat.grid
    if not np.any(f_hat.values):
        raise ValueError("instrument has no effect: (Psi f) is identically zero")
    size = pad_factor * g.n
    df = np.diff(f_hat.values, prepend=0.0)
    dh = np.diff(h_hat.values, prepend=0.0)
    F = np.fft.fft(df, size)
    H = np.fft.fft(dh, size)
    # magnitude of the transform of the held cumulative curve, |F| / |1 - e^{-i omega}|;
    # the zero frequency is always retained
    omega = 2 * np.pi * np.fft.fftfreq(size)
    cumulative = np.zeros(size)
    cumulative[1:] = np.abs(F[1:]) / np.abs(1 - np.exp(-1j * omega[1:]))
    band = _low_band(cumulative, eps)
    band[0] = True
    band &= np.abs(F) > 0
    G = np.zeros(size, dtype=complex)
    G[band] = H[band] / F[band]
    est = -np.fft.ifft(G).real[: g.n] / g.dt
    est[0] = 0.0  # no effect at lag 0
    return Curve(TimeGrid(0.0, g.dt, g.n), est)


def model1_closed_form(g: Curve, omega: Curve, pad_factor: int = 4) -> Curve:
    """ACER(Delta; 0) of a linear Hawkes outcome with treatment kernel ``g``
    and self-excitation kernel ``omega``: ``-Psi^{-1}[Psi g / (1 + Psi omega)]``.
    """
    g._check(omega)
    sg = dft(g, pad_factor)
    so = dft(omega, pad_factor)
    denom = 1.0 + so.values
    if np.abs(denom).min() < 1e-6:
        raise ResonanceError("resonant self-excitation: |1 + Psi omega| < 1e-6")
    ratio = Spectrum.from_complex(sg.freqs, -sg.values / denom, sg.t0, sg.dt, sg.n)
    return idft(ratio)
