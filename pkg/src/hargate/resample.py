"""Length normalization of variable windows to the fixed network input.

Two routes: the integer-arithmetic linear interpolator that matches the
on-device implementation, and a Fourier-domain resampler used on the
training side.  Both accept a 1-D signal or a 2-D (time x channels) array
and operate on each channel independently.
"""

from __future__ import annotations

import numpy as np


class SignalTooShortError(ValueError):
    """Input or output length below 2 samples."""


def _as_2d(signal) -> tuple[np.ndarray, bool]:
    a = np.asarray(signal, dtype=np.float64)
    if a.ndim == 1:
        return a[:, None], True
    if a.ndim == 2:
        return a, False
    raise ValueError("signal must be 1-D or 2-D (time x channels)")


def linear_resample(signal, new_len: int) -> np.ndarray:
    """Resample to new_len samples by convex linear interpolation.

    For output index i with old length OS and new length NS:
    p = (i*OS) mod NS, index = floor(i*OS/NS), and
    y[i] = (p*a[index+1] + (NS-p)*a[index]) / NS, with a[index+1] clamped to
    the final sample.  The weights sum to NS, so constants are preserved
    exactly and the output never leaves [min(a), max(a)].
    """
    a, was_1d = _as_2d(signal)
    old_len = a.shape[0]
    if old_len < 2 or new_len < 2:
        raise SignalTooShortError("need at least 2 samples on both sides")
    i = np.arange(new_len, dtype=np.int64)
    prod = i * old_len
    p = prod % new_len
    idx = prod // new_len
    hi = np.minimum(idx + 1, old_len - 1)
    w = p.astype(np.float64)[:, None]
    out = (w * a[hi] + (new_len - w) * a[idx]) / new_len
    # p == 0 lands exactly on a source sample; skip the arithmetic so those
    # outputs (and the NS == OS identity) are bit-exact
    exact = p == 0
    out[exact] = a[idx[exact]]
    return out[:, 0] if was_1d else out


def fourier_resample(signal, new_len: int) -> np.ndarray:
    """Resample to new_len samples in the Fourier domain.

    The spectrum is symmetrically zero-padded (upsampling) or truncated
    (downsampling) with explicit Nyquist-bin handling so conjugate symmetry
    is preserved, then inverse-transformed and rescaled by new_len/old_len.
    The imaginary residue (construction keeps it at rounding level) is
    dropped.
    """
    a, was_1d = _as_2d(signal)
    old_len = a.shape[0]
    if old_len < 2 or new_len < 2:
        raise SignalTooShortError("need at least 2 samples on both sides")

    spec = np.fft.fft(a, axis=0)
    if new_len == old_len:
        out_spec = spec
    elif new_len > old_len:
        out_spec = np.zeros((new_len, a.shape[1]), dtype=np.complex128)
        if old_len % 2 == 0:
            half = old_len // 2
            out_spec[:half] = spec[:half]
            out_spec[new_len - (half - 1):] = spec[half + 1:]
            # original Nyquist bin splits evenly across +f and -f
            out_spec[half] = 0.5 * spec[half]
            out_spec[new_len - half] = 0.5 * spec[half]
        else:
            half = (old_len + 1) // 2
            out_spec[:half] = spec[:half]
            out_spec[new_len - (half - 1):] = spec[half:]
    else:
        out_spec = np.zeros((new_len, a.shape[1]), dtype=np.complex128)
        if new_len % 2 == 0:
            half = new_len // 2
            out_spec[:half] = spec[:half]
            out_spec[half + 1:] = spec[old_len - (half - 1):]
            # the two source bins aliasing onto the new Nyquist are conjugate
            out_spec[half] = spec[half] + spec[old_len - half]
        else:
            half = (new_len + 1) // 2
            out_spec[:half] = spec[:half]
            out_spec[half:] = spec[old_len - (half - 1):]

    out = np.fft.ifft(out_spec, axis=0) * (new_len / old_len)
    out = out.real
    return out[:, 0] if was_1d else out
