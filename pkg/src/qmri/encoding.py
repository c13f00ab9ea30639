"""Linear encoding chain A = P F C applied to signal images, and A^H.

The 2-D Fourier transform is centered and unitary: DC sits at index
(ny//2, nx//2) and Parseval holds exactly, so F^H = F^{-1} and the
adjoint of the full chain is C^H F^{-1} P.
"""

from __future__ import annotations

import numpy as np

from .datatypes import (
    AcquisitionProtocol,
    CoilMaps,
    KSpaceData,
    ParameterState,
    SamplingMask,
)
from .exceptions import ShapeMismatchError
from .signal_model import model_forward


def apply_coils(s: np.ndarray, c: CoilMaps) -> np.ndarray:
    """Per-coil images c_j * s_k, shape (n_contrast, n_coil, ny, nx)."""
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim != 3 or s.shape[1:] != c.grid:
        raise ShapeMismatchError(f"signal shape {s.shape} incompatible with coil grid {c.grid}")
    return s[:, None, :, :] * c.maps[None, :, :, :]


def fft2_unitary(images: np.ndarray) -> np.ndarray:
    """Centered unitary 2-D DFT over the last two axes."""
    shifted = np.fft.ifftshift(np.asarray(images, dtype=np.complex128), axes=(-2, -1))
    k = np.fft.fft2(shifted, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2_unitary(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_unitary`."""
    shifted = np.fft.ifftshift(np.asarray(k, dtype=np.complex128), axes=(-2, -1))
    images = np.fft.ifft2(shifted, norm="ortho")
    return np.fft.fftshift(images, axes=(-2, -1))


def apply_mask(k: np.ndarray, p: SamplingMask) -> np.ndarray:
    """Zero unsampled entries; the mask broadcasts across the coil axis."""
    k = np.asarray(k)
    if k.ndim != 4 or k.shape[0] != p.n_contrast or k.shape[2:] != p.grid:
        raise ShapeMismatchError(f"k-space shape {k.shape} incompatible with mask {p.pattern.shape}")
    return np.where(p.pattern[:, None, :, :], k, 0)


def encode(
    x: ParameterState,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
) -> KSpaceData:
    """Full forward operator P F C M applied to a parameter state."""
    if x.shape != c.grid:
        raise ShapeMismatchError(f"state grid {x.shape} != coil grid {c.grid}")
    s = model_forward(x, protocol)
    k = apply_mask(fft2_unitary(apply_coils(s, c)), p)
    return KSpaceData(k, protocol)


def encode_linear(s: np.ndarray, c: CoilMaps, p: SamplingMask) -> np.ndarray:
    """Linear part A = P F C applied to signal images."""
    return apply_mask(fft2_unitary(apply_coils(s, c)), p)


def encode_adjoint_linear(k, c: CoilMaps, p: SamplingMask) -> np.ndarray:
    """Adjoint A^H = C^H F^{-1} P, returning signal-image shaped output."""
    samples = k.samples if isinstance(k, KSpaceData) else np.asarray(k)
    coil_images = ifft2_unitary(apply_mask(samples, p))
    return np.sum(np.conj(c.maps)[None, :, :, :] * coil_images, axis=1)
