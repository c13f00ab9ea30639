"""Mono-exponential signal models and the adjoint of their linearization.

For a voxel with complex magnetization m = Mx + i My and rate R:

* T2 mapping:  s_k = m * exp(-TE_k * R)
* T1 mapping:  s_k = m * (1 - 2 * exp(-TI_k * R))   (perfect inversion)

Both are linear in m, so ds/dMy = i * ds/dMx in either model.
"""

from __future__ import annotations

import numpy as np

from .datatypes import AcquisitionProtocol, ParameterState
from .exceptions import DomainError, ShapeMismatchError


def _check_state(x: ParameterState) -> None:
    for name, ch in (("mx", x.mx), ("my", x.my), ("r", x.r)):
        if not np.all(np.isfinite(ch)):
            raise DomainError(f"{name} contains non-finite values")


def _contrast_weights(x: ParameterState, protocol: AcquisitionProtocol) -> np.ndarray:
    """Real per-(contrast, voxel) factor multiplying m in the model."""
    times = protocol.times[:, None, None]
    decay = np.exp(-times * x.r[None])
    if protocol.mapping_kind == "T2":
        return decay
    return 1.0 - 2.0 * decay


def model_forward(x: ParameterState, protocol: AcquisitionProtocol) -> np.ndarray:
    """Predicted complex signal images, shape (n_contrast, ny, nx)."""
    _check_state(x)
    return _contrast_weights(x, protocol) * x.magnetization()[None]


def model_jacobian_apply(
    x: ParameterState, protocol: AcquisitionProtocol, dx: ParameterState
) -> np.ndarray:
    """Directional derivative J(x) dx of the forward model, per contrast."""
    _check_state(x)
    if dx.shape != x.shape:
        raise ShapeMismatchError(f"dx shape {dx.shape} != state shape {x.shape}")
    times = protocol.times[:, None, None]
    decay = np.exp(-times * x.r[None])
    dm = dx.mx + 1j * dx.my
    if protocol.mapping_kind == "T2":
        return decay * dm[None] - x.magnetization()[None] * times * decay * dx.r[None]
    phi = 1.0 - 2.0 * decay
    return phi * dm[None] + x.magnetization()[None] * 2.0 * times * decay * dx.r[None]


def model_jacobian_adjoint(
    x: ParameterState, protocol: AcquisitionProtocol, residual_images: np.ndarray
) -> ParameterState:
    """Per-voxel gradient triple 2*Re(J^H r) for a residual image stack.

    When `residual_images` is the back-projected residual A^H (A M(x) - y),
    the result is the exact gradient of ||A M(x) - y||^2 with respect to
    (Mx, My, R).
    """
    _check_state(x)
    residual_images = np.asarray(residual_images, dtype=np.complex128)
    expected = (protocol.n_contrast, *x.shape)
    if residual_images.shape != expected:
        raise ShapeMismatchError(
            f"residual shape {residual_images.shape} != expected {expected}"
        )
    times = protocol.times[:, None, None]
    decay = np.exp(-times * x.r[None])
    m_conj = np.conj(x.magnetization())

    if protocol.mapping_kind == "T2":
        weighted = np.sum(decay * residual_images, axis=0)
        g_mx = 2.0 * weighted.real
        g_my = 2.0 * weighted.imag
        g_r = -2.0 * np.real(m_conj * np.sum(times * decay * residual_images, axis=0))
    else:
        phi = 1.0 - 2.0 * decay
        weighted = np.sum(phi * residual_images, axis=0)
        g_mx = 2.0 * weighted.real
        g_my = 2.0 * weighted.imag
        g_r = 4.0 * np.real(m_conj * np.sum(times * decay * residual_images, axis=0))

    return ParameterState(g_mx, g_my, g_r)
