"""Two-step baselines, the solver seed, and the NRMSE metric.

The two-step route reconstructs per-contrast images first (zero-filled
coil combination or CG-SENSE) and fits the mono-exponential model per
voxel afterwards: log-linear weighted least squares for T2, a rate grid
scan refined by golden-section search for T1 (the signal changes sign
through the inversion null, so log fitting is out).
"""

from __future__ import annotations

import numpy as np

from .datatypes import AcquisitionProtocol, CoilMaps, KSpaceData, ParameterState, SamplingMask
from .encoding import apply_coils, apply_mask, fft2_unitary, ifft2_unitary
from .exceptions import DomainError, NumericalError, ShapeMismatchError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def zero_filled_recon(y: KSpaceData, c: CoilMaps, p: SamplingMask) -> np.ndarray:
    """Coil-combined images sum_j conj(c_j) F^H y_j / max(sum_j |c_j|^2, eps)."""
    coil_images = ifft2_unitary(apply_mask(y.samples, p))
    combined = np.sum(np.conj(c.maps)[None] * coil_images, axis=1)
    sos = np.sum(np.abs(c.maps) ** 2, axis=0)
    return combined / np.maximum(sos, 1e-12)[None]


def cg_sense_recon(
    y: KSpaceData, c: CoilMaps, p: SamplingMask, iters: int = 30, tol: float = 1e-9
) -> np.ndarray:
    """Per-contrast linear CG solution of min_s ||P F (c * s) - y||^2.

    Conjugate gradient runs on the normal equations; iteration stops at
    `iters` or when the normal-equation residual drops below `tol`
    relative to its starting value.
    """
    n_contrast = y.n_contrast
    out = np.zeros((n_contrast, *c.grid), dtype=np.complex128)

    for k in range(n_contrast):
        mask_k = SamplingMask(p.pattern[k : k + 1])

        def fwd(s):
            return apply_mask(fft2_unitary(apply_coils(s[None], c)), mask_k)[0]

        def adj(kspc):
            return np.sum(np.conj(c.maps) * ifft2_unitary(apply_mask(kspc[None], mask_k))[0], axis=0)

        b = adj(y.samples[k])
        s = np.zeros_like(b)
        r = b.copy()
        d = r.copy()
        rs = float(np.vdot(r, r).real)
        rs0 = rs
        if rs0 == 0.0:
            continue
        for _ in range(iters):
            ad = adj(fwd(d))
            denom = float(np.vdot(d, ad).real)
            if denom <= 0:
                break
            alpha = rs / denom
            s = s + alpha * d
            r = r - alpha * ad
            rs_new = float(np.vdot(r, r).real)
            if not np.isfinite(rs_new):
                raise NumericalError(f"CG-SENSE diverged at contrast {k}")
            if np.sqrt(rs_new / rs0) <= tol:
                rs = rs_new
                break
            d = r + (rs_new / rs) * d
            rs = rs_new
        out[k] = s
    return out


def _fit_t2(s: np.ndarray, times: np.ndarray, keep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted log-linear fit; returns (complex magnetization, rate)."""
    mag = np.abs(s)
    w = mag**2
    logs = np.log(np.maximum(mag, 1e-300))
    t = times[:, None, None]
    sw = np.sum(w, axis=0)
    st = np.sum(w * t, axis=0)
    stt = np.sum(w * t * t, axis=0)
    sy = np.sum(w * logs, axis=0)
    sty = np.sum(w * t * logs, axis=0)
    denom = sw * stt - st**2
    ok = keep & (denom > 0)
    slope = np.zeros_like(sw)
    intercept = np.zeros_like(sw)
    np.divide(sw * sty - st * sy, denom, out=slope, where=ok)
    np.divide(sy - slope * st, sw, out=intercept, where=ok)
    amplitude = np.where(ok, np.exp(intercept), 0.0)
    phase = np.angle(s[0])
    m = amplitude * np.exp(1j * phase)
    return np.where(ok, m, 0.0), np.where(ok, -slope, 0.0)


def _t1_fit_gain(s: np.ndarray, times: np.ndarray, rates: np.ndarray):
    """Misfit reduction at each candidate rate after the closed-form
    magnetization solve: G = |sum_k phi_k s_k|^2 / sum_k phi_k^2, so the
    per-voxel residual is sum_k |s_k|^2 - G and the best rate maximizes G."""
    phi = 1.0 - 2.0 * np.exp(-times[:, None, None] * rates[None])
    num = np.abs(np.sum(phi * s, axis=0)) ** 2
    den = np.sum(phi * phi, axis=0)
    return num / np.maximum(den, 1e-300)


def _fit_t1(
    s: np.ndarray, times: np.ndarray, keep: np.ndarray, r_max: float
) -> tuple[np.ndarray, np.ndarray]:
    """Grid scan over rates refined by golden-section search per voxel."""
    n_grid = 64
    grid = np.linspace(0.0, r_max, n_grid)
    gain = np.stack([_t1_fit_gain(s, times, np.full(s.shape[1:], rv)) for rv in grid])
    best = np.argmax(gain, axis=0)

    a = grid[np.maximum(best - 1, 0)]
    b = grid[np.minimum(best + 1, n_grid - 1)]
    for _ in range(60):
        c1 = b - _GOLDEN * (b - a)
        c2 = a + _GOLDEN * (b - a)
        shrink_high = _t1_fit_gain(s, times, c1) > _t1_fit_gain(s, times, c2)
        b = np.where(shrink_high, c2, b)
        a = np.where(shrink_high, a, c1)
    r = 0.5 * (a + b)

    phi = 1.0 - 2.0 * np.exp(-times[:, None, None] * r[None])
    den = np.sum(phi * phi, axis=0)
    m = np.sum(phi * s, axis=0) / np.maximum(den, 1e-300)
    return np.where(keep, m, 0.0), np.where(keep, r, 0.0)


def pixelwise_fit(
    s: np.ndarray, protocol: AcquisitionProtocol, r_max: float = 1.0
) -> ParameterState:
    """Per-voxel model fit of multi-contrast images to (Mx, My, R).

    Voxels whose peak magnitude over contrasts falls below 1e-3 of the
    95th-percentile image magnitude are zeroed rather than fitted.
    """
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim != 3 or s.shape[0] != protocol.n_contrast:
        raise ShapeMismatchError(f"images shape {s.shape} incompatible with protocol")
    if protocol.n_contrast < 2:
        raise DomainError("pixelwise fit needs at least two contrasts")

    peak = np.max(np.abs(s), axis=0)
    tau = 1e-3 * np.percentile(np.abs(s), 95.0)
    keep = peak >= max(tau, 1e-300)

    if protocol.mapping_kind == "T2":
        m, r = _fit_t2(s, protocol.times, keep)
    else:
        m, r = _fit_t1(s, protocol.times, keep, r_max)
    return ParameterState(m.real, m.imag, r)


def seed_from_zero_filled(
    y: KSpaceData, c: CoilMaps, p: SamplingMask, protocol: AcquisitionProtocol, r_max: float = 1.0
) -> ParameterState:
    """Solver starting point: zero-filled recon, pixel fit, R clamped."""
    state = pixelwise_fit(zero_filled_recon(y, c, p), protocol, r_max)
    return ParameterState(state.mx, state.my, np.clip(state.r, 0.0, r_max))


def nrmse(est: np.ndarray, ref: np.ndarray, roi: np.ndarray | None = None) -> float:
    """||est - ref|| / ||ref|| over the ROI (default: voxels with |ref| > 0)."""
    est = np.asarray(est)
    ref = np.asarray(ref)
    if est.shape != ref.shape:
        raise ShapeMismatchError(f"est shape {est.shape} != ref shape {ref.shape}")
    if roi is None:
        roi = np.abs(ref) > 0
    else:
        roi = np.asarray(roi, dtype=bool)
        if roi.shape != ref.shape:
            raise ShapeMismatchError(f"roi shape {roi.shape} != ref shape {ref.shape}")
    ref_norm = np.linalg.norm(ref[roi])
    if ref_norm == 0:
        raise DomainError("reference is identically zero on the ROI")
    return float(np.linalg.norm(est[roi] - ref[roi]) / ref_norm)
