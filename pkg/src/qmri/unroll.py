"""Unrolled reconstruction: NLCG initialization, then alternating
regularizer and data-consistency blocks.

Each block computes z = R(x) with the regularizer applied in scaled
space, then warm-starts an NLCG solve of the data term plus the
lam-weighted pull toward z. The per-channel scales are fixed once from
the initialized state; the configured lam is expressed in scaled units
and converted to an absolute coefficient via the mean squared magnitude
of the acquired data, so reconstruction quality is invariant to an
overall rescaling of the magnetization and measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import seed_from_zero_filled
from .datatypes import (
    AcquisitionProtocol,
    ChannelScaling,
    CoilMaps,
    KSpaceData,
    ParameterState,
    SamplingMask,
)
from .exceptions import ConfigError, RegularizerBlockError
from .nlcg import NlcgConfig, NlcgReport, ObjectiveConfig, nlcg_minimize
from .regularizers import RegularizerSpec, build_regularizer


@dataclass
class UnrollConfig:
    n_blocks: int = 3
    dc_iters: int = 20
    init_iters: int = 800
    lam: float = 0.05
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    scaling: ChannelScaling | str = "auto"
    r_max: float = 1.0
    grad_tol: float = 1e-9

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.dc_iters < 1:
            raise ConfigError(f"dc_iters must be >= 1, got {self.dc_iters}")
        if self.init_iters < 0:
            raise ConfigError(f"init_iters must be >= 0, got {self.init_iters}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if isinstance(self.scaling, str) and self.scaling != "auto":
            raise ConfigError(f"scaling must be 'auto' or a ChannelScaling, got {self.scaling!r}")


@dataclass
class UnrollReport:
    init: NlcgReport
    blocks: list
    scaling: ChannelScaling
    lam_effective: float


def auto_scaling(x: ParameterState) -> ChannelScaling:
    """Per-channel scales 1 / p95(|channel|), clamped for empty channels."""

    def scale_of(ch: np.ndarray) -> float:
        if not np.any(ch):
            return 1.0
        return 1.0 / max(float(np.percentile(np.abs(ch), 95.0)), 1e-12)

    return ChannelScaling(scale_of(x.mx), scale_of(x.my), scale_of(x.r))


def effective_lam(lam: float, y: KSpaceData, grid: tuple[int, int]) -> float:
    """Convert a scaled-units lam into the absolute objective coefficient."""
    if lam == 0:
        return 0.0
    ny, nx = grid
    energy = float(np.sum(y.samples.real**2 + y.samples.imag**2))
    return lam * energy / (3.0 * ny * nx)


def _solver_cfg(cfg: UnrollConfig, iters: int) -> NlcgConfig:
    return NlcgConfig(max_iters=iters, grad_tol=cfg.grad_tol)


def _initialize(
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    cfg: UnrollConfig,
) -> tuple[ParameterState, NlcgReport]:
    seed = seed_from_zero_filled(y, c, p, protocol, cfg.r_max)
    if cfg.init_iters == 0:
        return seed, NlcgReport()
    obj = ObjectiveConfig(lam=0.0, r_max=cfg.r_max, scaling=auto_scaling(seed))
    return nlcg_minimize(seed, y, protocol, c, p, obj, _solver_cfg(cfg, cfg.init_iters))


def initialize(
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    cfg: UnrollConfig,
) -> ParameterState:
    """Baseline seed refined by unregularized NLCG for init_iters iterations."""
    state, _ = _initialize(y, protocol, c, p, cfg)
    return state


def run_unrolled(
    y: KSpaceData,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    p: SamplingMask,
    cfg: UnrollConfig,
) -> tuple[ParameterState, UnrollReport]:
    """Full pipeline: initialize, then n_blocks regularize/DC rounds."""
    x, init_report = _initialize(y, protocol, c, p, cfg)
    scaling = auto_scaling(x) if cfg.scaling == "auto" else cfg.scaling
    lam_abs = effective_lam(cfg.lam, y, x.shape)

    meta = {
        "ny": int(x.shape[0]),
        "nx": int(x.shape[1]),
        "mapping_kind": protocol.mapping_kind,
        "scaling": [scaling.w_mx, scaling.w_my, scaling.w_r],
    }
    regularizer = build_regularizer(cfg.regularizer, meta)

    blocks: list[NlcgReport] = []
    for n in range(cfg.n_blocks):
        try:
            z = scaling.unscale(regularizer(scaling.scale(x)))
        except Exception as exc:
            raise RegularizerBlockError(n, str(exc)) from exc
        if z.shape != x.shape:
            raise RegularizerBlockError(n, f"regularizer returned shape {z.shape}, expected {x.shape}")
        if not all(np.all(np.isfinite(ch)) for ch in (z.mx, z.my, z.r)):
            raise RegularizerBlockError(n, "regularizer returned non-finite values")
        obj = ObjectiveConfig(lam=lam_abs, z=z, r_max=cfg.r_max, scaling=scaling)
        x, report = nlcg_minimize(x, y, protocol, c, p, obj, _solver_cfg(cfg, cfg.dc_iters))
        blocks.append(report)

    return x, UnrollReport(init_report, blocks, scaling, lam_abs)
