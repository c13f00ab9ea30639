"""Ground-truth phantoms, coil maps, masks, noisy k-space, and splits.

Desk-scale stand-in for scanned multi-echo / inversion-recovery data:
ellipse phantoms rasterized on a normalized [-1, 1]^2 grid, smooth
Gaussian-lobe coil sensitivities, phase-encode (ky) undersampling with
an optional fully sampled ACS block, and the train/loss mask splitting
used for scan-specific self-supervised training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datatypes import AcquisitionProtocol, CoilMaps, KSpaceData, ParameterState, SamplingMask
from .encoding import encode
from .exceptions import ConfigError, DomainError

MASK_SCHEMES = ("equispaced", "uniform_random")


@dataclass
class Ellipse:
    """One phantom structure in grid-normalized coordinates.

    `center` is (cy, cx) and `axes` is (ay, ax), both in [-1, 1] with
    axes > 0; rotation is in degrees, counterclockwise. `magnetization`
    is the complex Mx + i My value and `t_value` the relaxation time in
    ms inside the ellipse.
    """

    center: tuple[float, float]
    axes: tuple[float, float]
    rotation: float
    magnetization: complex
    t_value: float

    def __post_init__(self):
        if self.t_value <= 0:
            raise DomainError(f"t_value must be > 0, got {self.t_value}")
        for v in (*self.center, *self.axes):
            if not -1.0 <= v <= 1.0:
                raise DomainError(f"ellipse parameter {v} outside [-1, 1]")
        if min(self.axes) <= 0:
            raise DomainError(f"ellipse axes must be positive, got {self.axes}")


@dataclass
class PhantomSpec:
    grid: tuple[int, int]
    kind: str
    ellipses: list = field(default_factory=list)
    background_t: float | None = None

    def __post_init__(self):
        if self.kind not in ("T1", "T2"):
            raise DomainError(f"kind must be T1 or T2, got {self.kind!r}")
        if self.background_t is not None and self.background_t <= 0:
            raise DomainError("background_t must be > 0 when given")


@dataclass
class MaskSpec:
    accel: int
    acs_width: int = 0
    scheme: str = "equispaced"
    seed: int = 0
    per_contrast: bool = False

    def __post_init__(self):
        if self.accel < 1:
            raise ConfigError(f"accel must be >= 1, got {self.accel}")
        if self.acs_width < 0:
            raise ConfigError(f"acs_width must be >= 0, got {self.acs_width}")
        if self.scheme not in MASK_SCHEMES:
            raise ConfigError(f"scheme must be one of {MASK_SCHEMES}, got {self.scheme!r}")
        if self.per_contrast and self.scheme != "uniform_random":
            raise ConfigError("per_contrast redraws require scheme=uniform_random")


def _grid_coords(grid: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    ny, nx = grid
    ys = (2.0 * (np.arange(ny) + 0.5) / ny) - 1.0
    xs = (2.0 * (np.arange(nx) + 0.5) / nx) - 1.0
    return np.meshgrid(ys, xs, indexing="ij")


def make_phantom(spec: PhantomSpec) -> tuple[ParameterState, np.ndarray]:
    """Rasterize the ellipse list; later ellipses overwrite earlier ones.

    Returns the ground-truth state (R = 1/T inside structures, zero in
    uncovered background) and the per-ellipse boolean coverage masks,
    shape (n_ellipse, ny, nx).
    """
    ny, nx = spec.grid
    yy, xx = _grid_coords(spec.grid)
    m = np.zeros((ny, nx), dtype=np.complex128)
    r = np.full((ny, nx), 0.0 if spec.background_t is None else 1.0 / spec.background_t)
    tissue = np.zeros((len(spec.ellipses), ny, nx), dtype=bool)

    for i, e in enumerate(spec.ellipses):
        cy, cx = e.center
        theta = math.radians(e.rotation)
        dy, dx = yy - cy, xx - cx
        u = math.cos(theta) * dx + math.sin(theta) * dy
        v = -math.sin(theta) * dx + math.cos(theta) * dy
        inside = (u / e.axes[1]) ** 2 + (v / e.axes[0]) ** 2 <= 1.0
        tissue[i] = inside
        m[inside] = e.magnetization
        r[inside] = 1.0 / e.t_value

    state = ParameterState(m.real, m.imag, r)
    return state, tissue


def make_coil_maps(n_coil: int, grid: tuple[int, int]) -> CoilMaps:
    """Smooth Gaussian-lobe sensitivities with linear phase.

    Lobe centers sit at equally spaced angles on a ring just outside the
    FOV; the maps are normalized so sum_j |c_j|^2 = 1 at every voxel.
    """
    if n_coil < 1:
        raise ConfigError(f"n_coil must be >= 1, got {n_coil}")
    yy, xx = _grid_coords(grid)
    maps = np.empty((n_coil, *grid), dtype=np.complex128)
    ring_radius = 1.25
    lobe_sigma = 0.9
    for j in range(n_coil):
        angle = 2.0 * math.pi * j / n_coil
        cy, cx = ring_radius * math.sin(angle), ring_radius * math.cos(angle)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * lobe_sigma**2))
        phase = 0.5 * math.pi * (math.cos(angle) * xx + math.sin(angle) * yy) + angle / 3.0
        maps[j] = mag * np.exp(1j * phase)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= sos[None]
    return CoilMaps(maps)


def _sampled_lines(spec: MaskSpec, ny: int, rng: np.random.Generator) -> np.ndarray:
    if spec.scheme == "equispaced":
        keep = np.zeros(ny, dtype=bool)
        keep[:: spec.accel] = True
    else:
        n_keep = math.ceil(ny / spec.accel)
        keep = np.zeros(ny, dtype=bool)
        keep[rng.choice(ny, size=n_keep, replace=False)] = True
    if spec.acs_width:
        keep[acs_lines(ny, spec.acs_width)] = True
    return keep


def acs_lines(ny: int, acs_width: int) -> np.ndarray:
    """Indices of the centered block of `acs_width` consecutive ky lines."""
    if acs_width > ny:
        raise ConfigError(f"acs_width {acs_width} exceeds ny {ny}")
    start = (ny - acs_width) // 2
    return np.arange(start, start + acs_width)


def make_mask(spec: MaskSpec, grid: tuple[int, int], n_contrast: int) -> SamplingMask:
    """Phase-encode undersampling, fully sampled along kx."""
    ny, nx = grid
    if spec.acs_width > ny:
        raise ConfigError(f"acs_width {spec.acs_width} exceeds ny {ny}")
    rng = np.random.default_rng(spec.seed)
    pattern = np.zeros((n_contrast, ny, nx), dtype=bool)
    if spec.per_contrast:
        for k in range(n_contrast):
            pattern[k, _sampled_lines(spec, ny, rng), :] = True
    else:
        lines = _sampled_lines(spec, ny, rng)
        pattern[:, lines, :] = True
    return SamplingMask(pattern)


def mask_accounting(p: SamplingMask) -> list[dict]:
    """Per-contrast line counts and the realized net acceleration."""
    out = []
    for k in range(p.n_contrast):
        lines = np.any(p.pattern[k], axis=1)
        sampled = int(np.count_nonzero(lines))
        out.append(
            {
                "contrast": k,
                "total_lines": int(lines.size),
                "sampled_lines": sampled,
                "net_accel": lines.size / sampled,
            }
        )
    return out


def simulate_kspace(
    x_true: ParameterState,
    protocol: AcquisitionProtocol,
    c: CoilMaps,
    noise_sigma: float = 0.0,
    rng_seed: int = 0,
) -> KSpaceData:
    """Fully sampled k-space from the forward chain plus complex noise.

    Noise is i.i.d. Gaussian with standard deviation `noise_sigma` in
    each of the real and imaginary components.
    """
    if noise_sigma < 0:
        raise DomainError(f"noise_sigma must be >= 0, got {noise_sigma}")
    full = SamplingMask(np.ones((protocol.n_contrast, *x_true.shape), dtype=bool))
    clean = encode(x_true, protocol, c, full)
    if noise_sigma == 0:
        return clean
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, noise_sigma, size=(*clean.samples.shape, 2))
    return KSpaceData(clean.samples + noise[..., 0] + 1j * noise[..., 1], protocol)


def sigma_for_snr(clean: KSpaceData, snr_db: float) -> float:
    """Per-component noise std giving the requested data-domain SNR.

    SNR is mean |y|^2 over all samples versus total complex noise power
    2 sigma^2.
    """
    power = float(np.mean(np.abs(clean.samples) ** 2))
    return math.sqrt(power / (2.0 * 10.0 ** (snr_db / 10.0)))


def split_mask(
    p: SamplingMask, rho: float, seed: int, acs_width: int = 0
) -> tuple[SamplingMask, SamplingMask]:
    """Partition sampled points into a train mask and a held-out loss mask.

    Per contrast, a uniformly random `rho`-fraction of the sampled
    non-ACS points goes to the loss mask; everything else, including the
    whole ACS block, stays in the train mask. The two patterns are
    disjoint and their union is `p`.
    """
    if not 0 < rho < 1:
        raise ConfigError(f"rho must be in (0, 1), got {rho}")
    ny = p.grid[0]
    acs = np.zeros(ny, dtype=bool)
    if acs_width:
        acs[acs_lines(ny, acs_width)] = True

    rng = np.random.default_rng(seed)
    loss = np.zeros_like(p.pattern)
    for k in range(p.n_contrast):
        eligible = p.pattern[k] & ~acs[:, None]
        idx = np.flatnonzero(eligible.ravel())
        if idx.size == 0:
            raise ConfigError(f"contrast {k} has no sampled non-ACS points to split")
        n_loss = int(math.floor(rho * idx.size + 0.5))
        chosen = rng.choice(idx, size=n_loss, replace=False)
        flat = loss[k].ravel()
        flat[chosen] = True
    train = p.pattern & ~loss
    return SamplingMask(train), SamplingMask(loss)


# ---------------------------------------------------------------------------
# Experiment presets
# ---------------------------------------------------------------------------

def _brain_ellipses(kind: str) -> list[Ellipse]:
    if kind == "T2":
        t = {"head": 300.0, "left": 110.0, "right": 80.0, "csf": 240.0, "lesion": 50.0, "nucleus": 140.0}
    else:
        t = {"head": 800.0, "left": 1200.0, "right": 1400.0, "csf": 3000.0, "lesion": 400.0, "nucleus": 1000.0}
    return [
        Ellipse((0.0, 0.0), (0.92, 0.80), 0.0, 0.9 * np.exp(0.3j), t["head"]),
        Ellipse((0.15, -0.35), (0.40, 0.30), 15.0, 1.0 * np.exp(0.8j), t["left"]),
        Ellipse((0.15, 0.35), (0.40, 0.30), -15.0, 1.0 * np.exp(-0.4j), t["right"]),
        Ellipse((-0.15, 0.0), (0.30, 0.18), 0.0, 1.2 * np.exp(0.1j), t["csf"]),
        Ellipse((0.45, 0.10), (0.12, 0.10), 0.0, 0.7 + 0.0j, t["lesion"]),
        Ellipse((-0.50, -0.10), (0.10, 0.12), 30.0, 0.85 * np.exp(0.5j), t["nucleus"]),
    ]


PRESETS = {
    "t2_desk": {
        "grid": (64, 52),
        "kind": "T2",
        "times": [23.0 * k for k in range(1, 9)],
        "n_coil": 8,
        "snr_db": 30.0,
        "seed": 0,
        "mask": {"accel": 4, "acs_width": 8, "scheme": "equispaced", "seed": 0},
    },
    "t2_full": {
        "grid": (256, 208),
        "kind": "T2",
        "times": [23.0 * k for k in range(1, 9)],
        "n_coil": 8,
        "snr_db": 30.0,
        "seed": 0,
        "mask": {"accel": 4, "acs_width": 24, "scheme": "equispaced", "seed": 0},
    },
    "t1_desk": {
        "grid": (64, 52),
        "kind": "T1",
        "times": [35.0, 200.0, 800.0, 1500.0, 3000.0],
        "n_coil": 8,
        "snr_db": 30.0,
        "seed": 0,
        "mask": {"accel": 4, "acs_width": 8, "scheme": "equispaced", "seed": 0},
    },
    "t1_full": {
        "grid": (256, 208),
        "kind": "T1",
        "times": [35.0, 200.0, 800.0, 1500.0, 3000.0],
        "n_coil": 8,
        "snr_db": 30.0,
        "seed": 0,
        "mask": {"accel": 4, "acs_width": 24, "scheme": "equispaced", "seed": 0},
    },
}


def phantom_preset(name: str) -> PhantomSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    return PhantomSpec(grid=tuple(preset["grid"]), kind=preset["kind"], ellipses=_brain_ellipses(preset["kind"]))


def protocol_preset(name: str) -> AcquisitionProtocol:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    return AcquisitionProtocol(preset["kind"], np.asarray(preset["times"]))
