"""Core array containers for parameter maps, k-space, coil maps, and masks.

Conventions used throughout the package:

* all floating point data is float64, complex data is complex128;
* image grids are (ny, nx), row-major;
* multi-contrast stacks are contrast-major: (n_contrast, n_coil, ny, nx)
  for k-space, (n_contrast, ny, nx) for signal images and masks;
* times (TE or TI) are in milliseconds, rates in 1/ms.

"Signal images" (the model output, one complex image per contrast) are
plain complex128 arrays of shape (n_contrast, ny, nx); they carry no
wrapper class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ShapeMismatchError

MAPPING_KINDS = ("T1", "T2")


def _as_float_image(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D (ny, nx), got shape {a.shape}")
    return a


@dataclass
class AcquisitionProtocol:
    """Mapping kind plus the TE (T2) or TI (T1) list in milliseconds."""

    mapping_kind: str
    times: np.ndarray

    def __post_init__(self):
        if self.mapping_kind not in MAPPING_KINDS:
            raise DomainError(f"mapping_kind must be one of {MAPPING_KINDS}, got {self.mapping_kind!r}")
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or self.times.size == 0:
            raise DomainError("times must be a nonempty 1-D sequence")
        if not np.all(self.times > 0):
            raise DomainError("times must all be > 0")
        if not np.all(np.diff(self.times) > 0):
            raise DomainError("times must be strictly increasing")

    @property
    def n_contrast(self) -> int:
        return self.times.size


@dataclass
class ParameterState:
    """Per-voxel triplet (Mx, My, R): the optimization variable.

    Mx and My are the real and imaginary magnetization components in
    arbitrary units; R is the relaxation rate in 1/ms (R1 or R2 = 1/T
    depending on the protocol kind).
    """

    mx: np.ndarray
    my: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.mx = _as_float_image(self.mx, "mx")
        self.my = _as_float_image(self.my, "my")
        self.r = _as_float_image(self.r, "r")
        if not (self.mx.shape == self.my.shape == self.r.shape):
            raise ShapeMismatchError(
                f"mx/my/r shapes differ: {self.mx.shape}, {self.my.shape}, {self.r.shape}"
            )
        if not np.all(np.isfinite(self.r)):
            raise DomainError("r must be finite everywhere")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mx.shape

    def stack(self) -> np.ndarray:
        """Channels stacked as a (3, ny, nx) float64 array (Mx, My, R)."""
        return np.stack([self.mx, self.my, self.r])

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "ParameterState":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ShapeMismatchError(f"expected (3, ny, nx), got {arr.shape}")
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy())

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "ParameterState":
        ny, nx = shape
        return cls(np.zeros((ny, nx)), np.zeros((ny, nx)), np.zeros((ny, nx)))

    def copy(self) -> "ParameterState":
        return ParameterState(self.mx.copy(), self.my.copy(), self.r.copy())

    def magnetization(self) -> np.ndarray:
        """Complex transverse magnetization Mx + i My."""
        return self.mx + 1j * self.my


@dataclass
class KSpaceData:
    """Complex k-space samples indexed by (contrast, coil, ky, kx)."""

    samples: np.ndarray
    protocol: AcquisitionProtocol

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 4:
            raise ShapeMismatchError(
                f"samples must be (n_contrast, n_coil, ny, nx), got {self.samples.shape}"
            )
        if self.samples.shape[0] != self.protocol.n_contrast:
            raise ShapeMismatchError(
                f"n_contrast {self.samples.shape[0]} != protocol times length {self.protocol.n_contrast}"
            )

    @property
    def n_contrast(self) -> int:
        return self.samples.shape[0]

    @property
    def n_coil(self) -> int:
        return self.samples.shape[1]

    @property
    def grid(self) -> tuple[int, int]:
        return self.samples.shape[2:]


@dataclass
class CoilMaps:
    """Complex sensitivity map per coil, shape (n_coil, ny, nx)."""

    maps: np.ndarray

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim != 3:
            raise ShapeMismatchError(f"maps must be (n_coil, ny, nx), got {self.maps.shape}")
        sos = np.sum(np.abs(self.maps) ** 2, axis=0)
        nonzero_any = np.any(self.maps != 0, axis=0)
        if np.any(nonzero_any & (sos <= 0)):
            raise DomainError("sum over coils of |c|^2 must be > 0 wherever any map is nonzero")

    @property
    def n_coil(self) -> int:
        return self.maps.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.maps.shape[1:]


@dataclass
class SamplingMask:
    """Boolean sampling pattern per contrast over (ky, kx)."""

    pattern: np.ndarray

    def __post_init__(self):
        self.pattern = np.asarray(self.pattern, dtype=bool)
        if self.pattern.ndim != 3:
            raise ShapeMismatchError(f"pattern must be (n_contrast, ny, nx), got {self.pattern.shape}")
        if not np.all(np.any(self.pattern, axis=(1, 2))):
            raise DomainError("every contrast needs at least one sampled entry")

    @property
    def n_contrast(self) -> int:
        return self.pattern.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.pattern.shape[1:]


@dataclass(frozen=True)
class ChannelScaling:
    """Positive per-channel scale factors mapping (Mx, My, R) to O(1) range."""

    w_mx: float = 1.0
    w_my: float = 1.0
    w_r: float = 1.0

    def __post_init__(self):
        for name in ("w_mx", "w_my", "w_r"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")

    def as_array(self) -> np.ndarray:
        """Scales as a (3, 1, 1) array for broadcasting over stacked channels."""
        return np.asarray([self.w_mx, self.w_my, self.w_r], dtype=np.float64).reshape(3, 1, 1)

    def scale(self, x: ParameterState) -> ParameterState:
        return ParameterState(x.mx * self.w_mx, x.my * self.w_my, x.r * self.w_r)

    def unscale(self, x: ParameterState) -> ParameterState:
        return ParameterState(x.mx / self.w_mx, x.my / self.w_my, x.r / self.w_r)


UNIT_SCALING = ChannelScaling(1.0, 1.0, 1.0)
