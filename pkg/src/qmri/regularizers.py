"""Pluggable regularizers for the unrolled pipeline.

A regularizer is a callable mapping a ParameterState to a
ParameterState of the same shape. The pipeline always calls it in
scaled space (channels multiplied by the fixed per-channel scales), so
an external implementation sees O(1)-range inputs.

Bridge protocol for out-of-process regularizers, all files in one
working directory:

    x_in.qmrt   float64 tensor, shape (3, ny, nx), channels (Mx, My, R), scaled
    meta.json   {"ny": .., "nx": .., "mapping_kind": "T1"|"T2",
                 "scaling": [w_mx, w_my, w_r]}
    z_out.qmrt  written by the bridge command; same dtype/shape/order/scaling

Invocation is `<command...> <workdir>` and the command must exit 0.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from .datatypes import ParameterState
from .exceptions import BridgeError, ConfigError
from .qmrt import read_tensor, write_tensor

Regularizer = Callable[[ParameterState], ParameterState]

BUILTIN_NAMES = ("identity", "gaussian_smooth", "tv_denoise")


@dataclass
class RegularizerSpec:
    """Configuration entry selecting a builtin or an external bridge."""

    name: str = "identity"
    params: dict = field(default_factory=dict)
    command: list | None = None
    workdir: str | None = None
    timeout: float = 300.0

    def __post_init__(self):
        if self.name == "external":
            if not self.command or self.workdir is None:
                raise ConfigError("external regularizer needs both command and workdir")
        elif self.name not in BUILTIN_NAMES:
            raise ConfigError(
                f"unknown regularizer {self.name!r}; builtins are {BUILTIN_NAMES} plus 'external'"
            )


def _per_channel(fn) -> Regularizer:
    def reg(x: ParameterState) -> ParameterState:
        return ParameterState(fn(x.mx), fn(x.my), fn(x.r))

    return reg


def _tv_grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy = np.zeros_like(u)
    gx = np.zeros_like(u)
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    return gy, gx


def _tv_div(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    d = np.zeros_like(py)
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    return d


def _tv_denoise_channel(f: np.ndarray, weight: float, iters: int) -> np.ndarray:
    """Fixed-iteration dual gradient projection for
    min_u 0.5 ||u - f||^2 + weight * TV(u)."""
    if weight == 0:
        return f.copy()
    tau = 0.25
    py = np.zeros_like(f)
    px = np.zeros_like(f)
    for _ in range(iters):
        u = _tv_div(py, px) - f / weight
        gy, gx = _tv_grad(u)
        mag = np.sqrt(gy * gy + gx * gx)
        py = (py + tau * gy) / (1.0 + tau * mag)
        px = (px + tau * gx) / (1.0 + tau * mag)
    return f - weight * _tv_div(py, px)


def builtin_regularizer(name: str, **params) -> Regularizer:
    """Construct one of the classical stand-in regularizers.

    identity            -> returns its input
    gaussian_smooth     -> separable Gaussian per channel (sigma > 0),
                           kernel truncated at 4 sigma and renormalized
    tv_denoise          -> per-channel TV denoising (weight >= 0, iters)
    """
    if name == "identity":
        if params:
            raise ConfigError(f"identity takes no parameters, got {params}")
        return lambda x: x.copy()
    if name == "gaussian_smooth":
        sigma = params.pop("sigma", 1.0)
        if params:
            raise ConfigError(f"unexpected gaussian_smooth parameters {params}")
        if sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {sigma}")
        return _per_channel(
            lambda ch: gaussian_filter(ch, sigma=sigma, mode="reflect", truncate=4.0)
        )
    if name == "tv_denoise":
        weight = params.pop("weight", 0.05)
        iters = int(params.pop("iters", 30))
        if params:
            raise ConfigError(f"unexpected tv_denoise parameters {params}")
        if weight < 0:
            raise ConfigError(f"weight must be >= 0, got {weight}")
        if iters < 1:
            raise ConfigError(f"iters must be >= 1, got {iters}")
        return _per_channel(lambda ch: _tv_denoise_channel(ch, weight, iters))
    raise ConfigError(f"unknown builtin regularizer {name!r}")


def external_regularizer(
    command: list, workdir, meta: dict, timeout: float = 300.0
) -> Regularizer:
    """Wrap an out-of-process regularizer speaking the bridge protocol."""
    command = [str(c) for c in command]
    workdir = Path(workdir)

    def reg(x: ParameterState) -> ParameterState:
        workdir.mkdir(parents=True, exist_ok=True)
        stack = x.stack()
        write_tensor(stack, workdir / "x_in.qmrt")
        ny, nx = x.shape
        payload = dict(meta)
        payload.update({"ny": int(ny), "nx": int(nx)})
        (workdir / "meta.json").write_text(json.dumps(payload))
        out_path = workdir / "z_out.qmrt"
        if out_path.exists():
            out_path.unlink()

        try:
            proc = subprocess.run(
                command + [str(workdir)],
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise BridgeError(f"bridge command timed out after {timeout} s") from exc
        except OSError as exc:
            raise BridgeError(f"cannot spawn bridge command {command!r}: {exc}") from exc
        if proc.returncode != 0:
            raise BridgeError(
                f"bridge command exited {proc.returncode}; stderr: {proc.stderr.strip()[:500]}"
            )
        if not out_path.exists():
            raise BridgeError("bridge command exited 0 but wrote no z_out.qmrt")
        try:
            z = read_tensor(out_path)
        except Exception as exc:
            raise BridgeError(f"cannot read z_out.qmrt: {exc}") from exc
        if z.shape != stack.shape:
            raise BridgeError(f"z_out shape {z.shape} != expected {stack.shape}")
        if z.dtype != np.float64:
            raise BridgeError(f"z_out dtype {z.dtype} != float64")
        if not np.all(np.isfinite(z)):
            raise BridgeError("z_out contains non-finite values")
        return ParameterState.from_stack(z)

    return reg


def build_regularizer(spec: RegularizerSpec, meta: dict) -> Regularizer:
    if spec.name == "external":
        return external_regularizer(spec.command, spec.workdir, meta, spec.timeout)
    return builtin_regularizer(spec.name, **dict(spec.params))
