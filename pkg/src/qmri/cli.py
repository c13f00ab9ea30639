"""Command-line entry point for reproducible experiment runs.

Subcommands: simulate, mask, recon, fit, metrics, split. Experiments
are driven by JSON config files; any key can be overridden on the
command line with --set key=value (dotted keys, JSON-parsed values).

Exit codes: 0 success, 2 config/input error, 3 numerical failure,
4 bridge failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import cg_sense_recon, nrmse, pixelwise_fit, zero_filled_recon
from .datatypes import AcquisitionProtocol, CoilMaps, KSpaceData, ParameterState, SamplingMask
from .encoding import apply_mask
from .exceptions import (
    BridgeError,
    ConfigError,
    NumericalError,
    QmriError,
    QmrtFormatError,
    QmrtTruncationError,
    RegularizerBlockError,
)
from .qmrt import read_tensor, write_tensor
from .regularizers import RegularizerSpec
from .simulate import (
    PRESETS,
    Ellipse,
    MaskSpec,
    PhantomSpec,
    make_coil_maps,
    make_mask,
    make_phantom,
    mask_accounting,
    phantom_preset,
    protocol_preset,
    sigma_for_snr,
    simulate_kspace,
    split_mask,
)
from .unroll import UnrollConfig, initialize, run_unrolled

RECON_METHODS = ("nlcg", "nlcg_net", "zero_filled_fit", "cg_sense_fit")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not an object")
        node[parts[-1]] = value
    return cfg


def _require(cfg: dict, key: str, kind, what: str):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"{key}: missing required {what}")
        node = node[part]
    if kind is float and isinstance(node, int):
        node = float(node)
    if not isinstance(node, kind):
        raise ConfigError(f"{key}: expected {what}, got {node!r}")
    return node


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("QMRI_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# state and dataset I/O
# ---------------------------------------------------------------------------

def save_state(state: ParameterState, out_dir: Path, prefix: str) -> dict:
    files = {}
    for ch, arr in (("mx", state.mx), ("my", state.my), ("r", state.r)):
        name = f"{prefix}_{ch}.qmrt"
        write_tensor(arr, out_dir / name)
        files[f"{prefix}_{ch}"] = name
    return files


def load_state(dir_path: Path, prefix: str) -> ParameterState:
    return ParameterState(
        read_tensor(dir_path / f"{prefix}_mx.qmrt"),
        read_tensor(dir_path / f"{prefix}_my.qmrt"),
        read_tensor(dir_path / f"{prefix}_r.qmrt"),
    )


def _load_dataset(data_dir: Path):
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    protocol = AcquisitionProtocol(manifest["mapping_kind"], np.asarray(manifest["times"]))
    coils = CoilMaps(read_tensor(data_dir / manifest["files"]["coils"]))
    mask = SamplingMask(read_tensor(data_dir / manifest["files"]["mask"]))
    kspace = KSpaceData(read_tensor(data_dir / manifest["files"]["kspace"]), protocol)
    return manifest, protocol, coils, mask, kspace


def _parse_phantom(cfg: dict, kind: str) -> PhantomSpec:
    grid = _require(cfg, "phantom.grid", list, "grid [ny, nx]")
    ellipses = []
    for i, e in enumerate(_require(cfg, "phantom.ellipses", list, "ellipse list")):
        try:
            ellipses.append(
                Ellipse(
                    center=tuple(e["center"]),
                    axes=tuple(e["axes"]),
                    rotation=float(e.get("rotation", 0.0)),
                    magnetization=complex(e["magnetization"][0], e["magnetization"][1]),
                    t_value=float(e["t_value"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"phantom.ellipses[{i}]: {exc}") from exc
    background = cfg["phantom"].get("background_t")
    return PhantomSpec(tuple(grid), kind, ellipses, background)


def _parse_mask_spec(cfg: dict) -> MaskSpec:
    mask_cfg = cfg.get("mask")
    if not isinstance(mask_cfg, dict):
        raise ConfigError("mask: missing mask settings object")
    accel = mask_cfg.get("accel")
    if not isinstance(accel, int) or accel < 1:
        raise ConfigError(f"mask.accel: must be an integer >= 1, got {accel!r}")
    acs = mask_cfg.get("acs_width", 0)
    if not isinstance(acs, int) or acs < 0:
        raise ConfigError(f"mask.acs_width: must be an integer >= 0, got {acs!r}")
    try:
        return MaskSpec(
            accel=accel,
            acs_width=acs,
            scheme=mask_cfg.get("scheme", "equispaced"),
            seed=int(mask_cfg.get("seed", 0)),
            per_contrast=bool(mask_cfg.get("per_contrast", False)),
        )
    except ConfigError as exc:
        raise ConfigError(f"mask: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args.set)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    preset_name = cfg.get("preset")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset_name!r}, choose from {sorted(PRESETS)}")
        preset = PRESETS[preset_name]
        base = {
            "protocol": {"kind": preset["kind"], "times": list(preset["times"])},
            "coils": {"n_coil": preset["n_coil"]},
            "mask": dict(preset["mask"]),
            "noise": {"snr_db": preset["snr_db"]},
            "seed": preset["seed"],
        }
        for key, value in base.items():
            if key in cfg and isinstance(cfg[key], dict):
                merged = dict(value)
                merged.update(cfg[key])
                cfg[key] = merged
            else:
                cfg.setdefault(key, value)
        phantom_spec = phantom_preset(preset_name)
        if "phantom" in cfg:
            phantom_spec = _parse_phantom(cfg, cfg["protocol"]["kind"])
    else:
        kind = _require(cfg, "protocol.kind", str, "mapping kind")
        phantom_spec = _parse_phantom(cfg, kind)

    kind = _require(cfg, "protocol.kind", str, "mapping kind")
    times = _require(cfg, "protocol.times", list, "times list")
    protocol = AcquisitionProtocol(kind, np.asarray(times, dtype=float))
    n_coil = _require(cfg, "coils.n_coil", int, "coil count")
    mask_spec = _parse_mask_spec(cfg)
    seed = int(cfg.get("seed", 0))

    truth, _ = make_phantom(phantom_spec)
    coils = make_coil_maps(n_coil, phantom_spec.grid)
    mask = make_mask(mask_spec, phantom_spec.grid, protocol.n_contrast)

    noise_cfg = cfg.get("noise", {})
    if "sigma" in noise_cfg:
        sigma = float(noise_cfg["sigma"])
    elif "snr_db" in noise_cfg:
        clean = simulate_kspace(truth, protocol, coils, 0.0, seed)
        sigma = sigma_for_snr(clean, float(noise_cfg["snr_db"]))
    else:
        sigma = 0.0
    kspace = simulate_kspace(truth, protocol, coils, sigma, seed)

    files = save_state(truth, out_dir, "truth")
    write_tensor(coils.maps, out_dir / "coils.qmrt")
    write_tensor(mask.pattern, out_dir / "mask.qmrt")
    write_tensor(kspace.samples, out_dir / "kspace.qmrt")
    files.update({"coils": "coils.qmrt", "mask": "mask.qmrt", "kspace": "kspace.qmrt"})

    manifest = {
        "preset": preset_name,
        "grid": list(phantom_spec.grid),
        "mapping_kind": kind,
        "times": [float(t) for t in protocol.times],
        "n_coil": n_coil,
        "noise": {"sigma": sigma, **({"snr_db": noise_cfg["snr_db"]} if "snr_db" in noise_cfg else {})},
        "seeds": {"kspace": seed, "mask": mask_spec.seed},
        "mask": {
            "accel": mask_spec.accel,
            "acs_width": mask_spec.acs_width,
            "scheme": mask_spec.scheme,
            "per_contrast": mask_spec.per_contrast,
        },
        "accounting": mask_accounting(mask),
        "files": files,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(files)} data files to {out_dir}")
    return 0


def cmd_mask(args) -> int:
    spec = MaskSpec(
        accel=args.accel,
        acs_width=args.acs_width,
        scheme=args.scheme,
        seed=args.seed,
        per_contrast=args.per_contrast,
    )
    mask = make_mask(spec, (args.ny, args.nx), args.n_contrast)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(mask.pattern, out_dir / "mask.qmrt")
    accounting = mask_accounting(mask)
    (out_dir / "mask.json").write_text(json.dumps({"spec": vars(spec), "accounting": accounting}, indent=2))
    for row in accounting:
        print(
            f"contrast {row['contrast']}: {row['sampled_lines']}/{row['total_lines']} lines,"
            f" net accel {row['net_accel']:.3f}"
        )
    return 0


def _unroll_config(cfg: dict) -> UnrollConfig:
    u = cfg.get("unroll", {})
    reg_cfg = u.get("regularizer", {"name": "identity"})
    reg = RegularizerSpec(
        name=reg_cfg.get("name", "identity"),
        params=reg_cfg.get("params", {}),
        command=reg_cfg.get("command"),
        workdir=reg_cfg.get("workdir"),
        timeout=float(reg_cfg.get("timeout", 300.0)),
    )
    return UnrollConfig(
        n_blocks=int(u.get("n_blocks", 3)),
        dc_iters=int(u.get("dc_iters", 20)),
        init_iters=int(u.get("init_iters", 800)),
        lam=float(u.get("lambda", 0.05)),
        regularizer=reg,
        r_max=float(u.get("r_max", 1.0)),
        grad_tol=float(u.get("grad_tol", 1e-9)),
    )


def _report_dict(report) -> dict:
    return {
        "objective_trace": [float(v) for v in report.objective_trace],
        "final_grad_norm": report.final_grad_norm,
        "iterations_run": report.iterations_run,
        "backtrack_failures": report.backtrack_failures,
    }


def cmd_recon(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args.set)
    method = _require(cfg, "method", str, "recon method")
    if method not in RECON_METHODS:
        raise ConfigError(f"method: must be one of {RECON_METHODS}, got {method!r}")
    data_dir = Path(_require(cfg, "data_dir", str, "input data directory"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest, protocol, coils, mask, kspace_full = _load_dataset(data_dir)
    y = KSpaceData(apply_mask(kspace_full.samples, mask), protocol)

    t0 = time.perf_counter()
    report: dict = {}
    if method == "zero_filled_fit":
        est = pixelwise_fit(zero_filled_recon(y, coils, mask), protocol)
    elif method == "cg_sense_fit":
        cg = cfg.get("cg_sense", {})
        images = cg_sense_recon(y, coils, mask, int(cg.get("iters", 30)), float(cg.get("tol", 1e-9)))
        est = pixelwise_fit(images, protocol)
    elif method == "nlcg":
        n = cfg.get("nlcg", {})
        ucfg = UnrollConfig(
            init_iters=int(n.get("iters", 800)),
            r_max=float(n.get("r_max", 1.0)),
            grad_tol=float(n.get("grad_tol", 1e-9)),
        )
        est = initialize(y, protocol, coils, mask, ucfg)
    else:
        ucfg = _unroll_config(cfg)
        est, unroll_report = run_unrolled(y, protocol, coils, mask, ucfg)
        report = {
            "init": _report_dict(unroll_report.init),
            "blocks": [_report_dict(b) for b in unroll_report.blocks],
            "scaling": [
                unroll_report.scaling.w_mx,
                unroll_report.scaling.w_my,
                unroll_report.scaling.w_r,
            ],
            "lam_effective": unroll_report.lam_effective,
        }
    seconds = time.perf_counter() - t0

    files = save_state(est, out_dir, "est")
    payload = {
        "method": method,
        "experiment": manifest.get("preset") or "custom",
        "accel": manifest["mask"]["accel"],
        "data_dir": str(data_dir),
        "seconds": seconds,
        "files": files,
        "config": cfg,
        "report": report,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2))
    print(f"method {method} finished in {seconds:.2f} s -> {out_dir}")
    return 0


def cmd_fit(args) -> int:
    images = read_tensor(Path(args.images))
    if args.data_dir:
        manifest = json.loads((Path(args.data_dir) / "manifest.json").read_text())
        protocol = AcquisitionProtocol(manifest["mapping_kind"], np.asarray(manifest["times"]))
    elif args.kind and args.times:
        protocol = AcquisitionProtocol(args.kind, np.asarray([float(t) for t in args.times.split(",")]))
    else:
        raise ConfigError("fit needs either --data-dir or both --kind and --times")
    est = pixelwise_fit(images, protocol, r_max=args.r_max)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_state(est, out_dir, "est")
    print(f"fitted {protocol.mapping_kind} maps -> {out_dir}")
    return 0


def cmd_metrics(args) -> int:
    est_dir, truth_dir = Path(args.est), Path(args.truth)
    for d, prefix in ((est_dir, "est"), (truth_dir, "truth")):
        for ch in ("mx", "my", "r"):
            if not (d / f"{prefix}_{ch}.qmrt").exists():
                raise ConfigError(f"missing {prefix}_{ch}.qmrt in {d}")
    est = load_state(est_dir, "est")
    truth = load_state(truth_dir, "truth")
    if est.shape != truth.shape:
        raise ConfigError(f"est grid {est.shape} != truth grid {truth.shape}")

    experiment, method, accel, seconds = "custom", "unknown", "", ""
    report_path = est_dir / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        experiment = report.get("experiment", experiment)
        method = report.get("method", method)
        accel = report.get("accel", accel)
        seconds = report.get("seconds", seconds)

    roi = None if args.roi == "auto" else np.ones(truth.shape, dtype=bool)
    rows = [
        ("R", nrmse(est.r, truth.r, roi)),
        ("magnitude", nrmse(np.abs(est.magnetization()), np.abs(truth.magnetization()), roi)),
    ]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["experiment", "method", "accel", "map", "nrmse", "seconds"])
    for map_name, value in rows:
        writer.writerow([experiment, method, accel, map_name, repr(value), seconds])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_split(args) -> int:
    if args.data_dir:
        data_dir = Path(args.data_dir)
        manifest = json.loads((data_dir / "manifest.json").read_text())
        mask = SamplingMask(read_tensor(data_dir / manifest["files"]["mask"]))
        acs_width = manifest["mask"]["acs_width"] if args.acs_width is None else args.acs_width
    elif args.mask:
        mask = SamplingMask(read_tensor(Path(args.mask)))
        acs_width = args.acs_width or 0
    else:
        raise ConfigError("split needs either --data-dir or --mask")
    train, loss = split_mask(mask, args.rho, args.seed, acs_width)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(train.pattern, out_dir / "theta.qmrt")
    write_tensor(loss.pattern, out_dir / "lambda.qmrt")
    summary = {
        "rho": args.rho,
        "seed": args.seed,
        "acs_width": acs_width,
        "train_points": int(np.count_nonzero(train.pattern)),
        "loss_points": int(np.count_nonzero(loss.pattern)),
        "train_accounting": mask_accounting(train),
    }
    (out_dir / "split.json").write_text(json.dumps(summary, indent=2))
    print(f"split {summary['train_points']} train / {summary['loss_points']} loss points -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qmri",
        description="Model-based T1/T2 mapping from undersampled multi-coil k-space",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap numerical thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate phantom, coils, mask, and k-space")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mask", help="generate a sampling mask and report acceleration")
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--n-contrast", type=int, default=1)
    p.add_argument("--accel", type=int, required=True)
    p.add_argument("--acs-width", type=int, default=0)
    p.add_argument("--scheme", choices=["equispaced", "uniform_random"], default="equispaced")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-contrast", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("recon", help="reconstruct parameter maps from a simulated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("fit", help="pixelwise model fit of multi-contrast images")
    p.add_argument("--images", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--kind", choices=["T1", "T2"])
    p.add_argument("--times", help="comma-separated TE/TI list in ms")
    p.add_argument("--r-max", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", help="NRMSE of estimated maps against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--roi", choices=["auto", "all"], default="auto")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("split", help="zero-shot train/loss mask split")
    p.add_argument("--data-dir")
    p.add_argument("--mask")
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--acs-width", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (ConfigError, QmrtFormatError, QmrtTruncationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"bridge error: {exc}", file=sys.stderr)
        return 4
    except RegularizerBlockError as exc:
        kind = 4 if isinstance(exc.__cause__, BridgeError) else 3
        print(f"regularizer error: {exc}", file=sys.stderr)
        return kind
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except QmriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
