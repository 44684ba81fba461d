"""Command-line front end.

Every command resolves its parameters from built-in defaults, then the
matching section of a JSON config file (``--config`` or ``$QKDLINK_CONFIG``),
then command-line flags. The effective parameters and seed are written to a
``manifest.json`` next to the outputs so a run can be replayed.

Exit codes: 0 success, 1 invalid configuration, 2 no correlation peak,
3 malformed time-tag file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .core import Party, SecurityParams, SiftedBlock, split_epsilon
from .keyrate import (
    DEFAULT_PENALTY,
    PenaltyForm,
    asymptotic_key_length,
    asymptotic_rate,
    finite_key_curve,
    sharp_key_length,
)
from .linkbudget import BeamParams, loss_table
from .orbitpass import PassConfig, evaluate_pass
from .pipeline import run_pipeline
from .sync import NoPeak, SyncError, synchronize
from .tagio import TagFormatError, read_stream, write_stream
from .timetag_sim import ConfigError, SimConfig, calibrated_config, expected_rates, generate_pair_streams

log = logging.getLogger("qkdlink")

CONFIG_ENV = "QKDLINK_CONFIG"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_PEAK = 2
EXIT_BAD_FILE = 3

SECURITY_DEFAULTS = {
    "epsilon": 4e-16,
    "f_ec": 1.2,
    "sample_fraction": 0.20,
    "penalty": DEFAULT_PENALTY.value,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {
        "target_sifted_rate": 24665.0,
        "target_qber": 0.0478,
        "pair_rate": None,
        "intrinsic_qber": None,
        "transmittance": 0.7,
        "background_rate_per_channel": 500.0,
        "timing_jitter_sigma": 100.0,
        "clock_offset": 3_000_000_000,
        "clock_drift": 5.0,
        "duration": 60.0,
        "window": 1000,
        "format": "bin",
    },
    "sync": {
        "coarse_bin": 1_000_000,
        "search_span": 1_000_000_000_000,
        "fine_bin": 1_000,
        "fine_window": 10_000_000,
        "segment": 1.0,
        "threshold": 6.0,
    },
    "pipeline": {
        "window": 1000,
        "block": 1.0,
        "aggregate": 300.0,
        "format": "csv",
        **SECURITY_DEFAULTS,
    },
    "keyrate": {
        "n": 7.4e6,
        "qber": 0.0478,
        "duration": 300.0,
        "rate": 24665.0,
        "curve": False,
        "n_min": 1e3,
        "n_max": 1e10,
        "points": 71,
        "format": "json",
        **SECURITY_DEFAULTS,
    },
    "pass": {
        "elevations": [32.0, 47.0, 52.0, 76.0, 80.0],
        "labels": [],
        "altitude": 500.0,
        "min_elevation": 20.0,
        "time_step": 1.0,
        "baseline_rate": 24665.0,
        "qber": 0.0478,
        "wavelength": 780e-9,
        "waist_radius": 0.04,
        "m_squared": 1.6,
        "receiver_radius": 0.4,
        "extra_loss": 6.0,
        "format": "csv",
        "profiles": False,
        **SECURITY_DEFAULTS,
    },
    "linkbudget": {
        "ranges": [1.8e3, 5e5, 8e5, 1.2e6],
        "wavelength": 780e-9,
        "waist_radius": 0.04,
        "m_squared": 1.6,
        "receiver_radius": 0.4,
        "extra_loss": 0.0,
        "format": "csv",
    },
}

PIPELINE_SYNC_KEYS = tuple(DEFAULTS["sync"])
DEFAULTS["pipeline"].update(DEFAULTS["sync"])


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _load_config(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a JSON object", EXIT_CONFIG)
    return data


def _resolve(command: str, args: argparse.Namespace) -> tuple[dict, int]:
    config = _load_config(args.config)
    params = dict(DEFAULTS[command])
    section = config.get(command, {})
    unknown = set(section) - set(params)
    if unknown:
        raise CliError(
            f"config section [{command}]: unknown key(s) {', '.join(sorted(unknown))}", EXIT_CONFIG
        )
    params.update(section)
    for key in params:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    return params, seed


def _security(params: dict) -> SecurityParams:
    try:
        return split_epsilon(params["epsilon"], params["f_ec"], params["sample_fraction"])
    except ValueError as exc:
        raise CliError(f"security parameters: {exc}", EXIT_CONFIG) from exc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def _write_rows(path: Path, rows: list[dict], fmt: str) -> Path:
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        _write_json(path, rows)
        return path
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _csv_cell(v) for k, v in row.items()})
    return path


def _csv_cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


def _write_manifest(out_dir: Path, command: str, params: dict, seed: int, inputs, outputs) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "parameters": params,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": sorted(Path(p).name for p in outputs),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_pair(args) -> tuple:
    try:
        return read_stream(args.alice, Party.ALICE), read_stream(args.bob, Party.BOB)
    except TagFormatError as exc:
        raise CliError(f"malformed time-tag file: {exc}", EXIT_BAD_FILE) from exc
    except OSError as exc:
        raise CliError(f"cannot read time-tag file: {exc}", EXIT_BAD_FILE) from exc


# ---------------------------------------------------------------- commands


def _sim_config(params: dict, seed: int) -> SimConfig:
    try:
        if params["pair_rate"] is None:
            return calibrated_config(
                sifted_rate=params["target_sifted_rate"],
                qber=params["target_qber"],
                window_ps=params["window"],
                transmittance=params["transmittance"],
                background_rate_per_channel=params["background_rate_per_channel"],
                timing_jitter_sigma=params["timing_jitter_sigma"],
                clock_offset=int(params["clock_offset"]),
                clock_drift=params["clock_drift"],
                duration=params["duration"],
                seed=seed,
            )
        qber = params["intrinsic_qber"]
        return SimConfig(
            pair_rate=params["pair_rate"],
            arm_transmittance_a=params["transmittance"],
            arm_transmittance_b=params["transmittance"],
            intrinsic_qber=params["target_qber"] if qber is None else qber,
            background_rate_per_channel=params["background_rate_per_channel"],
            timing_jitter_sigma=params["timing_jitter_sigma"],
            clock_offset=int(params["clock_offset"]),
            clock_drift=params["clock_drift"],
            duration=params["duration"],
            seed=seed,
        )
    except (ConfigError, ValueError, ZeroDivisionError) as exc:
        raise CliError(f"invalid simulate configuration: {exc}", EXIT_CONFIG) from exc


def cmd_simulate(args) -> int:
    params, seed = _resolve("simulate", args)
    if params["format"] not in ("bin", "csv"):
        raise CliError("simulate.format: must be 'bin' or 'csv'", EXIT_CONFIG)
    config = _sim_config(params, seed)
    out = _out_dir(args)
    alice, bob = generate_pair_streams(config)
    ext = ".qtag" if params["format"] == "bin" else ".csv"
    paths = [out / f"alice{ext}", out / f"bob{ext}"]
    write_stream(alice, paths[0])
    write_stream(bob, paths[1])
    summary = {
        "duration_s": config.duration,
        "alice_events": alice.counts_per_channel(),
        "bob_events": bob.counts_per_channel(),
        "expected": expected_rates(config, params["window"]),
        "sim_config": config.as_dict(),
    }
    _write_manifest(out, "simulate", {**params, "resolved": config.as_dict()}, seed, [], paths)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return EXIT_OK


def _sync_options(params: dict) -> dict:
    return {
        "coarse_bin": int(params["coarse_bin"]),
        "search_span": int(params["search_span"]),
        "fine_bin": int(params["fine_bin"]),
        "fine_window": int(params["fine_window"]),
        "segment": float(params["segment"]),
        "threshold": float(params["threshold"]),
    }


def cmd_sync(args) -> int:
    params, seed = _resolve("sync", args)
    alice, bob = _read_pair(args)
    try:
        result = synchronize(alice, bob, **_sync_options(params))
    except NoPeak as exc:
        raise CliError(f"synchronisation failed: {exc}", EXIT_NO_PEAK) from exc
    except SyncError as exc:
        raise CliError(f"synchronisation failed: {exc}", EXIT_NO_PEAK) from exc
    out = _out_dir(args)
    path = out / "sync.json"
    _write_json(path, result.as_dict())
    _write_manifest(out, "sync", params, seed, [args.alice, args.bob], [path])
    print(json.dumps(_jsonable(result.as_dict()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    params, seed = _resolve("pipeline", args)
    if params["format"] not in ("csv", "json"):
        raise CliError("pipeline.format: must be 'csv' or 'json'", EXIT_CONFIG)
    security = _security(params)
    alice, bob = _read_pair(args)
    if not len(alice) or not len(bob):
        raise CliError("synchronisation failed: empty stream", EXIT_NO_PEAK)
    try:
        result = run_pipeline(
            alice,
            bob,
            params=security,
            seed=seed,
            window=int(params["window"]),
            block_s=float(params["block"]),
            aggregate_s=float(params["aggregate"]),
            sync_options=_sync_options(params),
            penalty=params["penalty"],
        )
    except SyncError as exc:
        raise CliError(f"synchronisation failed: {exc}", EXIT_NO_PEAK) from exc
    out = _out_dir(args)
    fmt = params["format"]
    outputs = [
        _write_rows(out / "blocks", result.block_rows, fmt),
        _write_rows(out / "aggregates", result.aggregate_rows, fmt),
    ]
    report = out / "report.json"
    _write_json(report, result.summary())
    outputs.append(report)
    _write_manifest(out, "pipeline", params, seed, [args.alice, args.bob], outputs)
    print(json.dumps(_jsonable(result.summary()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_keyrate(args) -> int:
    params, seed = _resolve("keyrate", args)
    security = _security(params)
    penalty = PenaltyForm(params["penalty"])
    out = _out_dir(args)
    if params["curve"]:
        grid = np.logspace(np.log10(params["n_min"]), np.log10(params["n_max"]), int(params["points"]))
        curve = finite_key_curve(params["rate"], params["qber"], security, grid, penalty)
        asym = asymptotic_rate(params["rate"], params["qber"], security)
        rows = [
            {"N": n, "rate_bps": r, "asymptotic_bps": asym, "block_duration_s": n / params["rate"]}
            for n, r in curve
        ]
        path = _write_rows(out / "finite_key_curve", rows, params["format"])
        _write_manifest(out, "keyrate", params, seed, [], [path])
        print(f"wrote {len(rows)} points to {path}; asymptotic rate {asym:.1f} bps")
        return EXIT_OK
    block = SiftedBlock.from_counts(
        int(round(params["n"])), params["qber"], params["duration"], security.sample_fraction
    )
    sharp = sharp_key_length(block, security, penalty)
    asym = asymptotic_key_length(block, security)
    report = {
        "N": block.n_total,
        "n_pe": block.n_pe,
        "n_key": block.n_key,
        "qber_hat": block.qber_hat,
        "duration_s": block.duration,
        "asymptotic": asym.as_dict(),
        "sharp": sharp.as_dict(),
    }
    path = out / "keyrate.json"
    _write_json(path, report)
    _write_manifest(out, "keyrate", params, seed, [], [path])
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK


def _beam(params: dict) -> BeamParams:
    try:
        return BeamParams(params["wavelength"], params["waist_radius"], params["m_squared"])
    except ValueError as exc:
        raise CliError(f"beam parameters: {exc}", EXIT_CONFIG) from exc


def cmd_pass(args) -> int:
    params, seed = _resolve("pass", args)
    security = _security(params)
    beam = _beam(params)
    labels = list(params["labels"])
    out = _out_dir(args)
    reports = []
    for k, elevation in enumerate(params["elevations"]):
        label = labels[k] if k < len(labels) else f"pass-{k + 1}"
        try:
            config = PassConfig(
                max_elevation=float(elevation),
                altitude=params["altitude"],
                min_elevation=params["min_elevation"],
                time_step=params["time_step"],
            )
        except ValueError as exc:
            raise CliError(f"pass configuration: {exc}", EXIT_CONFIG) from exc
        reports.append(
            evaluate_pass(
                config,
                baseline_rate=params["baseline_rate"],
                qber=params["qber"],
                params=security,
                beam=beam,
                extra_loss_db=params["extra_loss"],
                receiver_radius=params["receiver_radius"],
                penalty=params["penalty"],
                label=label,
            )
        )
    rows = [r.as_row() for r in reports]
    outputs = [_write_rows(out / "passes", rows, params["format"])]
    if params["profiles"] or params["format"] == "json":
        detail = [
            {**r.as_row(), "key": r.key.as_dict() if r.key else None} for r in reports
        ]
        path = out / "passes_report.json"
        _write_json(path, detail)
        outputs.append(path)
    _write_manifest(out, "pass", params, seed, [], outputs)
    for row in rows:
        print(
            f"{row['label']:>12}  max {row['max_elevation_deg']:5.1f} deg  "
            f"{row['duration_s']:6.1f} s  N={row['N']:9.1f}  SKR={row['skr_bps']:6.3f} bps  "
            f"{row['status']}"
        )
    return EXIT_OK


def cmd_linkbudget(args) -> int:
    params, seed = _resolve("linkbudget", args)
    beam = _beam(params)
    out = _out_dir(args)
    rows = loss_table(beam, params["ranges"], params["receiver_radius"], params["extra_loss"])
    path = _write_rows(out / "loss_table", rows, params["format"])
    _write_manifest(out, "linkbudget", params, seed, [], [path])
    for row in rows:
        print(f"{row['range_m']:12.1f} m  w={row['spot_radius_m']:.4f} m  loss={row['total_loss_db']:.2f} dB")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_params(parser: argparse.ArgumentParser, command: str) -> None:
    for key, default in DEFAULTS[command].items():
        if isinstance(default, bool):
            parser.add_argument(_flag(key), dest=key, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, list):
            kind = str if key == "labels" else float
            parser.add_argument(_flag(key), dest=key, type=kind, nargs="+", default=None)
        elif key == "format":
            parser.add_argument("--format", dest=key, default=None)
        elif key == "penalty":
            parser.add_argument(
                "--penalty", dest=key, choices=[p.value for p in PenaltyForm], default=None
            )
        elif isinstance(default, int):
            parser.add_argument(_flag(key), dest=key, type=int, default=None)
        else:
            parser.add_argument(_flag(key), dest=key, type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdlink", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    commands: dict[str, tuple[Callable, str, bool]] = {
        "simulate": (cmd_simulate, "Simulate Alice/Bob time-tag files", False),
        "sync": (cmd_sync, "Recover clock offset and drift", True),
        "pipeline": (cmd_pipeline, "Sync, sift and compute key rates per block", True),
        "keyrate": (cmd_keyrate, "Key length for one block or a finite-key curve", False),
        "pass": (cmd_pass, "Extrapolate to LEO passes (per-pass report)", False),
        "linkbudget": (cmd_linkbudget, "Loss versus range table", False),
    }
    for name, (func, help_text, needs_files) in commands.items():
        p = sub.add_parser(name, help=help_text)
        if needs_files:
            p.add_argument("alice", help="Alice tag file (.qtag binary or .csv)")
            p.add_argument("bob", help="Bob tag file (.qtag binary or .csv)")
        p.add_argument("--config", default=None, help=f"JSON config (default ${CONFIG_ENV})")
        p.add_argument("--out-dir", default=".", help="directory for outputs and manifest")
        p.add_argument("--seed", type=int, default=None)
        _add_params(p, name)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"qkdlink {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
