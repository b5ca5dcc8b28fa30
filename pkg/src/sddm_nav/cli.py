"""Command-line interface: run, compare, bound, validate.

Exit codes: 0 success, 1 runtime failure (timeout, blowup, planning failure,
collision), 2 configuration error, 3 model error (e.g. non-Hurwitz system).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .bounds import (
    SearchConfig,
    build_closed_loop,
    check_certificate,
    double_integrator,
    exact_output_peak,
    relaxed_output_peak,
)
from .errors import BoundUncertainError, ConfigurationError, EigenvaluePairingError, StabilityError
from .governor import MODES, ControllerGains
from .metric import DirectionalWeights, make_directional_matrix
from .scenario import ScenarioConfig, apply_overrides, load_scenario
from .sim import compare_controllers, metrics_json, run_scenario, write_outputs

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("sddm_nav")


def _setup_logging():
    name = os.environ.get("SDDM_LOG_LEVEL", "warn").lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level is None:
        log.warning("SDDM_LOG_LEVEL=%r not recognised; using warn", name)


def _config(args, mode) -> ScenarioConfig:
    sc = load_scenario(args.scenario)
    cfg = ScenarioConfig.from_scenario(sc, mode=mode, seed=args.seed)
    return apply_overrides(cfg, args.set or [])


def cmd_run(args) -> int:
    cfg = _config(args, args.mode)
    tlog = run_scenario(cfg, snapshots=bool(args.grid_snapshots))
    write_outputs(tlog, args.out)
    sys.stdout.write(metrics_json(tlog))
    return EXIT_OK if tlog.succeeded else EXIT_RUNTIME


def cmd_compare(args) -> int:
    cfgs = [_config(args, m) for m in MODES]
    table, logs = compare_controllers(cfgs)
    out = Path(args.out)
    for tlog in logs:
        write_outputs(tlog, out / tlog.mode)
    text = json.dumps(table, indent=2, sort_keys=True) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if all(t.succeeded for t in logs) else EXIT_RUNTIME


def _floats(text, what):
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])
    except ValueError:
        raise ConfigurationError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _system_from_args(args):
    """(A, B, K, Q, s0) from a JSON system file or the double-integrator flags."""
    if args.system:
        try:
            spec = json.loads(Path(args.system).read_text(encoding="utf-8"))
            a, b, k, q, s0 = (np.array(spec[key], dtype=float) for key in ("A", "B", "K", "Q", "s0"))
        except FileNotFoundError:
            raise ConfigurationError(f"system file not found: {args.system}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad system file ({exc}); needs keys A, B, K, Q, s0", args.system) from None
        return a, b, k, q, s0
    a, b, k = double_integrator(args.k, args.zeta, 2)
    x0, v0, g = _floats(args.x0, "--x0"), _floats(args.v0, "--v0"), _floats(args.g, "--g")
    if not (len(x0) == len(v0) == len(g) == 2):
        raise ConfigurationError("--x0, --v0 and --g need 2 components each")
    if args.q:
        q = _floats(args.q, "--q").reshape(2, 2)
    else:
        q = make_directional_matrix(g - x0, DirectionalWeights(args.c1, args.c2)).q
    return a, b, k, q, np.concatenate([x0 - g, v0])


def cmd_bound(args) -> int:
    a, b, k, q, s0 = _system_from_args(args)
    sys_ = build_closed_loop(a, b, k, q)
    if s0.shape != (sys_.state_dim,):
        raise ConfigurationError(f"s0 has {s0.size} entries, the system has {sys_.state_dim} states")
    eta = exact_output_peak(sys_, s0)
    delta, cert = relaxed_output_peak(sys_, s0, SearchConfig(polish_evals=args.polish))
    ratio = delta.value / eta.value if eta.value > 0 else (1.0 if delta.value == 0 else math.inf)
    out = {
        "eta": eta.value,
        "argmax_time": eta.argmax_time,
        "delta": delta.value,
        "ratio": ratio if math.isfinite(ratio) else None,
        "decay_rate": delta.decay_rate,
        "certificate_failures": check_certificate(sys_, s0, cert),
        "spectral_abscissa": sys_.spectral_abscissa,
    }
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args, args.mode)
    sc = cfg.scenario
    out = {
        "name": sc.name,
        "valid": True,
        "sensing": sc.sensing,
        "disks": int(len(sc.obstacles.disks)),
        "segments": int(len(sc.obstacles.segments)),
        "bounds": list(sc.obstacles.bounds),
        "has_path": sc.path is not None,
    }
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddm-nav", description="Directional-metric governor navigation simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp, with_mode=True):
        sp.add_argument("--scenario", required=True, help="world file path or shipped scenario name")
        if with_mode:
            sp.add_argument("--mode", choices=MODES, default="sddm")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a setting (repeatable)")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("run", help="simulate one scenario")
    scenario_args(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--grid-snapshots", type=int, choices=(0, 1), default=0)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run both controllers on one scenario")
    scenario_args(sp, with_mode=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--grid-snapshots", type=int, choices=(0, 1), default=0)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("bound", help="exact output peak and invariant-ellipsoid bound")
    sp.add_argument("--system", help="JSON file with A, B, K, Q, s0 (overrides the flags below)")
    sp.add_argument("--k", type=float, default=1.0)
    sp.add_argument("--zeta", type=float, default=2.0 * math.sqrt(2.0))
    sp.add_argument("--c1", type=float, default=1.0)
    sp.add_argument("--c2", type=float, default=4.0)
    sp.add_argument("--x0", default="-2,0")
    sp.add_argument("--v0", default="0,0")
    sp.add_argument("--g", default="0,0")
    sp.add_argument("--q", help="explicit 2x2 metric 'q11,q12;q21,q22' (default: directional matrix of g - x0)")
    sp.add_argument("--polish", type=int, default=1500, help="local-search evaluations for the relaxed bound")
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("validate", help="check a world file and overrides")
    scenario_args(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StabilityError, EigenvaluePairingError, BoundUncertainError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
