"""Command line front end.

``second-species lambert|chain|shadow|pipeline [--config FILE] [--out DIR]``

Configuration is a JSON object with optional ``lambert``, ``chain`` and
``shadow`` sections; missing keys take the defaults in ``DEFAULTS`` and the
resolved configuration is written into every output.  Exit codes: 0 success,
2 bad input, 3 non-convergence, 4 failed chain certificate.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .chain_solver import (
    CollisionChain,
    ConvergenceError,
    find_critical_chain,
    seed_from_restricted_limit,
)
from .kepler_lambert import (
    DomainError,
    NoSolutionError,
    arc_at_energy,
    in_domain,
    lambert_f,
    solve_fixed_time,
)
from .regularized_flow import IntegrationError
from .shadowing import (
    ShootingError,
    sweep_summary,
    trace_orbits,
    verify_shadowing,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_CERTIFICATE = 4

THREADS_ENV = "SECOND_SPECIES_THREADS"

log = logging.getLogger("second_species")

DEFAULTS = {
    "seed": 0,
    "lambert": {
        "revolutions": [0, 1],
        "energy": -0.5,
        "tof": None,
        "pairs": None,
        "random_pairs": 0,
        "radius_range": [0.2, 1.5],
        "rtol": 1e-12,
    },
    "chain": {
        "initial_chain": None,
        "energy": -0.5,
        "angular_momentum": 0.95,
        "alpha1": 1e-3,
        "m": 7,
        "n": 3,
        "k1_pattern": [1, 1, 2],
        "variant": "fixed-EG",
        "starts": 20,
        "which": 0,
        "tol_grad": 1e-10,
        "max_iter": 100,
        "screen_samples": 256,
    },
    "shadow": {
        "chain": None,
        "certificate": None,
        "mu_sweep": [1e-3, 1e-4, 1e-5],
        "rho": 0.05,
        "tol": 1e-11,
        "variant": "fixed-EG",
        "trajectories": True,
    },
}

_point = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_maybe_str = {"type": ["string", "null"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "lambert": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "revolutions": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "energy": {"type": ["number", "null"], "exclusiveMaximum": 0},
                "tof": {"type": ["number", "null"], "exclusiveMinimum": 0,
                        "description": "fixed transfer time; takes precedence over energy"},
                "pairs": {"type": ["array", "null"],
                          "items": {"type": "array", "items": _point, "minItems": 2, "maxItems": 2}},
                "random_pairs": {"type": "integer", "minimum": 0},
                "radius_range": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                 "minItems": 2, "maxItems": 2},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "initial_chain": _maybe_str,
                "energy": {"type": "number", "exclusiveMaximum": 0},
                "angular_momentum": {"type": "number", "exclusiveMinimum": 0},
                "alpha1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "m": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "k1_pattern": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "variant": {"enum": ["fixed-E", "fixed-EG", "fixed-T"]},
                "starts": {"type": "integer", "minimum": 1},
                "which": {"type": "integer", "minimum": 0},
                "tol_grad": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "screen_samples": {"type": ["integer", "null"], "minimum": 8},
            },
        },
        "shadow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chain": _maybe_str,
                "certificate": _maybe_str,
                "mu_sweep": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "variant": {"enum": ["fixed-E", "fixed-EG"]},
                "trajectories": {"type": "boolean"},
            },
        },
    },
}


class CliError(Exception):
    """Failure carrying an exit code and a machine-readable kind."""

    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


# --- configuration and output ----------------------------------------------------

def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None, mu_sweep=None) -> dict:
    """Resolve a run configuration: defaults, then the file, then command-line overrides."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CliError(EXIT_INPUT, "config_unreadable", str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_INPUT, "config_malformed", f"{path}: {exc}") from exc
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CliError(EXIT_INPUT, "config_invalid", exc.message) from exc
    config = _merge(DEFAULTS, user)
    if seed is not None:
        config["seed"] = seed
    if mu_sweep is not None:
        config["shadow"]["mu_sweep"] = mu_sweep
    jsonschema.validate(config, SCHEMA)
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(_dumps(config).encode()).hexdigest()


def _clean(obj):
    """Plain JSON values: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def provenance(command: str, config: dict, section: str | None = None) -> dict:
    tolerances = {}
    for name in ("lambert", "chain", "shadow"):
        if section in (None, name):
            tolerances.update({f"{name}.{k}": v for k, v in config[name].items()
                               if k in ("rtol", "tol_grad", "tol")})
    return {
        "command": command,
        "version": __version__,
        "config_hash": config_hash(config),
        "config": config,
        "seed": config["seed"],
        "tolerances": tolerances,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj))
    log.info("wrote %s", path)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise CliError(EXIT_INPUT, "threads_invalid", f"{THREADS_ENV} must be a positive integer")
    return value


# --- lambert --------------------------------------------------------------------

LAMBERT_FIELDS = ("n", "energy", "tof", "x_minus_x", "x_minus_y", "x_plus_x", "x_plus_y",
                  "lambert_f", "action_J", "action_F", "y_minus_x", "y_minus_y",
                  "y_plus_x", "y_plus_y")


def _lambert_pairs(cfg: dict, seed: int):
    if cfg["pairs"] is not None:
        return [(np.array(a, float), np.array(b, float)) for a, b in cfg["pairs"]], True
    rng = np.random.default_rng(seed)
    lo, hi = cfg["radius_range"]
    pairs = []
    for _ in range(cfg["random_pairs"]):
        r = rng.uniform(lo, hi, 2)
        theta = rng.uniform(0.0, 2.0 * math.pi, 2)
        pairs.append((r[0] * np.array([math.cos(theta[0]), math.sin(theta[0])]),
                      r[1] * np.array([math.cos(theta[1]), math.sin(theta[1])])))
    return pairs, False


def run_lambert(config: dict, out: Path) -> int:
    cfg = config["lambert"]
    if cfg["energy"] is None and cfg["tof"] is None:
        raise CliError(EXIT_INPUT, "config_invalid", "lambert needs an energy or a tof")
    pairs, explicit = _lambert_pairs(cfg, config["seed"])
    rows, skipped = [], []
    for i, (xm, xp) in enumerate(pairs):
        if not in_domain(xm, xp):
            if explicit:
                raise CliError(EXIT_INPUT, "domain", f"pair {i} is outside the admissible set")
            skipped.append({"pair": i, "n": None, "reason": "outside the admissible set"})
            continue
        for n in cfg["revolutions"]:
            try:
                if cfg["tof"] is not None:
                    arc = solve_fixed_time(n, cfg["tof"], xm, xp, rtol=cfg["rtol"])
                else:
                    arc = arc_at_energy(n, cfg["energy"], xm, xp)
            except DomainError as exc:
                if explicit:
                    raise CliError(EXIT_INPUT, "domain", f"pair {i}: {exc}") from exc
                skipped.append({"pair": i, "n": n, "reason": str(exc)})
                continue
            except NoSolutionError as exc:
                skipped.append({"pair": i, "n": n, "reason": str(exc)})
                continue
            rows.append({
                "n": n, "energy": arc.energy, "tof": arc.tof,
                "x_minus_x": xm[0], "x_minus_y": xm[1], "x_plus_x": xp[0], "x_plus_y": xp[1],
                "lambert_f": lambert_f(xm, xp), "action_J": arc.action_J, "action_F": arc.action_F,
                "y_minus_x": arc.y_minus[0], "y_minus_y": arc.y_minus[1],
                "y_plus_x": arc.y_plus[0], "y_plus_y": arc.y_plus[1],
            })
    _write_json(out / "lambert.json", {"provenance": provenance("lambert", config, "lambert"),
                                       "arcs": rows, "skipped": skipped})
    with open(out / "lambert.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LAMBERT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(row[k])) if k != "n" else row[k] for k in LAMBERT_FIELDS})
    log.info("lambert: %d arcs, %d skipped", len(rows), len(skipped))
    return EXIT_OK


# --- chain ----------------------------------------------------------------------

def _read_chain(path) -> CollisionChain:
    try:
        data = json.loads(Path(path).read_text())
        return CollisionChain.from_dict(data.get("chain", data))
    except OSError as exc:
        raise CliError(EXIT_INPUT, "chain_unreadable", str(exc)) from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, "chain_malformed", f"{path}: {exc}") from exc


def run_chain(config: dict, out: Path) -> tuple[int, CollisionChain | None]:
    cfg = config["chain"]
    if cfg["initial_chain"] is not None:
        initial = _read_chain(cfg["initial_chain"])
    else:
        try:
            initial = seed_from_restricted_limit(
                cfg["energy"], cfg["angular_momentum"], cfg["m"], cfg["n"], cfg["k1_pattern"],
                cfg["alpha1"], starts=cfg["starts"], seed=config["seed"], which=cfg["which"])
        except NoSolutionError as exc:
            raise CliError(EXIT_CONVERGENCE, "seeding_failed", str(exc)) from exc
        except ValueError as exc:
            raise CliError(EXIT_INPUT, "config_invalid", str(exc)) from exc
    prov = provenance("chain", config, "chain")
    log.info("chain: Newton search, variant %s", cfg["variant"])
    try:
        chain, cert = find_critical_chain(initial, cfg["variant"], tol_grad=cfg["tol_grad"],
                                          max_iter=cfg["max_iter"],
                                          screen_samples=cfg["screen_samples"])
    except DomainError as exc:
        raise CliError(EXIT_INPUT, "domain", str(exc)) from exc
    except ConvergenceError as exc:
        partial = exc.chain or initial
        _write_json(out / "chain.json", {"provenance": prov, "chain": partial.to_dict(),
                                         "converged": False, "history": exc.history})
        raise CliError(EXIT_CONVERGENCE, "not_converged", str(exc)) from exc
    _write_json(out / "chain.json", {"provenance": prov, "chain": chain.to_dict(),
                                     "converged": True})
    _write_json(out / "certificate.json", {"provenance": prov, "certificate": cert.to_dict()})
    if not cert.valid:
        raise CliError(EXIT_CERTIFICATE, "certificate_failed",
                       f"chain is not certified (nullity {cert.hessian_nullity})")
    log.info("chain: certified, period %.12g", chain.period)
    return EXIT_OK, chain


# --- shadow ---------------------------------------------------------------------

def _read_certificate(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(EXIT_INPUT, "certificate_missing", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, "certificate_malformed", f"{path}: {exc}") from exc
    cert = data.get("certificate", data)
    if not isinstance(cert, dict) or not cert.get("valid", False):
        raise CliError(EXIT_INPUT, "certificate_invalid", f"{path} does not certify the chain")
    return cert


def run_shadow(config: dict, out: Path, chain: CollisionChain | None = None) -> int:
    cfg = config["shadow"]
    workers = _threads()
    if chain is None:
        chain = _read_chain(cfg["chain"] or out / "chain.json")
        _read_certificate(cfg["certificate"] or out / "certificate.json")
    mus = sorted({float(m) for m in cfg["mu_sweep"]}, reverse=True)
    if any(mu >= cfg["rho"] for mu in mus):
        raise CliError(EXIT_INPUT, "config_invalid", "every mu must be smaller than rho")
    log.info("shadow: continuation over mu = %s", ", ".join(f"{m:g}" for m in mus))
    failure = None
    try:
        orbits = trace_orbits(chain, mus, cfg["rho"], cfg["variant"], cfg["tol"])
    except (ShootingError, ValueError, IntegrationError) as exc:
        orbits = getattr(exc, "partial", {})
        failure = exc
    solved = [mu for mu in mus if mu in orbits]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda mu: verify_shadowing(orbits[mu], chain), solved))
    report = {
        "provenance": provenance("shadow", config, "shadow"),
        "chain_period": chain.period,
        "chain_phi": chain.phi,
        "rows": rows,
        "summary": sweep_summary(rows) if rows else {},
        "failed": [mu for mu in mus if mu not in orbits],
    }
    if failure is not None:
        report["error"] = str(failure)
    _write_json(out / "shadow_report.json", report)
    write_sweep_csv(rows, out / "sweep.csv")
    if cfg["trajectories"]:
        for mu in solved:
            orbits[mu].write_csv(out / f"trajectory_mu_{mu:.3e}.csv")
    for row in rows:
        log.info("mu %.3e: residual %.2e sup %.3e min_delta/mu %.4f lambda1 %.4g",
                 row["mu"], row["residual"], row["sup_dist"], row["min_delta"] / row["mu"],
                 row["lambda1"])
    if failure is not None:
        raise CliError(EXIT_CONVERGENCE, "not_converged", str(failure))
    return EXIT_OK


def run_pipeline(config: dict, out: Path, lambert: bool) -> int:
    if lambert:
        run_lambert(config, out)
    _, chain = run_chain(config, out)
    return run_shadow(config, out, chain)


# --- entry point ----------------------------------------------------------------

def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _mu_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad mu list {text!r}") from exc
    if not values or not all(0.0 < v < 1.0 for v in values):
        raise argparse.ArgumentTypeError("mu values must lie in (0, 1)")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="second-species", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("lambert", "tabulate Lambert arcs"),
                       ("chain", "find and certify a collision chain"),
                       ("shadow", "solve shadowing orbits over a mu sweep"),
                       ("pipeline", "chain then shadow (and lambert if configured)")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", type=Path, help="JSON run configuration")
        cmd.add_argument("--out", type=Path, default=Path("."), help="output directory")
        cmd.add_argument("--seed", type=_seed, help="random seed (unsigned 64-bit)")
        cmd.add_argument("--mu-sweep", type=_mu_list, help="comma separated mu values")
        cmd.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def _report_error(err: CliError, out: Path) -> None:
    record = {"error": err.kind, "message": str(err), "exit_code": err.code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(_dumps(record))
    except OSError:
        pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    out = args.out
    try:
        config = load_config(args.config, args.seed, args.mu_sweep)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "lambert":
            return run_lambert(config, out)
        if args.command == "chain":
            return run_chain(config, out)[0]
        if args.command == "shadow":
            return run_shadow(config, out)
        user_has_lambert = False
        if args.config is not None:
            user_has_lambert = "lambert" in json.loads(args.config.read_text())
        return run_pipeline(config, out, user_has_lambert)
    except CliError as err:
        _report_error(err, out)
        return err.code
