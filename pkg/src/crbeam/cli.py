"""Command line entry point: scenario files in, CSV rows out."""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields, replace

import numpy as np

from .errors import ParseError, ValidationError
from .experiments import (
    COLUMNS,
    EXPERIMENTS,
    ResultRow,
    Scenario,
    Tolerances,
    preset,
    run_experiment,
)
from .network import NetworkConfig, db_to_linear

__all__ = ["parse_scenario", "load_scenario", "run_experiment", "write_csv", "read_csv", "main"]

log = logging.getLogger("crbeam")

TOP_KEYS = {"experiment", "network", "seeds", "gamma_override", "tolerances"}
INT_FIELDS = ("Ms", "Mp", "Ns", "Np")
VECTOR_FIELDS = ("alpha", "rho", "beta", "sigma_s")
DB_FIELDS = ("P0", "beta", "sigma_s", "primary_power")
NETWORK_KEYS = set(INT_FIELDS) | set(VECTOR_FIELDS) | {"P0", "primary_power"} \
    | {f + "_db" for f in DB_FIELDS}
TOL_INT = ("max_outer", "max_inner", "max_rounds")
TOL_REAL = ("bisection_delta", "conv_eps")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x):
    return (isinstance(x, (int, float)) and not isinstance(x, bool)
            and math.isfinite(x))


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ParseError("duplicate key", field=k)
        out[k] = v
    return out


def _positive_vector(value, n, name, errors, allow_zero=False):
    """Scalar or length-``n`` list of positive reals; appends problems to ``errors``."""
    vals = value if isinstance(value, list) else [value]
    if isinstance(value, list) and len(value) != n:
        errors.append(f"{name}: expected {n} entries, got {len(value)}")
        return None
    if not all(_is_real(v) for v in vals):
        errors.append(f"{name}: entries must be finite numbers")
        return None
    if any(v < 0 or (v == 0 and not allow_zero) for v in vals):
        errors.append(f"{name}: entries must be {'nonnegative' if allow_zero else 'positive'}")
        return None
    return np.asarray(value, dtype=float)


def _network(raw, base, errors):
    unknown = sorted(set(raw) - NETWORK_KEYS)
    errors.extend(f"network.{k}: unknown field" for k in unknown)
    vals = {f.name: getattr(base, f.name) for f in fields(NetworkConfig)}
    for name in INT_FIELDS:
        if name in raw:
            v = raw[name]
            low = 0 if name == "Mp" else 1
            if not _is_int(v) or v < low:
                errors.append(f"network.{name}: expected an integer >= {low}")
            else:
                vals[name] = v
    # dB entries are converted here; giving both spellings is ambiguous
    for name in DB_FIELDS:
        if name in raw and name + "_db" in raw:
            errors.append(f"network.{name}: given both linear and _db forms")
        elif name + "_db" in raw:
            v = raw[name + "_db"]
            ok = _is_real(v) or (isinstance(v, list) and all(_is_real(x) for x in v))
            if not ok:
                errors.append(f"network.{name}_db: entries must be finite numbers")
            else:
                raw = {**raw, name: db_to_linear(v).tolist()}
    if "P0" in raw:
        v = raw["P0"]
        if not _is_real(v) or v <= 0:
            errors.append("network.P0: expected a positive number")
        else:
            vals["P0"] = float(v)
    if "primary_power" in raw:
        v = raw["primary_power"]
        if not _is_real(v) or v < 0:
            errors.append("network.primary_power: expected a nonnegative number")
        else:
            vals["primary_power"] = float(v)
    sizes = {"alpha": vals["Ms"], "rho": vals["Ms"], "sigma_s": vals["Ms"], "beta": vals["Mp"]}
    for name in VECTOR_FIELDS:
        if name in raw:
            vals[name] = _positive_vector(raw[name], sizes[name], f"network.{name}", errors)
        elif len(getattr(base, name)) != sizes[name]:
            # the preset vector no longer fits the overridden dimension
            vals[name] = None
    return vals


def _seeds(raw, errors):
    if isinstance(raw, dict):
        extra = sorted(set(raw) - {"start", "count"})
        errors.extend(f"seeds.{k}: unknown field" for k in extra)
        start, count = raw.get("start", 0), raw.get("count", 20)
        if not (_is_int(start) and start >= 0 and _is_int(count) and count >= 1):
            errors.append("seeds: start must be >= 0 and count >= 1")
            return None
        return tuple(range(start, start + count))
    if not isinstance(raw, list) or not raw:
        errors.append("seeds: expected a non-empty list or {start, count}")
        return None
    if not all(_is_int(s) and s >= 0 for s in raw):
        errors.append("seeds: entries must be nonnegative integers")
        return None
    if len(set(raw)) != len(raw):
        errors.append("seeds: duplicate entries")
        return None
    return tuple(raw)


def _tolerances(raw, errors):
    if not isinstance(raw, dict):
        errors.append("tolerances: expected an object")
        return Tolerances()
    errors.extend(f"tolerances.{k}: unknown field"
                  for k in sorted(set(raw) - set(TOL_INT) - set(TOL_REAL)))
    vals = {}
    for name in TOL_REAL:
        if name in raw:
            if not _is_real(raw[name]) or raw[name] <= 0:
                errors.append(f"tolerances.{name}: expected a positive number")
            else:
                vals[name] = float(raw[name])
    for name in TOL_INT:
        if name in raw:
            if not _is_int(raw[name]) or raw[name] < 1:
                errors.append(f"tolerances.{name}: expected a positive integer")
            else:
                vals[name] = raw[name]
    return Tolerances(**vals)


def scenario_from_dict(data, experiment=None):
    """Validate a decoded scenario; every problem is reported at once."""
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    errors = [f"{k}: unknown field" for k in sorted(set(data) - TOP_KEYS)]
    exp = data.get("experiment", experiment)
    if exp not in EXPERIMENTS:
        errors.append(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {exp!r}")
        raise ValidationError(errors)
    if experiment is not None and exp != experiment:
        errors.append(f"experiment: file says {exp!r} but {experiment!r} was requested")
    base = preset(exp)
    net_raw = data.get("network", {})
    if not isinstance(net_raw, dict):
        errors.append("network: expected an object")
        net_raw = {}
    vals = _network(net_raw, base.network, errors)
    seeds = _seeds(data["seeds"], errors) if "seeds" in data else base.seeds
    tol = _tolerances(data.get("tolerances", {}), errors)
    gamma = None
    if data.get("gamma_override") is not None:
        gamma = _positive_vector(data["gamma_override"], vals["Ms"], "gamma_override", errors)
    if errors:
        raise ValidationError(errors)
    try:
        cfg = NetworkConfig(**vals)
    except ValueError as exc:
        raise ValidationError([f"network: {exc}"]) from None
    return Scenario(exp, cfg, seeds, gamma, tol)


def parse_scenario(path, experiment=None):
    """Read and validate a JSON scenario file.

    Missing network fields come from the experiment preset, so a file naming
    only ``Ms`` and ``Mp`` is complete.  Keys ending in ``_db`` are converted
    to linear scale.
    """
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    return scenario_from_dict(data, experiment)


def load_scenario(experiment, path=None, seed_offset=0, tol=None, n_seeds=None):
    """Scenario for a subcommand with command-line overrides applied."""
    sc = parse_scenario(path, experiment) if path else preset(experiment)
    if n_seeds is not None:
        sc = replace(sc, seeds=tuple(range(n_seeds)))
    if seed_offset:
        sc = replace(sc, seeds=tuple(s + seed_offset for s in sc.seeds))
    if tol is not None:
        sc = replace(sc, tolerances=replace(sc.tolerances, bisection_delta=tol))
    return sc


# ---------------------------------------------------------------------------
# CSV


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return "%.12g" % v
    return str(v)


def write_csv(rows, path):
    """Header plus one line per row; ``path`` may be ``-`` for stdout."""
    fh = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    finally:
        if fh is not sys.stdout:
            fh.close()


def read_csv(path):
    """Inverse of :func:`write_csv`."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(
                seed=int(rec["seed"]),
                experiment=rec["experiment"],
                method=rec["method"],
                min_rate=float(rec["min_rate"]),
                sum_rate=float(rec["sum_rate"]),
                sum_power=float(rec["sum_power"]),
                feasible=rec["feasible"] == "true",
                iterations=int(rec["iterations"]),
                wall_time_ms=float(rec["wall_time_ms"]) if rec["wall_time_ms"] else None,
            ))
    return rows


def write_message_log(sink, path):
    with open(path, "w") as fh:
        for seed, runlog in sink:
            for m in runlog.ordered():
                fh.write(json.dumps({"seed": seed, **m.record()}) + "\n")


# ---------------------------------------------------------------------------
# argument handling


def build_parser():
    p = argparse.ArgumentParser(prog="crbeam", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run",) + EXPERIMENTS:
        sp = sub.add_parser(name, help="run the experiment named in the scenario file"
                            if name == "run" else f"run the {name} experiment")
        sp.add_argument("--scenario", required=name == "run", help="JSON scenario file")
        sp.add_argument("--out", default="-", help="CSV output path (default stdout)")
        sp.add_argument("--seed-offset", type=int, default=0)
        sp.add_argument("--tol", type=float, help="bisection tolerance on the rate scale")
        sp.add_argument("--seeds", type=int, help="use seeds 0..N-1")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--timing", action="store_true", help="fill the wall_time_ms column")
        sp.add_argument("--message-log", help="JSONL export of distributed runs "
                        "(powermin and ugd_alloc only)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    experiment = None if args.command == "run" else args.command
    try:
        if args.tol is not None and not args.tol > 0:
            raise ValidationError(["--tol: expected a positive number"])
        if args.seeds is not None and args.seeds < 1:
            raise ValidationError(["--seeds: expected a positive integer"])
        if args.seed_offset < 0:
            raise ValidationError(["--seed-offset: expected a nonnegative integer"])
        sc = load_scenario(experiment, args.scenario, args.seed_offset, args.tol, args.seeds)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"crbeam: {exc}", file=sys.stderr)
        return 2
    sink = None
    if args.message_log:
        if sc.experiment in ("powermin", "ugd_alloc"):
            sink = []
        else:
            log.warning("--message-log is ignored for %s", sc.experiment)
    rows = run_experiment(sc, workers=args.workers, message_sink=sink, timing=args.timing)
    write_csv(rows, args.out)
    if sink is not None:
        write_message_log(sink, args.message_log)
    return 0


if __name__ == "__main__":
    sys.exit(main())
