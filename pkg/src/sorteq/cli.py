"""Command-line front end: solve, simulate, measure, calibrate, counterfact.

Exit codes follow sysexits: 0 success, 2 parameters outside the model's
domain, 64 usage error, 65 bad input data, 66 missing input, 70 internal
numerical failure, 73 output cannot be created.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import bootstrap_calibrate, identify, replicate_seeds, run_replicates
from .counterfactual import OUTCOME_NAMES, decompose
from .errors import (ConvergenceError, DomainError, PanelError, QuadratureError, ReplicateFailureError,
                     SortEqError)
from .measure import measure_moments, resample
from .model import PARAM_NAMES, PRIMITIVES, ModelParams, solve_equilibrium
from .moments import MomentSet, akm_report, targeted_moments, wage_report, welfare_report
from .simulate import read_panel_csv, simulate_panel, write_panel_csv

EX_OK, EX_DOMAIN, EX_USAGE, EX_DATAERR, EX_NOINPUT, EX_SOFTWARE, EX_CANTCREAT = 0, 2, 64, 65, 66, 70, 73

EPILOG = """exit codes:
  0   success
  2   parameters outside the model's domain
  64  usage error (unknown or missing option)
  65  malformed input data (row number reported when known)
  66  input file not found
  70  numerical failure (solver or quadrature)
  73  output file cannot be created

Options can also be given in a JSON file via --json; flags on the command
line take precedence.  SORTEQ_THREADS sets the default for --threads."""

DEFAULTS = {
    "solve": {"ln_A": 0.0},
    "simulate": {"ln_A": 0.0, "min_firm_size": 5, "seed": 0, "year_label": 0, "latent": True},
    "measure": {"min_firm_size": 5, "year_label": 0},
    "calibrate": {"min_firm_size": 5, "seed": 0, "replicates": 200, "year_label": 0},
    "counterfact": {},
}
REQUIRED = {
    "solve": ("sigma_x", "sigma_theta", "c_a", "c_l"),
    "simulate": ("sigma_x", "sigma_theta", "c_a", "c_l", "workers", "firms", "out"),
    "measure": ("panel",),
    "calibrate": (),
    "counterfact": ("start", "end"),
}


class UsageError(Exception):
    pass


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _param_flags(p):
    g = p.add_argument_group("model parameters")
    g.add_argument("--sigma-x", dest="sigma_x", type=float, help="std. dev. of worker skill")
    g.add_argument("--sigma-theta", dest="sigma_theta", type=float, help="std. dev. of firm productivity")
    g.add_argument("--c-a", dest="c_a", type=float, help="amenity cost convexity")
    g.add_argument("--c-l", dest="c_l", type=float, help="span-of-control cost convexity")
    g.add_argument("--ln-a", dest="ln_A", type=float, help="log TFP (default 0)")


def _common(p, *, out_help="output path (default: stdout)"):
    p.add_argument("--json", dest="config", metavar="FILE", help="JSON config file; flags override its values")
    p.add_argument("--out", help=out_help)
    p.add_argument("--threads", type=int, help="worker threads (default: $SORTEQ_THREADS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sorteq", description=__doc__.splitlines()[0], epilog=EPILOG,
                     formatter_class=argparse.RawDescriptionHelpFormatter, argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    kw = dict(argument_default=argparse.SUPPRESS, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)

    p = sub.add_parser("solve", help="solve the equilibrium and print all closed-form moments", **kw)
    _param_flags(p)
    _common(p)

    p = sub.add_parser("simulate", help="simulate a matched employer-employee panel", **kw)
    _param_flags(p)
    _common(p, out_help="panel CSV to write (required)")
    p.add_argument("--workers", type=int, help="number of workers")
    p.add_argument("--firms", type=int, help="number of firms")
    p.add_argument("--min-firm-size", dest="min_firm_size", type=int, help="size floor (default 5)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--firm-out", dest="firm_out", help="optional firm CSV (firm_id,theta,size)")
    p.add_argument("--year-label", dest="year_label", type=int)
    p.add_argument("--no-latent", dest="latent", action="store_false", help="omit x, h, theta columns")

    p = sub.add_parser("measure", help="measure the targeted moments on a panel CSV", **kw)
    _common(p, out_help="JSON or .csv output (default: JSON on stdout)")
    p.add_argument("--panel", help="panel CSV")
    p.add_argument("--min-firm-size", dest="min_firm_size", type=int)
    p.add_argument("--year-label", dest="year_label", type=int)

    p = sub.add_parser("calibrate", help="identify parameters from moments or bootstrap a panel", **kw)
    _common(p)
    p.add_argument("--panel", help="panel CSV to bootstrap")
    p.add_argument("--moments", help="MomentSet JSON to invert exactly (no bootstrap)")
    p.add_argument("--replicates", type=int, help="bootstrap replicates (default 200)")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-firm-size", dest="min_firm_size", type=int)
    p.add_argument("--draws-out", dest="draws_out", help="CSV of per-replicate estimates")
    p.add_argument("--compare-panel", dest="compare_panel",
                   help="second (end) panel; calibrate both per replicate and attribute the changes")

    p = sub.add_parser("counterfact", help="attribute outcome changes between two parameter files", **kw)
    _common(p, out_help="JSON or .csv output (default: JSON on stdout)")
    p.add_argument("--start", help="JSON file with the start parameters")
    p.add_argument("--end", help="JSON file with the end parameters")
    return parser


# ---------------------------------------------------------------------------
# config resolution and output


def _load_json(path, what="config"):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}", EX_NOINPUT) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EX_DATAERR) from None


def resolve_config(ns: argparse.Namespace) -> tuple[dict, dict]:
    """Merge defaults, the JSON file and flags; return ``(config, source per key)``."""
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    file_cfg = {}
    if getattr(ns, "config", None):
        raw = _load_json(ns.config)
        if not isinstance(raw, dict):
            raise CliError(f"{ns.config}: config must be a JSON object", EX_DATAERR)
        raw = {**raw.pop("params", {}), **raw} if isinstance(raw.get("params"), dict) else raw
        file_cfg = {k.replace("-", "_"): v for k, v in raw.items()}
        if "ln_a" in file_cfg:
            file_cfg["ln_A"] = file_cfg.pop("ln_a")
    config, sources = {}, {}
    for layer, name in ((DEFAULTS[ns.command], "default"), (file_cfg, "json"), (flags, "flag")):
        for k, v in layer.items():
            config[k], sources[k] = v, name
    if "threads" not in config:
        env = os.environ.get("SORTEQ_THREADS")
        config["threads"], sources["threads"] = (int(env), "env") if env else (os.cpu_count() or 1, "default")
    missing = [k for k in REQUIRED[ns.command] if config.get(k) is None]
    if missing:
        flags_txt = ", ".join("--" + k.replace("_", "-").lower() for k in missing)
        raise UsageError(f"sorteq {ns.command}: missing required option(s): {flags_txt}")
    return config, sources


def _params_from(config) -> ModelParams:
    return ModelParams(**{k: config[k] for k in PARAM_NAMES})


def _header(command, config, sources):
    return {"command": command, "version": __version__, "config": config, "sources": sources,
            "seed": config.get("seed")}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EX_CANTCREAT) from None


def _sidecar_log(path, command, started):
    _write_text(f"{path}.log", _dump({
        "command": command, "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "elapsed_s": round(time.time() - started, 3)}))


def emit_json(payload, out, command, started):
    if out is None:
        sys.stdout.write(_dump(payload))
        return
    _write_text(out, _dump(payload))
    _sidecar_log(out, command, started)


def emit_csv(text, header, out, command, started):
    _write_text(out, text)
    _write_text(f"{out}.header.json", _dump(header))
    _sidecar_log(out, command, started)


def _read_panel(path, config):
    try:
        panel = read_panel_csv(path, year_label=int(config.get("year_label", 0)))
    except FileNotFoundError:
        raise CliError(f"panel file not found: {path}", EX_NOINPUT) from None
    except UnicodeDecodeError as exc:
        raise CliError(f"{path}: not UTF-8 ({exc})", EX_DATAERR) from None
    return panel


# ---------------------------------------------------------------------------
# commands


def cmd_solve(config, header, started):
    params = _params_from(config)
    eq = solve_equilibrium(params)
    payload = {"header": header, "params": params.to_dict(), "equilibrium": eq.to_dict(),
               "welfare": welfare_report(eq, params).to_dict(), "wages": wage_report(eq, params).to_dict(),
               "moments": targeted_moments(eq, params).to_dict(), "akm": akm_report(eq, params).to_dict()}
    emit_json(payload, config.get("out"), "solve", started)


def cmd_simulate(config, header, started):
    params = _params_from(config)
    eq = solve_equilibrium(params)
    panel = simulate_panel(params, eq, int(config["workers"]), int(config["firms"]),
                           int(config["min_firm_size"]), int(config["seed"]), year_label=int(config["year_label"]))
    out = config["out"]
    try:
        write_panel_csv(panel, out, latent=bool(config["latent"]), firm_path=config.get("firm_out"))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}", EX_CANTCREAT) from None
    header = {**header, "equilibrium": eq.to_dict(), "n_workers": panel.n_workers, "n_firms": panel.n_firms}
    _write_text(f"{out}.header.json", _dump(header))
    _sidecar_log(out, "simulate", started)


def cmd_measure(config, header, started):
    panel = _read_panel(config["panel"], config)
    moments = measure_moments(panel, int(config["min_firm_size"]))
    out = config.get("out")
    if out is not None and str(out).endswith(".csv"):
        row = moments.to_dict()
        keys = ["year_label"] + [k for k in row if k != "year_label"]
        text = ",".join(keys) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v)
                                               for v in (row[k] for k in keys)) + "\n"
        emit_csv(text, header, out, "measure", started)
    else:
        emit_json({"header": header, "moments": moments.to_dict()}, out, "measure", started)


def _draws_csv(result) -> str:
    cols = list(PARAM_NAMES) + ["sigma"]
    lines = ["replicate," + ",".join(cols)]
    for i, row in enumerate(result.replicate_matrix()):
        lines.append(f"{i}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _summary(values: np.ndarray):
    lo, hi = np.percentile(values, (2.5, 97.5), axis=0)
    return values.mean(axis=0), lo, hi


def bootstrap_attribution(panel_start, panel_end, n_replicates, seed, min_firm_size, threads):
    """Calibrate both panels on paired replicates and decompose each pair."""
    seeds_a = replicate_seeds(seed, n_replicates, stream=0)
    seeds_b = replicate_seeds(seed, n_replicates, stream=1)

    def one(_, pair):
        sa, sb = pair
        pa, _sa = identify(measure_moments(resample(panel_start, sa), min_firm_size).moment_set())
        pb, _sb = identify(measure_moments(resample(panel_end, sb), min_firm_size).moment_set())
        return decompose(pa, pb)

    outcomes = run_replicates(None, list(zip(seeds_a, seeds_b)), one, threads=threads)
    tables = [t for ok, t in outcomes if ok]
    n_failed = n_replicates - len(tables)
    if 2 * n_failed > n_replicates:
        raise ReplicateFailureError(f"{n_failed} of {n_replicates} paired replicates failed")
    change = np.array([t.change for t in tables])
    share = np.array([t.share for t in tables])
    total = np.array([t.total for t in tables])
    out = {"n_replicates": n_replicates, "n_failed": n_failed, "outcomes": list(OUTCOME_NAMES)}
    for name, arr in (("total", total), ("change", change)):
        mean, lo, hi = _summary(arr)
        out[name] = {"mean": mean.tolist(), "ci_low": lo.tolist(), "ci_high": hi.tolist()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-undefined share columns
        share_mean = np.nanmean(share, axis=0)
    out["share_pct_mean"] = np.where(np.isnan(share_mean), None, share_mean).tolist()
    out["primitives"] = list(PRIMITIVES)
    return out


def cmd_calibrate(config, header, started):
    threads = max(1, int(config["threads"]))
    if config.get("moments") and not config.get("panel"):
        raw = _load_json(config["moments"], "moments")
        raw = raw.get("moments", raw) if isinstance(raw, dict) else raw
        try:
            moments = MomentSet.from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"{config['moments']}: not a moment set ({exc})", EX_DATAERR) from None
        params, sigma = identify(moments)
        emit_json({"header": header, "params": params.to_dict(), "sigma": sigma}, config.get("out"),
                  "calibrate", started)
        return
    if not config.get("panel"):
        raise UsageError("sorteq calibrate: one of --panel or --moments is required")
    panel = _read_panel(config["panel"], config)
    result = bootstrap_calibrate(panel, int(config["replicates"]), int(config["seed"]),
                                 int(config["min_firm_size"]), threads=threads)
    payload = {"header": header, "calibration": result.to_dict()}
    if config.get("compare_panel"):
        end_panel = _read_panel(config["compare_panel"], config)
        payload["attribution"] = bootstrap_attribution(panel, end_panel, int(config["replicates"]),
                                                       int(config["seed"]), int(config["min_firm_size"]), threads)
    if config.get("draws_out"):
        emit_csv(_draws_csv(result), header, config["draws_out"], "calibrate", started)
    emit_json(payload, config.get("out"), "calibrate", started)


def _load_params(path) -> ModelParams:
    raw = _load_json(path, "parameter")
    if isinstance(raw, dict) and isinstance(raw.get("params"), dict):
        raw = raw["params"]
    if not isinstance(raw, dict):
        raise CliError(f"{path}: expected a JSON object of parameters", EX_DATAERR)
    try:
        return ModelParams.from_dict(raw)
    except TypeError as exc:
        raise CliError(f"{path}: {exc}", EX_DATAERR) from None


def cmd_counterfact(config, header, started):
    table = decompose(_load_params(config["start"]), _load_params(config["end"]))
    out = config.get("out")
    if out is not None and str(out).endswith(".csv"):
        emit_csv(table.to_csv(), header, out, "counterfact", started)
    else:
        emit_json({"header": header, "table": table.to_dict()}, out, "counterfact", started)


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "measure": cmd_measure, "calibrate": cmd_calibrate,
            "counterfact": cmd_counterfact}


def main(argv=None) -> int:
    parser = build_parser()
    started = time.time()
    try:
        ns = parser.parse_args(argv)
        if getattr(ns, "command", None) is None:
            raise UsageError(parser.format_usage().strip())
        config, sources = resolve_config(ns)
        COMMANDS[ns.command](config, _header(ns.command, config, sources), started)
        return EX_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EX_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except PanelError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EX_DATAERR
    except ReplicateFailureError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EX_DATAERR
    except (ConvergenceError, QuadratureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EX_SOFTWARE
    except (DomainError, SortEqError, ArithmeticError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EX_DOMAIN
    except (TypeError, ValueError) as exc:
        # config values of the wrong type
        print(f"usage error: {exc}", file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
