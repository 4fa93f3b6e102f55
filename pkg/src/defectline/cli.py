"""Command-line runner: ``defectline SUBCOMMAND --config PATH [--seed U64] [--workers N] [--out DIR]``.

Configuration files are line oriented ``key = value`` with ``#`` comments
and dotted block names.  Grids are written ``start:stop:step`` (both ends
included) or as comma-separated lists.  Every output file starts with one
JSON line holding the resolved configuration, its hash and the package
version; the rest is CSV (or JSON lines for ``geometry``).
"""

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

SUBCOMMANDS = ("connectivity", "xi-scan", "gap-curve", "prefactor", "geometry", "pinning",
               "renewal-demo", "verify")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line number when known."""

    def __init__(self, message, key=None, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.key = key
        self.line = line


def parse_grid(text):
    """``a:b:step`` (inclusive) or ``x, y, z`` to a list of floats."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} is not start:stop:step")
        a, b, step = (float(x) for x in parts)
        if step <= 0 or b < a:
            raise ValueError(f"grid {text!r} needs step > 0 and stop >= start")
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + i * step, 12) for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


def _int_grid(text):
    vals = parse_grid(text)
    if any(v != int(v) for v in vals):
        raise ValueError(f"{text!r} must contain integers")
    return [int(v) for v in vals]


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _prob(lo_open=False, hi_open=False):
    def check(v):
        lo_ok = v > 0 if lo_open else v >= 0
        hi_ok = v < 1 if hi_open else v <= 1
        return lo_ok and hi_ok
    return check


def _probs(lo_open=False, hi_open=False):
    one = _prob(lo_open, hi_open)
    return lambda vs: len(vs) > 0 and all(one(v) for v in vs)


# key -> (parser, validator, description of the valid range, default)
SCHEMA = {
    "model.d": (int, lambda v: v >= 2, "an integer >= 2", 2),
    "model.p": (float, _prob(hi_open=True), "in [0, 1)", None),
    "model.p_line": (float, _prob(), "in [0, 1]", None),
    "model.p_line_grid": (parse_grid, _probs(True, True), "a grid inside (0, 1)", None),
    "geometry.n": (_int_grid, lambda v: len(v) > 0 and min(v) >= 1, "positive integers", None),
    "geometry.w": (int, lambda v: v >= 0, ">= 0", None),
    "geometry.margin": (int, lambda v: v >= 0, ">= 0", None),
    "geometry.samples": (int, lambda v: v >= 1, ">= 1", 1000),
    "budget.replicas": (int, lambda v: v >= 1, ">= 1", 100000),
    "budget.workers": (int, lambda v: v >= 1, ">= 1", None),
    "run.seed": (_u64, lambda v: True, "an unsigned 64-bit integer", None),
    "output.dir": (str, lambda v: len(v) > 0, "a path", "."),
    "pinning.d": (int, lambda v: v in (1, 2), "1 or 2", 1),
    "pinning.eps_grid": (parse_grid, lambda v: len(v) > 0 and min(v) >= 0, "a grid >= 0",
                         [0.01, 0.1, 0.5, 1.0]),
    "pinning.nmax": (int, lambda v: v >= 2, ">= 2", None),
    "pinning.delta_grid": (parse_grid, _probs(hi_open=True), "a grid in [0, 1)", None),
    "pinning.N": (int, lambda v: v >= 1, ">= 1", 200),
    "pinning.samples": (int, lambda v: v >= 1, ">= 1", 10**6),
    "renewal.law": (str, lambda v: v in ("geometric", "power"), "geometric or power",
                    "geometric"),
    "renewal.horizon": (int, lambda v: v >= 1, ">= 1", 1000),
    "renewal.exponent": (float, lambda v: v > 1, "> 1", 3.0),
    "renewal.support": (int, lambda v: v >= 1, ">= 1", 1000),
}


@dataclass
class ExperimentConfig:
    values: dict
    lines: dict = field(default_factory=dict)

    def get(self, key):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][3]

    def require(self, *keys):
        missing = [k for k in keys if self.get(k) is None]
        if missing:
            raise ConfigError(f"missing required key(s): {', '.join(missing)}", key=missing[0])

    def resolved(self):
        out = {k: entry[3] for k, entry in SCHEMA.items() if entry[3] is not None}
        out.update(self.values)
        return dict(sorted(out.items()))

    def digest(self):
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text, seed=None):
    """Parse and validate a configuration; ``seed`` (if given) overrides ``run.seed``.

    A missing seed is an error: there is no time-based default.
    """
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})",
                              key=key, line=lineno)
        parser, valid, desc, _ = SCHEMA[key]
        try:
            parsed = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {val!r} ({exc})", key=key, line=lineno) from None
        if not valid(parsed):
            raise ConfigError(f"{key} = {val} is out of range; must be {desc}", key=key,
                              line=lineno)
        values[key] = parsed
        lines[key] = lineno
    if seed is not None:
        values["run.seed"] = _u64(str(seed))
    cfg = ExperimentConfig(values, lines)
    cfg.require("run.seed")
    return cfg


# -- subcommands ------------------------------------------------------------------

def _header(cfg, subcommand, workers):
    resolved = cfg.resolved()
    resolved["budget.workers"] = workers
    return json.dumps({"artifact": "defectline", "version": __version__,
                       "subcommand": subcommand, "config_hash": cfg.digest(),
                       "config": resolved}, sort_keys=True)


class _Output:
    def __init__(self, out_dir, header):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = header
        self.files = []

    def write(self, name, body):
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header + "\n")
            fh.write(body)
        self.files.append(str(path))
        return path


def _percolation_args(cfg):
    cfg.require("model.p", "geometry.n")
    return dict(w=cfg.get("geometry.w"), margin=cfg.get("geometry.margin"))


def _cmd_connectivity(cfg, out, workers):
    from .estimators import connectivity_series
    from .lattice import PercParams
    cfg.require("model.p_line")
    params = PercParams(cfg.get("model.d"), cfg.get("model.p"), cfg.get("model.p_line"))
    res = connectivity_series(params, cfg.get("geometry.n"), cfg.get("budget.replicas"),
                              cfg.get("run.seed"), workers=workers, **_percolation_args(cfg))
    out.write("connectivity.csv", res.to_csv())
    return {"rows": len(res.ns)}


def _grid(cfg):
    grid = cfg.get("model.p_line_grid")
    if grid is None:
        cfg.require("model.p_line")
        grid = [cfg.get("model.p_line")]
    return grid


def _cmd_xi_scan(cfg, out, workers):
    from .estimators import xi_scan
    kw = _percolation_args(cfg)
    scan = xi_scan(cfg.get("model.p"), _grid(cfg), cfg.get("geometry.n"),
                   cfg.get("budget.replicas"), cfg.get("run.seed"), d=cfg.get("model.d"),
                   workers=workers, **kw)
    out.write("xi_scan.csv", scan.to_csv())
    out.write("connectivity.csv", scan.connectivity_csv())
    failed = {pt.p_line: pt.error for pt in scan.points if pt.error}
    return {"rows": len(scan.points), "failed_points": failed, "failed": len(failed)}


def _cmd_gap_curve(cfg, out, workers):
    from .estimators import gap_curve, write_csv
    kw = _percolation_args(cfg)
    curve = gap_curve(cfg.get("model.p"), _grid(cfg), cfg.get("geometry.n"),
                      cfg.get("budget.replicas"), cfg.get("run.seed"), d=cfg.get("model.d"),
                      workers=workers, **kw)
    out.write("gap_curve.csv", write_csv(None, ("p_line", "delta", "gap", "gap_se", "censored"),
                                         curve.rows()))
    out.write("xi_scan.csv", curve.scan.to_csv())
    return {"slope": curve.slope, "slope_se": curve.slope_se}


def _cmd_prefactor(cfg, out, workers):
    from .estimators import prefactor_exponent, write_csv
    cfg.require("model.p_line")
    kw = _percolation_args(cfg)
    res = prefactor_exponent(cfg.get("model.p"), cfg.get("model.p_line"), cfg.get("geometry.n"),
                             cfg.get("budget.replicas"), cfg.get("run.seed"),
                             d=cfg.get("model.d"), workers=workers, **kw)
    out.write("connectivity.csv", res.series.to_csv())
    out.write("prefactor.csv", write_csv(None, ("p", "p_line", "kappa_hat", "kappa_se", "ci_lo",
                                                "ci_hi", "xi_hat", "xi_se"),
                                         [(cfg.get("model.p"), cfg.get("model.p_line"),
                                           res.kappa, res.kappa_se, *res.interval,
                                           res.fit.xi_hat, res.fit.xi_se)]))
    return {"kappa": res.kappa, "interval": list(res.interval)}


def _cmd_geometry(cfg, out, workers):
    from .geometry import geometry_samples, renewal_density
    from .lattice import PercParams
    cfg.require("model.p", "model.p_line", "geometry.n")
    n = max(cfg.get("geometry.n"))
    params = PercParams(cfg.get("model.d"), cfg.get("model.p"), cfg.get("model.p_line"))
    samples = geometry_samples(params, n, cfg.get("geometry.samples"), cfg.get("run.seed"),
                               w=cfg.get("geometry.w"), margin=cfg.get("geometry.margin"))
    out.write("geometry.jsonl", "".join(s.to_json() + "\n" for s in samples))
    dens = renewal_density(samples, n)
    return {"renewal_density": dens.mean, "renewal_density_se": dens.stderr}


def _cmd_pinning(cfg, out, workers):
    from .estimators import write_csv
    from . import renewal
    d = cfg.get("pinning.d")
    law = renewal.first_return_law(d)
    rows = [renewal.pinning_free_energy(e, law, nmax=cfg.get("pinning.nmax")).row()
            for e in cfg.get("pinning.eps_grid")]
    out.write("free_energy.csv", write_csv(None, renewal.FREE_ENERGY_HEADER, rows))
    deltas = cfg.get("pinning.delta_grid")
    if deltas:
        probes = renewal.local_time_tail_probe(d, deltas, cfg.get("pinning.N"),
                                               cfg.get("pinning.samples"), cfg.get("run.seed"))
        out.write("tail_probe.csv", write_csv(None, renewal.TAIL_PROBE_HEADER,
                                              [p.row() for p in probes]))
    return {"rows": len(rows)}


def _cmd_renewal_demo(cfg, out, workers):
    from .estimators import write_csv
    from . import renewal
    horizon = cfg.get("renewal.horizon")
    if cfg.get("renewal.law") == "geometric":
        b = [0.5**k for k in range(1, 1075)]
    else:
        k = np.arange(1, cfg.get("renewal.support") + 1, dtype=float)
        b = k ** -cfg.get("renewal.exponent")
    seq, limit = renewal.renewal_limit_check(b, horizon, tol=math.inf)
    root = renewal.radius_root(b)
    out.write("renewal.csv", write_csv(None, ("n", "scaled_a", "limit"),
                                       [(n, float(v), limit) for n, v in enumerate(seq)]))
    return {"r": root.r, "limit": limit, "final": float(seq[-1])}


def _cmd_verify(cfg, out, workers):
    from .verification import run_battery
    recs = run_battery()
    report = "".join(json.dumps(r.as_dict(), sort_keys=True, default=float) + "\n" for r in recs)
    out.write("verify.jsonl", report)
    for r in recs:
        print(r.line())
    failed = sum(not r.passed for r in recs)
    return {"checks": len(recs), "failed": failed}


COMMANDS = {
    "connectivity": _cmd_connectivity,
    "xi-scan": _cmd_xi_scan,
    "gap-curve": _cmd_gap_curve,
    "prefactor": _cmd_prefactor,
    "geometry": _cmd_geometry,
    "pinning": _cmd_pinning,
    "renewal-demo": _cmd_renewal_demo,
    "verify": _cmd_verify,
}


def run(subcommand, config, workers=None, out_dir=None):
    """Run one subcommand; returns ``(exit_status, summary)``."""
    from .estimators import resolve_workers
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    workers = resolve_workers(workers if workers is not None else config.get("budget.workers"))
    out = _Output(out_dir or config.get("output.dir"), _header(config, subcommand, workers))
    summary = COMMANDS[subcommand](config, out, workers)
    summary["files"] = out.files
    status = 1 if summary.get("failed") else 0
    return status, summary


def _error_json(exc):
    err = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "line"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    return json.dumps(err, sort_keys=True)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="defectline", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="configuration file")
    ap.add_argument("--seed", help="64-bit seed, overrides run.seed")
    ap.add_argument("--workers", type=int, help="worker processes (default $DEFECTLINE_WORKERS or 1)")
    ap.add_argument("--out", help="output directory (default output.dir or .)")
    args = ap.parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        seed = args.seed
        if seed is None and args.config is None and args.subcommand in ("verify", "renewal-demo"):
            seed = 0  # these subcommands draw no random numbers
        cfg = parse_config(text, seed=seed)
        status, summary = run(args.subcommand, cfg, workers=args.workers, out_dir=args.out)
    except Exception as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2
    print(json.dumps({"status": status, **summary}, sort_keys=True, default=float))
    return status


if __name__ == "__main__":
    sys.exit(main())
