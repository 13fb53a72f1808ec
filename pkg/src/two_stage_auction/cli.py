"""Command-line front end.

Every subcommand writes a CSV (default) or JSON report whose first line /
``config`` block echoes the fully resolved run configuration, so any output
can be regenerated from its own header.

Exit codes: 0 success, 2 configuration error, 3 numerical fault,
4 verification or check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import equilibrium as eq
from . import simulation as sim
from . import strategies as st
from .distributions import Uniform, from_descriptor
from .errors import AuctionError, ConfigError, NumericalFault
from .model import COMMITMENT_ASYMMETRIC, COMMITMENT_SYMMETRIC, NO_COMMITMENT, AuctionSpec, normalize_mode
from .rng import default_seed

log = logging.getLogger("two_stage_auction")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FAILED = 0, 2, 3, 4
SIG_DIGITS = 12


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # keep argparse's exit code 2 but route through main()
        raise _UsageError(f"{self.prog}: error: {message}")


def parse_n_list(text: str | int | Sequence[int]) -> list[int]:
    """``"2..10"``, ``"2,3,5"`` or ``"7"`` -> list of ints (each >= 2)."""
    if isinstance(text, int):
        out = [text]
    elif isinstance(text, (list, tuple)):
        out = [int(x) for x in text]
    else:
        out = []
        for part in str(text).split(","):
            part = part.strip()
            if ".." in part:
                a, b = part.split("..", 1)
                out.extend(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
    if not out:
        raise ConfigError("empty n list")
    bad = [n for n in out if n < 2]
    if bad:
        raise ConfigError(f"need n >= 2 first-stage bidders, got {bad}")
    return out


def fmt(x: Any) -> Any:
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (float, np.floating)):
        return float(format(float(x), f".{SIG_DIGITS}g"))
    if isinstance(x, dict):
        return {k: fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [fmt(v) for v in x]
    return x


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), f".{SIG_DIGITS}g")
    return str(x)


def render(config: dict[str, Any], columns: Sequence[str], rows: Iterable[dict[str, Any]], out_format: str) -> str:
    rows = list(rows)
    if out_format == "json":
        return json.dumps({"config": fmt(config), "rows": [fmt(r) for r in rows]}, indent=2, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(fmt(config), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _dist(value: Any):
    if value is None:
        return None
    return from_descriptor(value)


def _entrant_dist(args: argparse.Namespace):
    if getattr(args, "wbar", None) is not None:
        return Uniform(0.0, float(args.wbar))
    g = _dist(getattr(args, "g", None))
    return g if g is not None else Uniform(0.0, 1.0)


def _spec(args: argparse.Namespace, mode: str, n: int) -> AuctionSpec:
    f = _dist(getattr(args, "f", None)) or Uniform(0.0, 1.0)
    return AuctionSpec(
        n=n, mode=mode, f_dist=f, g_dist=_entrant_dist(args),
        cap=getattr(args, "cap", None) if normalize_mode(mode) == COMMITMENT_SYMMETRIC else None,
        first_stage_pays=bool(getattr(args, "first_stage_pays", False)),
    )


def _base_config(args: argparse.Namespace) -> dict[str, Any]:
    cfg: dict[str, Any] = {"subcommand": args.command}
    if hasattr(args, "f"):
        cfg["f"] = (_dist(args.f) or Uniform(0.0, 1.0)).describe()
        cfg["g"] = _entrant_dist(args).describe()
    if getattr(args, "cap", None) is not None:
        cfg["cap"] = args.cap
    if getattr(args, "first_stage_pays", False):
        cfg["first_stage_pays"] = True
    return cfg


def _add_io(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys override the flags")
    p.add_argument("--output", "-o", help="write report here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = all cores)")


def _add_dists(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", default=None, help="first-stage values, e.g. uniform:0:1")
    p.add_argument("--g", default=None, help="entrant value, e.g. uniform:0:4")
    p.add_argument("--wbar", type=float, default=None, help="shorthand for --g uniform:0:WBAR")
    p.add_argument("--cap", type=float, default=None, help="bid cap for symmetric commitment (default 1.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="two-stage-auction", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cutoff", help="symmetric-commitment cutoff values")
    p.add_argument("--n", default="2..10")
    _add_io(p)

    p = sub.add_parser("bid-curve", help="equilibrium bid as a function of value")
    p.add_argument("--mode", default=None, help="(required) no_commitment | commitment_symmetric | commitment_asymmetric | ode")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--step", type=float, default=None, help="ODE step (ode mode)")
    _add_dists(p)
    _add_io(p)

    for name, helptext in (("simulate", "Monte Carlo revenue"), ("table", "revenue table over modes and n")):
        p = sub.add_parser(name, help=helptext)
        if name == "simulate":
            p.add_argument("--mode", default=None, help="(required)")
            p.add_argument("--n", default="2")
        else:
            p.add_argument("--modes", default="no_commitment,one_shot")
            p.add_argument("--n", default="2..10")
            p.add_argument("--baseline", default=None, help="add paired difference against this mode")
        p.add_argument("--trials", type=int, default=sim.DEFAULT_TRIALS)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--control-variate", action="store_true", help="estimate with revenue - w + E[w]")
        p.add_argument("--first-stage-pays", action="store_true",
                       help="experimental: charge the runner-up stage-one bid under commitment")
        _add_dists(p)
        _add_io(p)

    p = sub.add_parser("verify", help="numerical best-response certificate")
    p.add_argument("--mode", default=None, help="(required)")
    p.add_argument("--n", default="2")
    p.add_argument("--role", choices=("first_stage", "entrant"), default="first_stage")
    p.add_argument("--cutoff", type=float, default=None, help="override the solved cutoff")
    p.add_argument("--ode", action="store_true", help="use the numerical ODE strategy (asymmetric mode)")
    p.add_argument("--value-grid", type=int, default=200)
    p.add_argument("--bid-grid", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_dists(p)
    _add_io(p)

    p = sub.add_parser("limits", help="large-n limit bid and revenues")
    p.add_argument("--n", default=None, help="also report top ODE bids b(v_bar, n) for these n")
    _add_dists(p)
    _add_io(p)
    return parser


# provenance keys written into the config header that are not flags; a
# header fed back through --config skips them
_ECHO_ONLY = frozenset({"subcommand", "strategy", "strategies", "b0", "b_end", "knots", "seed_slope", "v0", "v_end"})


def _apply_config(args: argparse.Namespace) -> None:
    if not args.config:
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr in ("command", "config") or attr in _ECHO_ONLY:
            continue
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        setattr(args, attr, value)


# ---------------------------------------------------------------------------
# subcommands; each returns (config, columns, rows, exit_code)
# ---------------------------------------------------------------------------

def cmd_cutoff(args):
    ns = parse_n_list(args.n)
    rows = [eq.solve_cutoff(n).to_dict() for n in ns]
    cols = ["n", "v_hat", "residual", "bracket_lo", "bracket_hi", "interval_lo", "interval_hi", "roots_found"]
    return {"subcommand": "cutoff", "n": ns}, cols, rows, EXIT_OK


def cmd_bid_curve(args):
    mode = args.mode.strip().lower()
    if mode != "ode":
        mode = normalize_mode(mode)
    cfg = _base_config(args)
    cfg.update(mode=mode, n=args.n)
    if mode != "ode":
        cfg["samples"] = args.samples
    if mode == "ode":
        f = _dist(args.f) or Uniform(0.0, 1.0)
        sol = eq.solve_equilibrium_ode(args.n, f, _entrant_dist(args), args.step)
        cfg.update(sol.to_dict())
        rows = [{"v": v, "bid": b} for v, b in sol.rows(1000)]
        return cfg, ["v", "bid"], rows, EXIT_OK
    spec = _spec(args, mode, args.n)
    strategy = sim.equilibrium_strategy(spec)
    cfg["strategy"] = strategy.describe()
    if args.samples < 2:
        raise ConfigError("need at least 2 samples")
    values = np.linspace(spec.f_dist.lo, spec.f_dist.hi, args.samples)
    bids = np.asarray(strategy.bid(values))
    rows = [{"v": v, "bid": b} for v, b in zip(values.tolist(), bids.tolist())]
    return cfg, ["v", "bid"], rows, EXIT_OK


def _seed(args) -> int:
    return default_seed() if args.seed is None else int(args.seed)


def cmd_simulate(args):
    seed = _seed(args)
    ns = parse_n_list(args.n)
    mode = normalize_mode(args.mode)
    cfg = _base_config(args)
    cfg.update(mode=mode, n=ns, trials=args.trials, seed=seed, control_variate=args.control_variate)
    rows = []
    for n in ns:
        spec = _spec(args, mode, n)
        strategy = sim.equilibrium_strategy(spec)
        cfg.setdefault("strategies", []).append(strategy.describe())
        est = sim.estimate_revenue(spec, args.trials, seed, args.threads, strategy, args.control_variate)
        row = {"mode": mode, "n": n, "trials": est.trials, "seed": seed, "mean": est.mean,
               "stderr": est.stderr, "exact": sim.exact_revenue(spec)}
        row.update(est.diagnostics)
        rows.append(row)
    cols = list(sim.TABLE_COLUMNS) + ["inefficient_fraction", "revenue_above_w", "entrant_win_fraction"]
    if args.control_variate:
        cols += ["plain_mean", "plain_stderr"]
    return cfg, cols, rows, EXIT_OK


def cmd_table(args):
    seed = _seed(args)
    ns = parse_n_list(args.n)
    raw = args.modes if isinstance(args.modes, (list, tuple)) else str(args.modes).split(",")
    modes = [normalize_mode(m) for m in raw if m.strip()]
    template = _spec(args, NO_COMMITMENT, ns[0])
    baseline = normalize_mode(args.baseline) if args.baseline else None
    cfg = _base_config(args)
    cfg.update(modes=modes, n=ns, trials=args.trials, seed=seed, control_variate=args.control_variate,
               baseline=baseline)
    rows = sim.revenue_table(modes, ns, template, args.trials, seed, args.threads, baseline,
                             args.control_variate, cap=args.cap)
    cols = list(sim.TABLE_COLUMNS) + (["diff", "diff_stderr"] if baseline else []) + ["error"]
    code = EXIT_OK
    for r in rows:
        if "error" in r:
            log.warning("row %s n=%s failed: %s", r["mode"], r["n"], r["error"])
            code = EXIT_FAILED
    return cfg, cols, rows, code


def cmd_verify(args):
    ns = parse_n_list(args.n)
    mode = normalize_mode(args.mode)
    cfg = _base_config(args)
    cfg.update(mode=mode, n=ns, role=args.role, value_grid=args.value_grid, bid_grid=args.bid_grid, tol=args.tol)
    if args.cutoff is not None:
        cfg["cutoff"] = args.cutoff
    if args.ode:
        cfg["ode"] = True
    rows = []
    code = EXIT_OK
    for n in ns:
        spec = _spec(args, mode, n)
        if args.role == "entrant":
            strategy = st.truthful()
        elif mode == COMMITMENT_SYMMETRIC and args.cutoff is not None:
            strategy = st.commitment_symmetric(n, spec.cap, args.cutoff)
        elif mode == COMMITMENT_ASYMMETRIC and args.ode:
            strategy = st.from_ode_solution(eq.solve_equilibrium_ode(n, spec.f_dist, spec.g_dist))
        else:
            strategy = sim.equilibrium_strategy(spec)
        cfg.setdefault("strategies", []).append(strategy.describe())
        report = eq.verify_best_response(spec, strategy, args.value_grid, args.bid_grid, args.tol, args.threads)
        rows.append(report.to_dict())
        if not report.passed:
            code = EXIT_FAILED
    cols = ["mode", "strategy", "n", "max_gain", "worst_value", "tol", "pass"]
    return cfg, cols, rows, code


def cmd_limits(args):
    f = _dist(args.f) or Uniform(0.0, 1.0)
    g = _entrant_dist(args)
    cfg = _base_config(args)
    la = eq.limit_analysis(f, g)
    row = la.to_dict()
    row["truncated_mean_at_b_infinity"] = float(g.truncated_mean(la.b_infinity))
    ok = f.hi < la.b_infinity < g.hi and la.limit_revenue_ca > la.limit_revenue_nc
    row["pass"] = ok
    rows = [row]
    cols = ["b_infinity", "limit_revenue_ca", "limit_revenue_nc", "truncated_mean_at_b_infinity", "pass"]
    if args.n is not None:
        cols = ["n"] + cols + ["top_bid", "envelope_residual"]
        row["n"] = "inf"
        cfg["n"] = parse_n_list(args.n)
        extra = []
        for n in parse_n_list(args.n):
            ode = eq.solve_equilibrium_ode(n, f, g)
            ok = ok and ode.top_bid < la.b_infinity
            extra.append({"n": n, "top_bid": ode.top_bid,
                          "envelope_residual": eq.envelope_identity_check(n, f, g, ode)})
        rows = extra + rows
        row["pass"] = ok
    return cfg, cols, rows, EXIT_OK if ok else EXIT_FAILED


COMMANDS = {
    "cutoff": cmd_cutoff,
    "bid-curve": cmd_bid_curve,
    "simulate": cmd_simulate,
    "table": cmd_table,
    "verify": cmd_verify,
    "limits": cmd_limits,
}


def run(argv: Optional[Sequence[str]] = None) -> tuple[int, str, Optional[str]]:
    """Run the CLI without exiting: ``(exit_code, text, output_path)``.

    On success ``text`` is the report; otherwise it is the error message.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return EXIT_CONFIG, str(exc) + "\n", None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _apply_config(args)
        if hasattr(args, "mode") and args.mode is None:
            return EXIT_CONFIG, f"{parser.prog} {args.command}: error: --mode is required\n", None
        config, cols, rows, code = COMMANDS[args.command](args)
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        return EXIT_CONFIG, f"error: {exc}\n", None
    except NumericalFault as exc:
        return EXIT_NUMERIC, f"numerical fault: {exc}\n", None
    except AuctionError as exc:
        return EXIT_FAILED, f"error: {exc}\n", None
    text = render(config, cols, rows, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return code, text, args.output


def main(argv: Optional[Sequence[str]] = None) -> int:
    code, text, path = run(argv)
    if path is None and (code == EXIT_OK or text.startswith(("# config", "{"))):
        sys.stdout.write(text)
    elif path is None:
        sys.stderr.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
