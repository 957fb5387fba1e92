"""Command line: ``steinkit <subcommand> [flags]``.

Exit codes: 0 success, 1 certification failure, 2 usage or config error,
3 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import PreconditionError, ResourceError
from .experiments import COLUMNS, SUITE_VERSION, SweepConfig, plot_series, rows_failed, run

EXIT_OK, EXIT_CERT, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3

SUBCOMMANDS = {
    "verify": "verify",
    "poisson-sweep": "poisson_sweep",
    "normal-demo": "normal_demo",
    "pair-demo": "pair_demo",
    "process-demo": "process_demo",
    "concentration-demo": "concentration_demo",
}
CONFIG_KEYS = {"n", "p", "lambda", "lam", "seed", "truncation_eps", "format", "out", "output_path", "jobs"}


class UsageError(Exception):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from exc


def _int_list(text: str) -> tuple[int, ...]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"not a comma-separated list of integers: {text!r}")
    return tuple(int(v) for v in vals)


def _coerce(key: str, value) -> tuple[str, object]:
    """Map one config-file entry onto a SweepConfig field."""
    if key not in CONFIG_KEYS:
        raise UsageError(f"unknown config key {key!r}")
    if key == "n":
        return "n", tuple(int(v) for v in value) if isinstance(value, list) else _int_list(value)
    if key in ("p", "lambda", "lam"):
        vals = tuple(float(v) for v in value) if isinstance(value, list) else _float_list(value)
        return ("p" if key == "p" else "lam"), vals
    if key in ("seed", "jobs"):
        return key, int(value)
    if key == "truncation_eps":
        return key, float(value)
    if key in ("out", "output_path"):
        return "output_path", str(value)
    return key, str(value)


def load_config_file(path: str) -> dict:
    """JSON object, or ``key=value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    entries: dict = {}
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad JSON config: {exc}") from exc
        items = raw.items()
    else:
        items = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            items.append((k.strip(), v.strip()))
    for k, v in items:
        if k == "experiment":
            continue
        try:
            name, val = _coerce(k, v)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {k!r}: {v!r}") from exc
        entries[name] = val
    return entries


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steinkit", description="Stein's method bounds certified against exact distances.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--n", help="comma-separated sample sizes")
        sp.add_argument("--p", help="comma-separated success probabilities")
        sp.add_argument("--lambda", dest="lam", help="comma-separated Poisson means")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--truncation-eps", type=float, dest="truncation_eps")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--config", help="key=value or JSON config file; flags override it")
    return parser


def config_from_args(args: argparse.Namespace) -> SweepConfig:
    fields: dict = {}
    if args.config:
        fields.update(load_config_file(args.config))
    if args.n is not None:
        fields["n"] = _int_list(args.n)
    if args.p is not None:
        fields["p"] = _float_list(args.p)
    if args.lam is not None:
        fields["lam"] = _float_list(args.lam)
    for key in ("seed", "truncation_eps", "format", "jobs"):
        val = getattr(args, key)
        if val is not None:
            fields[key] = val
    if args.out is not None:
        fields["output_path"] = args.out
    return replace(SweepConfig(SUBCOMMANDS[args.command]), **fields).validate()


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def render(cfg: SweepConfig, rows: list[dict]) -> str:
    if cfg.format == "json":
        doc = {"experiment": cfg.experiment, "config": cfg.as_dict(), "rows": rows, "suite_version": SUITE_VERSION}
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[cfg.experiment]
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _json_safe(rows: list[dict]) -> list[dict]:
    out = []
    for r in rows:
        clean = {}
        for k, v in r.items():
            if isinstance(v, float) and v != v:
                v = None
            elif hasattr(v, "item"):
                v = v.item()
            clean[k] = v
        out.append(clean)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = config_from_args(args)
    except (UsageError, PreconditionError, ValueError, OSError) as exc:
        print(f"steinkit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = _json_safe(run(cfg))
    except ResourceError as exc:
        print(f"steinkit: resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    text = render(cfg, rows)
    if cfg.output_path:
        out = Path(cfg.output_path)
        out.write_text(text)
        if cfg.experiment == "normal_demo":
            out.with_name(out.name + ".plot.dat").write_text(plot_series(rows))
    else:
        sys.stdout.write(text)
    failed = rows_failed(rows)
    for r in failed:
        print(f"steinkit: FAILED {json.dumps(r)}", file=sys.stderr)
    return EXIT_CERT if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
