"""Command-line entry point: ``almda sine-bench | run | inspect``."""

import argparse
import sys

import numpy as np

from .data import load_domains_csv
from .exceptions import AlmdaError
from .harness import (CONFIG_KEYS, METHODS, build_config, emit_report, parse_config_text,
                      run_experiment)


def _common(p):
    p.add_argument("--config", metavar="PATH", help="flat 'key = value' config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--methods", metavar="LIST",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--out", metavar="PATH", help="write the table here instead of stdout")
    p.add_argument("--format", choices=("csv", "text"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="almda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sine-bench", help="repeated sine-wave hold-out trials")
    _common(p)
    p = sub.add_parser("run", help="hold-one-domain-out table from CSV domains")
    _common(p)
    p.add_argument("domains", nargs="*", metavar="CSV", help="domain files (or 'domains' in config)")
    p = sub.add_parser("inspect", help="print shape and label statistics of CSV domains")
    p.add_argument("domains", nargs="+", metavar="CSV")
    return parser


def _gather(args, bench):
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), source=args.config))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in CONFIG_KEYS:
            raise AlmdaError(f"--set expects KEY=VALUE with a known key, got {item!r}")
        values[key.strip()] = value.strip()
    for flag in ("seed", "trials", "methods", "out", "format"):
        v = getattr(args, flag)
        if v is not None:
            values[flag] = str(v)
    if bench == "sine":
        values["bench"] = "sine"
    elif getattr(args, "domains", None):
        values["domains"] = ",".join(args.domains)
    return values


def _inspect(paths, stream):
    domains = load_domains_csv(paths)
    for dom in domains:
        X = dom.features
        line = f"{dom.name}: n={dom.n_samples} d={dom.n_features}"
        if dom.labeled:
            pos = int(np.sum(dom.labels > 0))
            line += f" pos={pos} neg={dom.n_samples - pos}"
        else:
            line += " unlabeled"
        line += (f" mean=[{X.mean(axis=0).min():.4g}, {X.mean(axis=0).max():.4g}]"
                 f" std=[{X.std(axis=0).min():.4g}, {X.std(axis=0).max():.4g}]")
        print(line, file=stream)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            _inspect(args.domains, sys.stdout)
            return 0
        values = _gather(args, "sine" if args.command == "sine-bench" else None)
        if args.command == "run" and values.get("bench") == "sine":
            values.pop("bench")
        cfg = build_config(values)
        report = run_experiment(cfg)
        text = emit_report(report, cfg.out, cfg.format)
        if cfg.out is None:
            sys.stdout.write(text)
    except (AlmdaError, OSError) as exc:
        print(f"almda: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
