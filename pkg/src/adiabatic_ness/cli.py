"""Command line interface: ``adiabatic-ness {run,sweep,diagnose,presets}``.

Exit codes: 0 pass, 1 acceptance regression, 2 configuration error,
3 numerical error.
"""

import argparse
import logging
import sys

from .errors import ConfigError, NessError
from .runner import (config_error_manifest, dump_config, load_config, presets, run_diagnose,
                     run_scenario, run_sweep, validate_config)

log = logging.getLogger("adiabatic_ness")


def _parser():
    p = argparse.ArgumentParser(prog="adiabatic-ness", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "full pipeline: NESS sweep, rates, structure, diagnostics"),
                       ("sweep", "eta sweep of the NESS discrepancy with certificates"),
                       ("diagnose", "dense resolvent and compactness diagnostics"),
                       ("presets", "list presets or print one as YAML")):
        s = sub.add_parser(verb, help=text)
        s.add_argument("--config", metavar="PATH", help="YAML scenario file")
        s.add_argument("--preset", metavar="NAME", help="named scenario")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--workers", type=int, metavar="N", help="worker processes")
        s.add_argument("--tolerance-scale", type=float, default=1.0, metavar="X",
                       help="multiply every tolerance by X")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    kw = dict(tolerance_scale=args.tolerance_scale, workers=args.workers, out=args.out)
    if args.config:
        return load_config(args.config, **kw)
    table = presets()
    name = args.preset or "reference-desk"
    if name not in table:
        raise ConfigError(f"preset: unknown name {name!r} (known: {', '.join(table)})")
    return validate_config(table[name], **kw)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.verb == "presets":
        table = presets()
        if args.preset:
            if args.preset not in table:
                print(f"unknown preset {args.preset!r}", file=sys.stderr)
                return 2
            sys.stdout.write(dump_config(table[args.preset]))
        else:
            for name, cfg in table.items():
                print(f"{name:16s} etas={cfg['etas']}")
        return 0
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if args.out:
            config_error_manifest(args.out, str(exc), args.verb)
        return 2
    try:
        if args.verb == "run":
            code, out = run_scenario(cfg)
        elif args.verb == "sweep":
            code, out = run_sweep(cfg)
        else:
            code, out = run_diagnose(cfg)
    except NessError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    log.info("wrote %s", out)
    print(f"{args.verb}: exit {code}, artifacts in {out}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
