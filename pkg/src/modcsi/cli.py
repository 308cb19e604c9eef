"""
Command line entry point.

``modcsi run <config>`` runs one experiment and writes ``<name>.csv`` and/or
``<name>.json`` to the output directory; ``modcsi validate <config>`` only checks the
configuration. ``<config>`` is a YAML file or the name of a shipped preset.

Exit codes: 0 success, 1 a hard invariant failed (its name is printed), 2 invalid
configuration.
"""
import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import SCHEMA_VERSION, dump_config, load_config, preset_names
from .errors import ConfigError, InvariantViolation
from .experiments import COLUMNS, run_experiment

logger = logging.getLogger("modcsi")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(cfg, rows):
    """CSV text: the resolved config as ``#`` comment lines, a header, one row per point."""
    buf = io.StringIO()
    for line in dump_config(cfg).splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in COLUMNS])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def render_json(cfg, source, input_text, result):
    seeds = {"master": cfg.seed,
             "codebook_training": sorted({c.train_seed for c in cfg.wideband.codebooks}
                                         | {p.codebook.train_seed for p in cfg.pipelines}),
             "pcb_component": sorted({q.component_seed for q in cfg.subband}
                                     | {p.subband.component_seed for p in cfg.pipelines})}
    doc = {"schema_version": SCHEMA_VERSION, "version": __version__,
           "experiment": cfg.experiment, "source": source,
           "config": cfg.model_dump(mode="json"), "config_yaml": dump_config(cfg),
           "input_yaml": input_text, "seeds": seeds, "columns": list(COLUMNS),
           "rows": result.rows, "invariants": result.invariants.as_dict(),
           "records": result.records}
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"


def _output_name(path_or_preset):
    p = Path(path_or_preset)
    return p.stem if p.suffix in (".yaml", ".yml") else p.name


def cmd_validate(args):
    try:
        cfg, _ = load_config(args.config, seed=args.seed)
    except ConfigError as err:
        for d in err.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 2
    print(f"OK: {args.config} ({cfg.experiment})")
    return 0


def cmd_run(args):
    try:
        cfg, text = load_config(args.config, seed=args.seed)
    except ConfigError as err:
        for d in err.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 2
    out_dir = Path(args.out or cfg.output.dir)
    emit = args.emit or cfg.output.emit
    try:
        result = run_experiment(cfg, threads=max(1, args.threads))
    except InvariantViolation as err:
        print(f"invariant violated: {err.name}: {err}", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    name = _output_name(args.config)
    written = []
    if emit in ("csv", "both"):
        path = out_dir / f"{name}.csv"
        path.write_text(render_csv(cfg, result.rows))
        written.append(path)
    if emit in ("json", "both"):
        path = out_dir / f"{name}.json"
        path.write_text(render_json(cfg, str(args.config), text, result))
        written.append(path)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="modcsi", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    presets = ", ".join(preset_names())
    for name, helptext in (("run", "run an experiment"), ("validate", "check a config")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help=f"YAML file or preset name ({presets})")
        p.add_argument("--seed", type=int, help="override the master seed")
        if name == "run":
            p.add_argument("--out", help="output directory (overrides output.dir)")
            p.add_argument("--threads", type=int, default=1,
                           help="worker threads; results do not depend on it")
            p.add_argument("--emit", choices=("csv", "json", "both"),
                           help="report formats (overrides output.emit)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return cmd_run(args) if args.command == "run" else cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
