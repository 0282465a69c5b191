"""Command-line entry point: ``conft run`` and ``conft gen-domain``.

Configuration is layered: built-in defaults, then ``--config`` file, then
``--key=value`` overrides, then the dedicated flags (``--seed`` etc.).
"""

import argparse
import json
import os
import sys
import time

from .errors import ConftError
from .experiment import (
    ExperimentConfig,
    build_domains,
    emit_results,
    read_config_file,
    run_experiment,
)
from .taskgen import save_domain

OUT_ENV = "CONFT_OUT"


def _parser():
    p = argparse.ArgumentParser(prog="conft", description="Distractor-aware contrastive finetuning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment matrix and write result files",
                         epilog="Any config key may be overridden as --key=value (e.g. --tasks=600).")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or runs/latest)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--threads", type=int, help="worker processes for task-level parallelism")
    run.add_argument("--arms", help="comma-separated subset of arms")
    run.add_argument("--quiet", action="store_true", help="no progress output")

    gen = sub.add_parser("gen-domain", help="write the synthetic base/novel domains as text files")
    gen.add_argument("--config", help="flat key=value config file")
    gen.add_argument("--out", help="directory for base.txt and novel.txt")
    return p


def _overrides(extra):
    """``--key=value`` / ``--key value`` pairs left over by argparse."""
    values, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise ConftError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            key, value = tok[2:], extra[i + 1]
            i += 1
        else:
            raise ConftError(f"override {tok!r} needs a value")
        values[key] = value
        i += 1
    return values


def resolve_config(args, extra):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    values.update(_overrides(extra))
    for key in ("seed", "threads", "arms"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    out = args.out or values.get("out") or os.environ.get(OUT_ENV)
    if out:
        values["out"] = out
    return ExperimentConfig.from_mapping(values)


def _progress(stream):
    start = time.monotonic()

    def report(done, total):
        stream.write(f"\r{done}/{total} tasks  {time.monotonic() - start:.0f}s")
        if done == total:
            stream.write("\n")
        stream.flush()

    return report


def cmd_run(args, extra):
    cfg = resolve_config(args, extra)
    result = run_experiment(cfg, progress=None if args.quiet else _progress(sys.stderr))
    out = emit_results(result, cfg.out)
    for arm in cfg.arms:
        agg = result.aggregates[arm]
        print(f"{arm:22s} {100 * agg.mean:6.2f} +- {100 * agg.half_width:.2f}")
    print(f"results written to {out}")


def cmd_gen_domain(args, extra):
    cfg = resolve_config(args, extra)
    base, novel = build_domains(cfg)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    for dom, name in ((base, "base.txt"), (novel, "novel.txt")):
        save_domain(dom, os.path.join(out, name))
    print(f"wrote {len(base)} base and {len(novel)} novel rows to {out}")


def format_error(exc):
    """One line: ``error type=<Class> message=<json string>``."""
    msg = str(exc) or type(exc).__name__
    return f"error type={type(exc).__name__} message={json.dumps(msg)}"


def main(argv=None):
    args, extra = _parser().parse_known_args(argv)
    handler = {"run": cmd_run, "gen-domain": cmd_gen_domain}[args.command]
    try:
        handler(args, extra)
    except (ConftError, OSError, ValueError) as exc:
        print(format_error(exc), file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print(format_error(KeyboardInterrupt("interrupted")), file=sys.stderr)
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
