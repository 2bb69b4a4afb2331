"""``beamre`` command line: solve, sweep, verify, gen-channel."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import build_channel, effective_threads, run_sweep, solve_once, verify
from .model import write_coupling


def _load(args):
    cfg = load_config(args.config)
    if cfg.channel.file is not None and not Path(cfg.channel.file).is_absolute():
        # channel files are resolved next to the config
        path = str(Path(args.config).resolve().parent / cfg.channel.file)
        cfg = replace(cfg, channel=replace(cfg.channel, file=path))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg):
    return Path(args.out) if args.out is not None else Path(cfg.output)


def cmd_solve(args):
    cfg = _load(args)
    alloc_path, metrics_path = solve_once(cfg, _out(args, cfg))
    print(f"wrote {alloc_path} and {metrics_path}")
    return 0


def cmd_sweep(args):
    cfg = _load(args)
    if cfg.sweep.kind is None:
        print("error: config has no 'sweep' key", file=sys.stderr)
        return 2
    path = run_sweep(cfg, _out(args, cfg), threads=effective_threads(args.threads, cfg))
    print(f"wrote {path}")
    return 0


def cmd_verify(args):
    cfg = _load(args)
    path = verify(cfg, _out(args, cfg))
    failed = [ln.split(",")[0] for ln in path.read_text(encoding="utf-8").splitlines()[1:]
              if ",fail," in ln]
    print(f"wrote {path}" + (f" ({len(failed)} failing: {', '.join(failed)})" if failed else ""))
    return 1 if failed else 0


def cmd_gen_channel(args):
    cfg = _load(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "channel.txt"
    write_coupling(build_channel(cfg), path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="beamre",
        description="Resource-efficient beam-domain power allocation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, text in (
            ("solve", cmd_solve, "solve one instance; write the allocation and metrics"),
            ("sweep", cmd_sweep, "run the sweep named in the config"),
            ("verify", cmd_verify, "run the oracle checks on the configured instance"),
            ("gen-channel", cmd_gen_channel, "write the configured channel statistics")):
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--out", help="output directory (default: the config's 'output')")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int,
                       help="worker processes for sweeps (BEAMRE_THREADS overrides)")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
