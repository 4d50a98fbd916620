"""Command line entry point: ``fbtt run | resume | compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import (InitSpec, SimConfig, TimeSpec, config_hash, dump_config, load_config,
                     load_preset, preset_names)
from .diagnostics import (CsvSink, comparison_table, export_fields, read_csv, summarize)
from .errors import ConfigError, CourantError, NumericalError
from .integrator import Simulator, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("fbtt")


def resolve_config(spec: str) -> SimConfig:
    """A file path, or the name of a shipped preset."""
    path = Path(spec)
    if path.is_file():
        return load_config(path)
    if spec in preset_names():
        return load_preset(spec)
    raise ConfigError(f"{spec!r} is neither a config file nor a preset ({preset_names()})")


def apply_overrides(cfg: SimConfig, args) -> SimConfig:
    if getattr(args, "steps", None) is not None:
        if args.steps < 0:
            raise ConfigError("--steps must be >= 0")
        cfg = cfg.replace(time=TimeSpec(cfg.time.tau, args.steps, cfg.time.N_ext))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(init=InitSpec(args.seed, cfg.init.target_ratio))
    if getattr(args, "out", None) is not None:
        cfg = cfg.replace(out=args.out)
    if getattr(args, "checkpoint_every", None) is not None:
        cfg = cfg.replace(checkpoint_every=args.checkpoint_every)
    if getattr(args, "backend", None) is not None:
        cfg = cfg.replace(backend=args.backend)
    return cfg


def run_backend(cfg: SimConfig, backend: str, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    (out / "config.toml").write_text(dump_config(cfg.replace(backend=backend, out=str(out))))
    sim = Simulator(cfg, backend)
    sink = CsvSink(out / "diagnostics.csv", chash)
    try:
        state, records = sim.run(sink=sink, checkpoint_dir=out / "checkpoint")
    finally:
        sink.close()
    export_fields(out / "fields", state.n_e, state.phi, cfg.grid.h, chash)
    last = records[-1] if records else sim.record(state, 0.0)
    print(f"[{backend}] step {last.step}  t = {last.t_phys_s:.4g} s  "
          f"E_add = {last.E_add_V_per_m:.4e} V/m  cells = {last.tt_cells}")
    return records


def _try_summary(cfg, ref, other):
    try:
        return comparison_table(summarize(ref, cfg.stats), summarize(other, cfg.stats))
    except ValueError as exc:
        return f"statistics unavailable: {exc}"


def cmd_run(args) -> int:
    cfg = apply_overrides(resolve_config(args.config), args)
    out = Path(cfg.out)
    print(f"config hash {config_hash(cfg)}")
    if cfg.backend != "both":
        run_backend(cfg, cfg.backend, out)
        return EXIT_OK
    dense = run_backend(cfg, "dense", out / "dense")
    tt = run_backend(cfg, "tt", out / "tt")
    table = _try_summary(cfg, dense, tt)
    (out / "compare.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_resume(args) -> int:
    ckpt = Path(args.resume)
    cfg = load_config(ckpt / "config.toml")
    state, meta = load_checkpoint(ckpt)
    if meta["config_hash"] != config_hash(cfg):
        raise ConfigError(f"{ckpt}: checkpoint hash {meta['config_hash']} does not match "
                          f"its config {config_hash(cfg)}")
    cfg = apply_overrides(cfg, argparse.Namespace(steps=args.steps, out=args.out))
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    csv_path = out / "diagnostics.csv"
    keep = []
    if csv_path.exists():
        recs, old_hash = read_csv(csv_path)
        if old_hash != chash:
            raise ConfigError(f"{csv_path}: hash {old_hash} does not match checkpoint {chash}")
        keep = [r for r in recs if r.step <= state.t_index]
    (out / "config.toml").write_text(dump_config(cfg.replace(out=str(out))))
    sim = Simulator(cfg, meta["backend"])
    sim.rng_state = meta.get("rng_state")
    print(f"config hash {chash}; resuming {meta['backend']} run at step {state.t_index}")
    sink = CsvSink(csv_path, chash, keep)
    try:
        state, records = sim.run(state=state, sink=sink, checkpoint_dir=out / "checkpoint",
                                 elapsed0=float(meta.get("elapsed_s", 0.0)))
    finally:
        sink.close()
    export_fields(out / "fields", state.n_e, state.phi, cfg.grid.h, chash)
    print(f"[{meta['backend']}] finished at step {state.t_index}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.runs:
        if len(args.runs) != 2:
            raise ConfigError("compare takes exactly two run directories")
        a, b = (Path(r) for r in args.runs)
        ra, ha = read_csv(a / "diagnostics.csv")
        rb, hb = read_csv(b / "diagnostics.csv")
        if ha != hb:
            raise ConfigError(f"config hashes differ: {ha} ({a}) vs {hb} ({b})")
        cfg = load_config(a / "config.toml")
        try:
            table = comparison_table(summarize(ra, cfg.stats), summarize(rb, cfg.stats))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        print(f"config hash {ha}")
        print(table)
        return EXIT_OK
    if not args.config:
        raise ConfigError("compare needs --config or two run directories")
    args.backend = "both"
    return cmd_run(args)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbtt", description="Hybrid electron-fluid / kinetic-ion "
                                 "solver with tensor-train and dense backends.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="config file or preset name")
            p.add_argument("--backend", choices=("tt", "dense", "both"))
            p.add_argument("--seed", type=int)
            p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
        p.add_argument("--steps", type=int, help="total number of steps (absolute)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS threads; 1 gives deterministic results")

    p = sub.add_parser("run", help="run a simulation")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue from a checkpoint directory")
    p.add_argument("--resume", required=True, metavar="CKPT")
    common(p, with_config=False)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("compare", help="run both backends, or compare two finished runs")
    p.add_argument("runs", nargs="*", help="two run directories to compare")
    common(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "run" and not args.config:
        ap.error("run needs --config")
    try:
        if args.threads is not None:
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_CONFIG
    except (CourantError, NumericalError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
