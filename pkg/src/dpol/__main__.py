"""Command line: ``dpol run|sweep|gen|verify``."""

from __future__ import annotations

import argparse
import logging
import sys

from dpol import harness
from dpol.dp_primitives import ParameterError, RngStream

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


def _overrides(pairs: list[str]) -> dict[str, str]:
  out = {}
  for p in pairs:
    if "=" not in p:
      raise harness.ConfigError(f"--set expects key=value, got {p!r}")
    k, v = p.split("=", 1)
    out[k.strip()] = v.strip()
  return out


def _load(args) -> harness.ExperimentConfig:
  ov = _overrides(args.set or [])
  if args.out:
    ov["out"] = args.out
  if args.traces:
    ov["traces"] = "true"
  cfg = harness.load_config(args.config, ov)
  seed = harness.seed_from_env(cfg.seed)
  return cfg.replace(seed=seed) if seed != cfg.seed else cfg


def _print_cell(cell: harness.CellResult) -> None:
  s = cell.summary
  print(f"{s['alg']:<12} eps={s['eps']:<6g} reps={s['reps']:<4d} "
        f"regret mean={s['regret_mean']:.2f} median={s['regret_median']:.2f} "
        f"q90={s['regret_q90']:.2f} switches={s['switches_mean']:.1f} "
        f"privacy=({s['privacy_epsilon']:.6g}, {s['privacy_delta']:.3g}) "
        f"time={cell.wall_time:.1f}s")


def cmd_run(args) -> int:
  cell = harness.run_experiment(_load(args), workers=args.workers)
  _print_cell(cell)
  return EXIT_OK


def cmd_sweep(args) -> int:
  cfg = _load(args)
  cells = harness.sweep(cfg, harness.parse_axes(args.axis), args.workers)
  for c in cells:
    _print_cell(c)
  return EXIT_OK


def cmd_gen(args) -> int:
  raw = {"alg": "svt", "adversary": args.adversary, "T": str(args.T),
         "d": str(args.d), "eps": str(args.eps)}
  raw.update(_overrides(args.set or []))
  cfg = harness.ExperimentConfig.from_mapping(raw)
  seed = harness.seed_from_env(args.seed)
  seq = harness.make_sequence(cfg, RngStream(seed))
  seq.to_csv(sys.stdout if args.output == "-" else args.output)
  return EXIT_OK


def cmd_verify(args) -> int:
  rows = harness.verify_all(args.filter, seed=harness.seed_from_env(0))
  failed = sum(not ok for _, _, ok, _ in rows)
  print(f"{len(rows) - failed}/{len(rows)} checks passed")
  return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
  ap = argparse.ArgumentParser(prog="dpol", description=__doc__)
  ap.add_argument("-v", "--verbose", action="store_true")
  sub = ap.add_subparsers(dest="cmd", required=True)

  def with_config(p):
    p.add_argument("config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--traces", action="store_true",
                   help="write per-replication trace CSVs")
    p.add_argument("--workers", type=int, default=1)

  p = sub.add_parser("run", help="run one experiment cell")
  with_config(p)
  p.set_defaults(fn=cmd_run)
  p = sub.add_parser("sweep", help="run the product of one or more axes")
  with_config(p)
  p.add_argument("--axis", action="append", required=True,
                 metavar="KEY=V1,V2,...")
  p.set_defaults(fn=cmd_sweep)
  p = sub.add_parser("gen", help="write a loss sequence CSV")
  p.add_argument("adversary", choices=harness.EXPERT_ADVERSARIES)
  p.add_argument("--T", type=int, required=True)
  p.add_argument("--d", type=int, required=True)
  p.add_argument("--eps", type=float, default=1.0)
  p.add_argument("--seed", type=int, default=0)
  p.add_argument("--set", action="append", metavar="KEY=VALUE")
  p.add_argument("-o", "--output", default="-")
  p.set_defaults(fn=cmd_gen)
  p = sub.add_parser("verify", help="run the oracle suite")
  p.add_argument("--filter", help="only suites whose name contains this")
  p.set_defaults(fn=cmd_verify)
  return ap


def main(argv: list[str] | None = None) -> int:
  args = build_parser().parse_args(argv)
  logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                      format="%(levelname)s %(name)s: %(message)s")
  try:
    return args.fn(args)
  except (harness.ConfigError, ParameterError, FileNotFoundError) as e:
    print(f"config error: {e}", file=sys.stderr)
    return EXIT_CONFIG
  except (harness.VerificationError, harness.ReplicationError) as e:
    print(f"verification failure: {e}", file=sys.stderr)
    return EXIT_VERIFY


if __name__ == "__main__":
  sys.exit(main())
