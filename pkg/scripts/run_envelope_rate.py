"""Envelope convergence sweep: sup |u_beta - oracle| and the log(beta)/beta rate ratio per t.

Usage: python scripts/run_envelope_rate.py [config.toml] --out DIR
"""

import argparse
import sys
from pathlib import Path

from orbifold_ma.cli import cmd_envelope
from orbifold_ma.config import RunConfig, load_config
from orbifold_ma.pipelines import emit_report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?")
    parser.add_argument("--out", default="out/envelope")
    args = parser.parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = cmd_envelope(cfg.replace(out_dir=str(out)))
    emit_report(rec, out)
    print(f"{'t':>7} {'beta':>7} {'sup_error':>11} {'rate':>8}")
    for t, beta, err, rate, *_ in rec.curves["beta_errors"][1]:
        print(f"{t:7.3f} {beta:7.0f} {err:11.4e} {rate:8.4f}")
    for key, stage in sorted(rec.stages.items()):
        print(f"{key}: max/min rate ratio {stage['ratio_max_min']:.3f}")
    print("PASS" if rec.passed else "FAIL")
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
