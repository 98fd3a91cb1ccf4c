"""Mean-value check: sampled v with sup v <= C (1 + ||v||_1), certificates and the alpha step.

Runs the L-infinity check first to measure the bound used in Lambda.
Usage: python scripts/run_mean_value.py [config.toml] --out DIR [--samples N]
"""

import argparse
import sys
from pathlib import Path

from orbifold_ma.config import RunConfig, load_config
from orbifold_ma.pipelines import emit_report, run_linfty_check, run_mean_value_check


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?")
    parser.add_argument("--out", default="out/mean_value")
    parser.add_argument("--samples", type=int)
    args = parser.parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.replace(out_dir=args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lin = run_linfty_check(cfg)
    emit_report(lin, out)
    rec = run_mean_value_check(cfg, v_samples=args.samples, linfty=lin)
    emit_report(rec, out)
    summary = rec.stages.get("summary", {})
    print(f"L-infinity bound used: {rec.stages.get('linfty_bound', {}).get('C_inf', float('nan')):.4f}")
    print(f"measured C: {summary.get('C_run', float('nan')):.4f}")
    print(f"failures: {summary.get('failures')}")
    print("PASS" if rec.passed and lin.passed else "FAIL")
    return 0 if rec.passed and lin.passed else 1


if __name__ == "__main__":
    sys.exit(main())
