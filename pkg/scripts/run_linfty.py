"""L-infinity check on a calibrated family: gap sup(V_t - phi_t) per t, certificates and DeGiorgi.

Usage: python scripts/run_linfty.py [config.toml] --out DIR
"""

import argparse
import sys
from pathlib import Path

from orbifold_ma.config import RunConfig, load_config
from orbifold_ma.pipelines import emit_report, run_linfty_check


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?")
    parser.add_argument("--out", default="out/linfty")
    args = parser.parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = run_linfty_check(cfg.replace(out_dir=str(out)))
    emit_report(rec, out)
    print(f"{'t':>7} {'sup_gap':>9} {'E_t':>9} {'C':>8}")
    for key, stage in rec.stages.items():
        if key.startswith("t=") and "sup_gap" in stage:
            dg = stage.get("degiorgi", {})
            print(f"{key[2:]:>7} {stage['sup_gap']:9.4f} {stage.get('E_t', float('nan')):9.4f} "
                  f"{dg.get('C', float('nan')):8.3f}")
    uni = rec.stages.get("uniformity")
    if uni:
        print(f"max/min gap over t: {uni['ratio']:.3f}")
    for key, msg in sorted(rec.errors.items()):
        print(f"error {key}: {msg}")
    failed = [k for k, ok in rec.assertions.items() if not ok]
    print(f"{'PASS' if rec.passed else 'FAIL'} ({len(rec.assertions) - len(failed)}/"
          f"{len(rec.assertions)} assertions)")
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
