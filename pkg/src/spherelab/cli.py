"""Command-line entry points: sweep, fit, predict-theory, diffeo-sense."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import yaml

from .harness import ExperimentConfig, diffeo_sense_synthetic, load_records, run_sweep, summarize
from .theory import canonical_regime, predicted_exponent


def _cmd_sweep(args) -> int:
    raw = yaml.safe_load(Path(args.config).read_text())
    config = ExperimentConfig.from_dict(raw)
    records, failures = run_sweep(config, verbose=not args.quiet)
    summary = summarize([r for r in records if not r.error])
    out_dir = Path(config.out_dir)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"{len(records)} rows in {out_dir/'curves.csv'}; {failures} failures")
    return 2 if failures else 0


def _cmd_fit(args) -> int:
    records = [r for r in load_records(Path(args.dir) / "curves.csv") if not r.error]
    if not records:
        print("no usable rows found", file=sys.stderr)
        return 1
    summary = summarize(records)
    out = Path(args.out) if args.out else Path(args.dir) / "summary.json"
    out.write_text(json.dumps(summary, indent=1) + "\n")
    for g in summary["groups"]:
        print(
            f"{g['regime']} d={g['d']} nu_t={g['nu_t']}: "
            f"beta_hat={g['beta_hat']:.3f} +/- {g['stderr']:.3f} (pred {g['beta_pred']:.3f})"
        )
    return 0


def _cmd_predict_theory(args) -> int:
    nu_t = math.inf if args.nu_t.lower() in ("inf", "infinity") else float(args.nu_t)
    pred = predicted_exponent(canonical_regime(args.regime), args.d, nu_t)
    print(json.dumps(pred.as_dict()))
    return 0


def _cmd_diffeo_sense(args) -> int:
    raw = yaml.safe_load(Path(args.config).read_text()) or {}
    result = diffeo_sense_synthetic(
        P=int(raw.get("P", 8)),
        n_train=int(raw.get("n_train", 64)),
        n_images=int(raw.get("n_images", 32)),
        draws=int(raw.get("draws", 256)),
        cutoff=raw.get("cutoff"),
        target_displacement=float(raw.get("target_displacement", 1.0)),
        H=int(raw.get("H", 2048)),
        master_seed=int(raw.get("seed", 0)),
    )
    out = raw.get("out")
    text = json.dumps(result, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spherelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a learning-curve sweep from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("fit", help="fit exponents for an existing sweep directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict-theory", help="print the predicted exponent as JSON")
    p.add_argument("--regime", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--nu-t", dest="nu_t", default="inf")
    p.set_defaults(func=_cmd_predict_theory)

    p = sub.add_parser("diffeo-sense", help="relative-sensitivity probe on the synthetic task")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_diffeo_sense)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
