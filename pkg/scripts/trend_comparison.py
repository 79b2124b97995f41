"""Train matched IMEX and explicit networks on Q-tips and print their validation metrics side by side.

    python scripts/trend_comparison.py                      # full desk-scale sweep (hours on one core)
    python scripts/trend_comparison.py --quick              # 32x32 smoke run (minutes)

Finished runs are cached in results/ (or --cache), so the sweep can be
interrupted and resumed.
"""
import argparse
import logging
from pathlib import Path

from imexnet.experiments import TrendConfig, run_trend

ROOT = Path(__file__).resolve().parents[1]
QUICK = TrendConfig(n_train=32, n_val=8, size=32, widths=(8, 16), layers=2, epochs=5)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="tiny configuration for a smoke run")
    ap.add_argument("--cache", type=Path, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    cfg = QUICK if args.quick else TrendConfig()
    cache = args.cache or ROOT / "results" / ("trend_quick.json" if args.quick else "trend.json")
    summary = run_trend(cfg, cache)

    print(f"{'mode':<10}{'params':>10}{'mean IOU':>10}{'loss':>10}{'acc %':>8}")
    for mode, n, miou, loss, acc in summary.table_rows():
        print(f"{mode:<10}{n:>10}{miou:>10.4f}{loss:>10.4f}{acc:>8.2f}")
    for s in cfg.seeds:
        a, b = summary.result("imex", s), summary.result("explicit", s)
        print(f"seed {s}: imex loss {a.val_loss:.4f} miou {a.val_miou:.4f} | "
              f"explicit loss {b.val_loss:.4f} miou {b.val_miou:.4f}")
    print(f"mean IOU gap (imex - explicit): {summary.miou_gap:+.4f}; "
          f"imex lower val loss on {summary.loss_wins}/{len(cfg.seeds)} seeds")


if __name__ == "__main__":
    main()
