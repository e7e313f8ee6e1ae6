"""Full synthetic-corpus protocol: distance pre-training for a set of ablation
variants, text-type clustering, zero-shot text baseline, and frozen vs
from-scratch fine-tuning of the matching and HPWL heads.

    python scripts/run_protocol.py --out results.json
    python scripts/run_protocol.py --variants all --no-transfer
"""
import argparse
import json
import logging
import sys

from tagnet.config import Config, load_config
from tagnet.model import ABLATION_VARIANTS
from tagnet.pipeline import run_protocol


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", default="TAG-NORM,TA-NORM,TG-NORM,G-CAT",
                   help="comma-separated list, or 'all' for every ablation variant")
    p.add_argument("--no-transfer", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    args = p.parse_args()

    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.seed = args.seed
    variants = ABLATION_VARIANTS if args.variants == "all" else tuple(args.variants.split(","))
    if args.variants == "all":  # pre-train-and-transfer from the full model
        variants = ("TAG-NORM",) + tuple(v for v in variants if v != "TAG-NORM")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    results = run_protocol(cfg, variants, transfer=not args.no_transfer, threads=args.threads,
                           progress=logging.getLogger("protocol").info)
    text = json.dumps(results, indent=1, sort_keys=True) + "\n"
    if args.out:
        open(args.out, "w").write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
