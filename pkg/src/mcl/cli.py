"""Command-line entry point.

Verbs: gen (synthesize a feature pool), train (one regime, full artifact
set), compare (the regime table + budget sweep), eval (retrieval metrics for
a checkpoint), dump-embeddings (MCLF export for external plotting).

Exit codes: 0 success, 2 usage error, 3 data/config error, 4 numeric
failure. Seed precedence: --seed flag > config file > MCL_SEED env > 0.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data import FeatureFileError, GenSpec, Pool, generate_pool, load_pool, \
    write_features
from .metrics import compute_map_cmc
from .model import EncoderParams, load_checkpoint, save_checkpoint
from .protobank import NoClustersError
from .trainer import NumericError, REGIMES, TrainConfig, holdout_split, train
from .model import encode_batch

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclass
class RunManifest:
    command: list[str]
    config: dict
    seed: int
    input_hashes: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    version: str = __version__

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _ratio_to_subsets(ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"--split-ratio must be in (0, 1], got {ratio}")
    return max(1, round(1.0 / ratio))


_CONFIG_FLAGS = [
    # (flag, config field, type)
    ("--subsets", "n_subsets", int),
    ("--epochs", "epochs", int),
    ("--warmup-epochs", "warmup_epochs", int),
    ("--p", "p_identities", int),
    ("--i", "i_instances", int),
    ("--p2", "p2_identities", int),
    ("--i2", "i2_instances", int),
    ("--momentum", "momentum_m", float),
    ("--margin", "margin", float),
    ("--lambda", "lambda_tri", float),
    ("--tau", "tau", float),
    ("--eps", "eps", float),
    ("--min-pts", "min_pts", int),
    ("--k", "k_neighbors", int),
    ("--min-cluster-fraction", "min_cluster_fraction", float),
    ("--lr", "lr", float),
    ("--weight-decay", "weight_decay", float),
    ("--d-hidden", "d_hidden", int),
    ("--d-emb", "d_emb", int),
    ("--sigma-aug", "sigma_aug", float),
    ("--drop-p", "drop_p", float),
    ("--holdout", "holdout_fraction", float),
]

_ABLATION_FLAGS = [
    ("--fixed-split", "fixed_split"),
    ("--shared-label-space", "shared_label_space"),
    ("--no-sc", "no_sc"),
    ("--plain-triplet", "plain_triplet"),
]


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-ratio", type=float, default=None,
                   help="meta-training fraction r; maps to N = round(1/r)")
    for flag, dest, typ in _CONFIG_FLAGS:
        p.add_argument(flag, dest=f"cfg_{dest}", type=typ, default=None)
    for flag, dest in _ABLATION_FLAGS:
        p.add_argument(flag, dest=f"cfg_{dest}", action="store_true",
                       default=None)
    p.add_argument("--no-proto-renorm", dest="cfg_proto_renorm",
                   action="store_false", default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="batch-level fan-out (results are identical; kept "
                        "for sweep scripting)")


def _resolve_config(args) -> TrainConfig:
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
        if "lambda" in base:
            base["lambda_tri"] = base.pop("lambda")
    for _, dest, _typ in _CONFIG_FLAGS:
        val = getattr(args, f"cfg_{dest}", None)
        if val is not None:
            base[dest] = val
    for _, dest in _ABLATION_FLAGS + [("", "proto_renorm")]:
        val = getattr(args, f"cfg_{dest}", None)
        if val is not None:
            base[dest] = val
    if getattr(args, "split_ratio", None) is not None:
        base["n_subsets"] = _ratio_to_subsets(args.split_ratio)
    if args.seed is not None:
        base["seed"] = args.seed
    elif "seed" not in base and os.environ.get("MCL_SEED"):
        base["seed"] = int(os.environ["MCL_SEED"])
    return TrainConfig.from_dict(base)


def _write_metrics_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mAP", "rank1", "entries", "seconds"])
        for e in report.epochs:
            w.writerow([e.epoch, f"{e.mean_ap:.6f}", f"{e.rank1:.6f}",
                        e.distance_entries, f"{e.seconds:.6f}"])


def _write_cost_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "distance_entries", "peak_bytes", "seconds"])
        for e in report.epochs:
            w.writerow([e.epoch, e.distance_entries, e.distance_entries * 8,
                        f"{e.seconds:.6f}"])


def cmd_gen(args) -> int:
    if os.path.exists(args.out) and not args.force:
        print(f"refusing to overwrite {args.out} (use --force)", file=sys.stderr)
        return EXIT_DATA
    spec = GenSpec(num_identities=args.ids, samples_per_identity=args.per_id,
                   d_raw=args.dim, intra_class_sigma=args.sigma, seed=args.seed)
    pool = generate_pool(spec)
    write_features(pool, args.out, include_labels=True)
    print(f"wrote {len(pool)} samples x {pool.d_raw} dims to {args.out}")
    return EXIT_OK


def _train_once(pool: Pool, config: TrainConfig, regime: str):
    return train(pool, config, regime)


def cmd_train(args) -> int:
    pool = load_pool(args.pool)
    config = _resolve_config(args)
    params, report = _train_once(pool, config, args.regime)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "checkpoint.mclp")
    save_checkpoint(params, ckpt)
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    _write_metrics_csv(os.path.join(out, "metrics.csv"), report)
    _write_cost_csv(os.path.join(out, "cost.csv"), report)
    manifest = RunManifest(
        command=sys.argv[1:], config=config.to_dict(), seed=config.seed,
        input_hashes={args.pool: _sha256(args.pool)},
        outputs=["checkpoint.mclp", "report.json", "metrics.csv", "cost.csv"])
    if args.config:
        manifest.input_hashes[args.config] = _sha256(args.config)
    manifest.write(os.path.join(out, "manifest.json"))
    print(f"{args.regime}: final mAP {report.final_map:.4f} "
          f"rank1 {report.final_rank1:.4f} "
          f"entries {report.total_entries} "
          f"wall {report.total_seconds:.1f}s -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    pool = load_pool(args.pool)
    config = _resolve_config(args)
    ratios = sorted({float(r) for r in args.ratios.split(",")}, reverse=True)
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ValueError(f"meta-training fraction {r} outside (0, 1]")
    rows = []
    schemes: list[tuple[str, str, float]] = []
    if 1.0 in ratios:
        schemes.append(("all", "all", 1.0))
    for r in ratios:
        if r < 1.0:
            schemes.append((f"mcl@{r:g}", "mcl", r))
            schemes.append((f"naive@{r:g}", "naive", r))
    os.makedirs(args.out_dir, exist_ok=True)
    for name, regime, ratio in schemes:
        cfg = TrainConfig.from_dict(
            {**config.to_dict(), "n_subsets": _ratio_to_subsets(ratio)})
        _, report = _train_once(pool, cfg, regime)
        per_pass = max(e.distance_entries for e in report.epochs)
        rows.append({
            "scheme": name, "ratio": ratio,
            "mAP": report.final_map, "rank1": report.final_rank1,
            "entries": report.total_entries, "peak_bytes": per_pass * 8,
            "seconds": report.total_seconds,
        })
        print(f"{name}: mAP {report.final_map:.4f} rank1 "
              f"{report.final_rank1:.4f} peak_bytes {per_pass * 8}")
    with open(os.path.join(args.out_dir, "compare.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["scheme", "ratio", "mAP", "rank1",
                                           "entries", "peak_bytes", "seconds"])
        w.writeheader()
        w.writerows(rows)
    # budget view: best mAP attainable under each per-pass byte budget
    with open(os.path.join(args.out_dir, "budget_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget_bytes", "scheme", "mAP"])
        for budget in sorted({row["peak_bytes"] for row in rows}):
            fits = [row for row in rows if row["peak_bytes"] <= budget]
            best = max(fits, key=lambda row: row["mAP"])
            w.writerow([budget, best["scheme"], f"{best['mAP']:.6f}"])
    manifest = RunManifest(
        command=sys.argv[1:], config=config.to_dict(), seed=config.seed,
        input_hashes={args.pool: _sha256(args.pool)},
        outputs=["compare.csv", "budget_sweep.csv"])
    manifest.write(os.path.join(args.out_dir, "manifest.json"))
    return EXIT_OK


def cmd_eval(args) -> int:
    pool = load_pool(args.pool)
    if args.identity_init:
        params = EncoderParams.identity_init(pool.d_raw, min(pool.d_raw, args.d_emb))
    else:
        params = load_checkpoint(args.checkpoint)
    _, query_pos, gallery_pos = holdout_split(pool, args.holdout)
    qv = encode_batch(params, pool.features[query_pos].astype(np.float64))
    gv = encode_batch(params, pool.features[gallery_pos].astype(np.float64))
    mean_ap, cmc = compute_map_cmc(qv, gv, pool.identities[query_pos],
                                   pool.identities[gallery_pos])
    out = {"mean_ap": mean_ap, "rank1": float(cmc[0]),
           "rank5": float(cmc[4]) if cmc.size >= 5 else float(cmc[-1]),
           "cmc": [float(x) for x in cmc],
           "n_query": int(query_pos.size), "n_gallery": int(gallery_pos.size)}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    pool = load_pool(args.pool)
    params = load_checkpoint(args.checkpoint)
    emb = encode_batch(params, pool.features.astype(np.float64))
    out_pool = Pool(emb.astype(np.float32), pool.identities,
                    sample_ids=pool.sample_ids)
    write_features(out_pool, args.out, include_labels=True)
    print(f"wrote {len(out_pool)} embeddings x {out_pool.d_raw} dims to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mcl",
        description="subset-clustered two-phase representation training")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic feature pool")
    g.add_argument("--ids", type=int, default=200)
    g.add_argument("--per-id", type=int, default=30)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--sigma", type=float, default=0.35)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("-o", "--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one regime and emit artifacts")
    t.add_argument("pool")
    t.add_argument("--regime", choices=REGIMES, default="mcl")
    t.add_argument("-o", "--out-dir", default="run")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="regime comparison table + budget sweep")
    c.add_argument("pool")
    c.add_argument("--ratios", default="1.0,0.5,0.25",
                   help="comma list of meta-training fractions")
    c.add_argument("-o", "--out-dir", default="compare")
    _add_train_flags(c)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    e.add_argument("pool")
    e.add_argument("--checkpoint")
    e.add_argument("--identity-init", action="store_true",
                   help="evaluate an untrained linear projection instead")
    e.add_argument("--d-emb", type=int, default=64)
    e.add_argument("--holdout", type=float, default=0.25)
    e.add_argument("-o", "--out", default=None)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump-embeddings", help="export encoded pool as MCLF")
    d.add_argument("pool")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("-o", "--out", required=True)
    d.set_defaults(func=cmd_dump_embeddings)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "eval" and not args.identity_init and not args.checkpoint:
        ap.error("eval needs --checkpoint or --identity-init")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FeatureFileError, NoClustersError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
