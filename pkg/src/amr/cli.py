"""Command line entry point: ``amr <subcommand> ...``.

Every file written here is CSV or JSON (plus PNG figures next to the CSVs)
and carries the hash of the configuration that produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import KC, LEARNER
from .hingraph import Dataset, load_dataset, load_store, save_dataset

log = logging.getLogger("amr")


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


def load_any(path) -> Dataset:
    """A ``.npz`` graph store or a text descriptor."""
    path = Path(path)
    return load_store(path) if path.suffix == ".npz" else load_dataset(path)


def _pathsets(args, ds, cfg):
    from .pathgen import biwalk, load_pathset
    if getattr(args, "paths", None):
        d = Path(args.paths)
        return load_pathset(d / "learner.paths"), load_pathset(d / "kc.paths")
    return biwalk(ds.graph, LEARNER, cfg.max_len, cfg.p), biwalk(ds.graph, KC, cfg.max_len, cfg.p)


def _config(args):
    from .trainer import TrainConfig, read_config
    cfg = read_config(args.config)[0] if getattr(args, "config", None) else TrainConfig()
    for kv in getattr(args, "set", None) or []:
        key, sep, value = kv.partition("=")
        if not sep or not hasattr(cfg, key):
            raise SystemExit(f"amr: bad --set {kv!r}, expected KEY=VALUE with KEY a config field")
        cfg = cfg.replace(**{key: type(getattr(cfg, key))(value) if not isinstance(getattr(cfg, key), bool)
                             else value.lower() in ("1", "true", "yes")})
    return cfg


def _restore(ckpt_path, data_path=None, paths=None):
    from .trainer import TrainHistory, TrainResult, build_model, load_checkpoint, prepare
    ck = load_checkpoint(ckpt_path)
    cfg = ck["config"]
    data_path = data_path or ck["data"].get("data")
    ds = load_any(data_path)
    ns = argparse.Namespace(paths=paths or ck["data"].get("paths"))
    pathsets = _pathsets(ns, ds, cfg)
    fit, val, inp = prepare(cfg, ds, pathsets)
    model = build_model(cfg, inp.n_learners, inp.n_kcs)
    model.load_state_dict(ck["state_dict"])
    model.eval()
    return TrainResult(model, TrainHistory(best_epoch=ck.get("best_epoch")), inp, cfg, fit, val), ds, pathsets


# -- subcommands ----------------------------------------------------------------
def cmd_ingest(args):
    ds = load_dataset(args.descriptor)
    save_dataset(args.out, ds)
    g = ds.graph
    summary = {"nodes": {t: g.num_nodes(t) for t in g.node_types},
               "edges": {f"{a}-{b}": g.num_edges(a, b) for a, b in g.relation_keys},
               "interactions": len(ds.interactions), "test_interactions": len(ds.interactions.test())}
    summary["config_hash"] = _hash({"descriptor": str(args.descriptor)})
    _dump(Path(args.out).with_suffix(".json"), summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_walk(args):
    from .pathgen import biwalk, path_count_stats, save_pathset
    ds = load_any(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = None if args.p <= 0 else args.p
    stats = {"max_len": args.max_len, "p": p, "config_hash": _hash({"max_len": args.max_len, "p": p})}
    for side in (LEARNER, KC):
        ps = biwalk(ds.graph, side, args.max_len, p)
        save_pathset(out / f"{side}.paths", ps)
        stats[side] = {"pairs": len(ps), "paths": ps.num_paths(), "mean_paths_per_node": path_count_stats(ps)}
    _dump(out / "walk.json", stats)
    print(json.dumps(stats, sort_keys=True))


def cmd_train(args):
    from .trainer import save_checkpoint, train, write_config
    cfg = _config(args)
    ds = load_any(args.data)
    result = train(cfg, ds, pathsets=_pathsets(args, ds, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.pt", result,
                    {"data": str(Path(args.data).resolve()), "paths": str(Path(args.paths).resolve()) if args.paths else None})
    result.history.to_csv(out / "train_log.csv", cfg.hash())
    write_config(out / "config.txt", cfg)
    best = result.history.best
    summary = {"config_hash": cfg.hash(), "best_epoch": result.history.best_epoch, "epochs_run": len(result.history),
               "best_HR@5": best.hr5 if best else None, "best_nDCG@5": best.ndcg5 if best else None}
    _dump(out / "train_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_evaluate(args):
    from .experiments import evaluate_result
    result, ds, _ = _restore(args.checkpoint, args.data, args.paths)
    rep = evaluate_result(result, ds, seed=args.seed)
    rep.save(args.out)
    print(json.dumps(rep.to_dict(), sort_keys=True))


def cmd_ablate(args):
    from .experiments import run_ablation, save_ablation
    cfg = _config(args)
    ds = load_any(args.data)
    rows = run_ablation(args.axis, args.values.split(","), cfg, ds)
    save_ablation(rows, args.out, cfg, plot=not args.no_plot)
    for r in rows:
        print(json.dumps(r, sort_keys=True))


def cmd_export_plots(args):
    from .experiments import export_aspect_importance, export_edge_feature_heatmap, sample_pairs
    from .plots import plot_ablation
    result, ds, pathsets = _restore(args.checkpoint, args.data, args.paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = sample_pairs(result.inputs.n_learners, result.inputs.n_kcs, args.pairs, args.seed)
    summary = {"config_hash": result.config.hash()}
    if result.config.model == "amr":
        imp = export_aspect_importance(result, pairs, out / "aspect_importance.csv", pathsets, plot=not args.no_plot)
        summary["aspect_importance"] = {k: v for k, v in imp.items() if k != "means"}
        for side, ps in ((LEARNER, pathsets[0]), (KC, pathsets[1])):
            try:
                heat = export_edge_feature_heatmap(result, ps, out / f"edge_features_{side}.csv", side,
                                                   max_rows=args.rows, plot=not args.no_plot)
                summary[f"edge_features_{side}"] = {"signature": "-".join(heat["signature"]),
                                                    "rows": len(heat["pairs"]), "cos_mean": heat["mean"]}
            except ValueError as exc:
                log.warning("skipping %s edge heatmap: %s", side, exc)
    else:
        log.warning("model '%s' has no attention or edge features to export", result.config.model)
    ablation = Path(args.checkpoint).parent / "ablation.csv"
    if ablation.exists() and not args.no_plot:
        from .experiments import read_csv
        rows = read_csv(ablation)
        rows = [{**r, **{k: float(v) for k, v in r.items() if "@" in k}} for r in rows]
        plot_ablation(rows, rows[0]["axis"], out / "ablation.png")
    _dump(out / "export_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_synth(args):
    from .synth import planted_dataset, write_dataset
    ds = planted_dataset(n_learners=args.learners, n_kcs=args.kcs, n_blocks=args.blocks, n_aspects=args.aspects,
                         interactions_per_learner=args.interactions, embedding_dim=args.dim, seed=args.seed)
    desc = write_dataset(ds, args.out, args.name)
    truth = ds.meta["truth"]
    params = {k: getattr(args, k) for k in ("learners", "kcs", "blocks", "aspects", "interactions", "dim", "seed")}
    np.savetxt(Path(args.out) / "kc_attributes.csv", truth["kc_attr"], fmt="%d", delimiter=",",
               header=f"config_hash={_hash(params)}")
    _dump(Path(args.out) / "synth.json", {"config_hash": _hash(params), "descriptor": str(desc), **params})
    print(desc)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amr", description="Aspect-aware metapath recommender for learner-KC data.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="descriptor -> .npz graph store")
    p.add_argument("descriptor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("walk", help="graph -> learner/kc path set files")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=5)
    p.add_argument("--p", type=int, default=10, help="paths kept per pair (<= 0 keeps all)")
    p.set_defaults(func=cmd_walk)

    def train_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="config + data -> checkpoint and training log")
    train_args(p)
    p.add_argument("--paths", help="directory written by 'walk'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="checkpoint -> metrics JSON on the test split")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--paths")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one axis -> CSV table (+ PNG)")
    train_args(p)
    p.add_argument("--axis", required=True, choices=["aspects", "path_length", "gnn_variant"])
    p.add_argument("--values", required=True, help="comma separated, e.g. 2,3,4")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-plots", help="checkpoint -> aspect-importance and edge-feature CSVs (+ PNGs)")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--paths")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--rows", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_export_plots)

    p = sub.add_parser("synth", help="write a planted block-structure dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="planted")
    p.add_argument("--learners", type=int, default=400)
    p.add_argument("--kcs", type=int, default=400)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--aspects", type=int, default=4)
    p.add_argument("--interactions", type=int, default=6)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
