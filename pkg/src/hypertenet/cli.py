"""Command-line entry point.

Usage::

    hypertenet [--config run.json] COMMAND [--section.key=value ...]

Commands, in pipeline order: ``synth`` (write the bundled synthetic corpus),
``prepare``, ``build-graphs``, ``train``, ``evaluate``, ``recommend``,
``ablate`` and ``report``. Every artifact lands under ``output_dir`` and
records the run configuration fingerprint. Set ``HYPERTENET_LOG`` (e.g.
``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, UsageError, parse_config
from .data import build_index, load_interactions, load_split, save_split, split_leave_one_out
from .knn import KnnParams, build_knn_graphs, cache_key, load_adjacency, save_adjacency
from .model import HyperTeNet
from .params import load_checkpoint, save_checkpoint, store_from_values
from .synthetic import generate_corpus, write_corpus
from .training import VARIANTS, ablation_suite, evaluate, train

log = logging.getLogger("hypertenet")

COMMANDS = ("synth", "prepare", "build-graphs", "train", "evaluate", "recommend", "ablate", "report")


class MissingArtifact(RuntimeError):
    pass


class Paths:
    def __init__(self, cfg: RunConfig):
        self.root = Path(cfg.output_dir)
        self.split = self.root / "split"
        self.knn = self.root / "knn.txt"
        self.model = self.root / "model.npz"
        self.train_log = self.root / "train_log.jsonl"
        self.timing = self.root / "timing.jsonl"
        self.ablation = self.root / "ablation"

    def metrics(self, phase: str) -> Path:
        return self.root / f"metrics_{phase}.json"


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.to_dict(), "config_fingerprint": cfg.fingerprint(), "seed": cfg.train.seed}


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def knn_params(cfg: RunConfig) -> KnnParams:
    k = cfg.knn
    return KnnParams(
        k=k.k, walks_per_node=k.walks_per_node, walk_length=k.walk_length, window=k.window,
        negatives=k.negatives, epochs=k.epochs, dim=k.dim or cfg.train.dim, seed=k.seed,
    )


def _need(path: Path, command: str) -> None:
    if not path.exists():
        raise MissingArtifact(f"{path} not found: run `{command}` first")


def _load_split(paths: Paths):
    _need(paths.split / "split.json", "prepare")
    return load_split(paths.split)


def _load_graphs(paths: Paths, split, cfg: RunConfig):
    _need(paths.knn, "build-graphs")
    key = cache_key(split.index.fingerprint(), knn_params(cfg))
    try:
        return load_adjacency(paths.knn, key)
    except ValueError as e:
        raise MissingArtifact(f"{e}: run `build-graphs` again") from None


def _load_model(paths: Paths, split, cfg: RunConfig) -> HyperTeNet:
    _need(paths.model, "train")
    values, _ = load_checkpoint(paths.model)
    adj = _load_graphs(paths, split, cfg)
    ix = split.index
    return HyperTeNet(ix.n_users, ix.n_items, ix.n_lists, adj, cfg.train, store_from_values(values))


# commands ------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> None:
    target = Path(args.out or cfg.data.input or Path(cfg.output_dir) / "synthetic.csv")
    records, _ = generate_corpus(seed=args.seed)
    write_corpus(records, target)
    print(f"wrote {len(records)} interactions to {target}")


def cmd_prepare(cfg: RunConfig, args) -> None:
    if not cfg.data.input:
        raise UsageError("data.input is not set (pass --data.input=PATH or use `synth`)")
    records = load_interactions(cfg.data.input, cfg.data.format)
    index = build_index(records, cfg.data.min_list_len)
    split = split_leave_one_out(index, cfg.data.split_seed, cfg.data.n_negatives)
    paths = Paths(cfg)
    save_split(split, paths.split, {"config_fingerprint": cfg.fingerprint()})
    print(f"{index.n_users} users, {index.n_items} items, {index.n_lists} lists -> {paths.split}")


def cmd_build_graphs(cfg: RunConfig, args) -> None:
    paths = Paths(cfg)
    split = _load_split(paths)
    params = knn_params(cfg)
    graphs = build_knn_graphs(split.index, params, lists=split.train)
    save_adjacency(paths.knn, graphs, cache_key(split.index.fingerprint(), params))
    print(f"K-NN graphs (k={params.k}) -> {paths.knn}")


def cmd_train(cfg: RunConfig, args) -> None:
    paths = Paths(cfg)
    split = _load_split(paths)
    adj = _load_graphs(paths, split, cfg)
    model = _load_model(paths, split, cfg) if args.resume else None
    model, tlog = train(split, adj, cfg.train, model=model, log_path=paths.train_log)
    tlog.write(paths.train_log)
    tlog.write_timing(paths.timing)
    meta = {**_provenance(cfg), "best_epoch": tlog.best_epoch, "best_valid_ndcg": tlog.best_ndcg}
    save_checkpoint(paths.model, model.store.snapshot(), meta)
    print(f"best epoch {tlog.best_epoch} (valid NDCG@{cfg.train.eval_k}={tlog.best_ndcg:.4f}) -> {paths.model}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    paths = Paths(cfg)
    split = _load_split(paths)
    model = _load_model(paths, split, cfg)
    report = evaluate(model, split, args.phase)
    report.config_fingerprint = cfg.fingerprint()
    _write_atomic(paths.metrics(args.phase), report.to_json())
    print(f"{args.phase}: {report.summary()}")


def cmd_recommend(cfg: RunConfig, args) -> None:
    """Top-N continuation of every list over all items not already in it."""
    paths = Paths(cfg)
    split = _load_split(paths)
    model = _load_model(paths, split, cfg)
    ix = split.index
    histories = ix.items_of_list
    all_items = np.arange(ix.n_items)
    lines = ["user_id\tlist_id\trank\titem_id\tscore\n"]
    for l in range(ix.n_lists):
        cand = np.setdiff1d(all_items, histories[l])
        ranked = model.predict_next(int(ix.user_of_list[l]), l, histories[l], cand)[: cfg.top_n]
        for r, (item, score) in enumerate(ranked, start=1):
            lines.append(f"{ix.user_ids[ix.user_of_list[l]]}\t{ix.list_ids[l]}\t{r}\t{ix.item_ids[item]}\t{score:.6f}\n")
    out = paths.root / "recommendations.tsv"
    _write_atomic(out, "".join(lines))
    _write_atomic(out.with_suffix(".json"), json.dumps(_provenance(cfg), sort_keys=True, indent=1) + "\n")
    print(f"top-{cfg.top_n} for {ix.n_lists} lists -> {out}")


def cmd_ablate(cfg: RunConfig, args) -> None:
    paths = Paths(cfg)
    split = _load_split(paths)
    adj = _load_graphs(paths, split, cfg)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    for name, report in ablation_suite(split, adj, cfg.train, variants).items():
        report.config_fingerprint = cfg.fingerprint()
        _write_atomic(paths.ablation / f"{name}.json", report.to_json())
        print(f"{name:12s} {report.summary()}")


def cmd_report(cfg: RunConfig, args) -> None:
    from .metrics import MetricsReport

    paths = Paths(cfg)
    files = [Path(f) for f in args.reports] or sorted(paths.ablation.glob("*.json"))
    if not files:
        raise MissingArtifact(f"no reports in {paths.ablation}: run `ablate` first")
    rows = []
    for f in files:
        rep = MetricsReport.from_json(f.read_text(encoding="utf-8"))
        rows.append({"variant": f.stem, "n": rep.n, "hr": rep.hr, "ndcg": rep.ndcg, "map": rep.map,
                     "config_fingerprint": rep.config_fingerprint})
    n = rows[0]["n"]
    width = max(len(r["variant"]) for r in rows) + 2
    table = f"{'variant':<{width}}HR@{n:<7}NDCG@{n:<5}MAP@{n}\n" + "".join(
        f"{r['variant']:<{width}}{r['hr']:<10.4f}{r['ndcg']:<10.4f}{r['map']:.4f}\n" for r in rows
    )
    _write_atomic(paths.root / "report.txt", table)
    _write_atomic(paths.root / "report.json", json.dumps(
        {"rows": rows, **_provenance(cfg)}, sort_keys=True, indent=1) + "\n")
    print(table, end="")


HANDLERS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hypertenet",
        description="Personalised list continuation with graph and sequence networks.",
        epilog="Any config key can be overridden as --section.key=value, e.g. --knn.k=25 --train.lr=0.005.",
    )
    p.add_argument("--config", help="JSON run configuration (see hypertenet.config)")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--phase", choices=("valid", "test"), default="test", help="evaluate: which split to score")
    p.add_argument("--variants", help="ablate: comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--resume", action="store_true", help="train: start from the saved checkpoint")
    p.add_argument("--out", help="synth: output corpus path")
    p.add_argument("--seed", type=int, default=0, help="synth: generator seed")
    p.add_argument("reports", nargs="*", help="report: explicit report JSON files")
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("HYPERTENET_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = [a for a in extra if a.startswith("--") and "=" in a]
    stray = [a for a in extra if a not in overrides]
    if stray:
        parser.error(f"unrecognised arguments: {' '.join(stray)}")
    try:
        cfg = parse_config(args.config, overrides)
        HANDLERS[args.command](cfg, args)
    except (UsageError, MissingArtifact, FileNotFoundError, ValueError) as e:
        print(f"hypertenet {args.command}: error: {e}", file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
