"""Command-line entry point.

Every subcommand writes its outputs plus ``<primary output>.manifest.json``
recording the resolved configuration and the SHA-256 of every input file.
``gennape replay MANIFEST`` reruns the command from that record.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import container
from .encoder import EncoderConfig, encode_batch, load_params, save_params, train_encoder
from .errors import GennapeError
from .families import FamilyKind, build_dataset, default_oracle, read_dataset, write_dataset
from .fcm import GRID_C, GRID_M, FcmModel, fcm_fit, fit_reducer, grid_search
from .graph import compute_flops, graph_to_dict
from .metrics import ranking_report
from .pipeline import REGRESSION, VARIANTS, GraphPredictor, ModelSizes, load_predictor, save_predictor, train_predictor
from .predictor.combine import CONSTITUENTS, gennape_combine
from .predictor.finetune import N_SAMPLES, select_samples
from .predictor.training import TrainConfig
from .search import SearchConfig, local_search, write_trajectory
from .spectral import read_signature_cache, signature, write_signature_cache

MANIFEST_SUFFIX = ".manifest.json"
_UNRECORDED = {"quiet", "config", "func", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class Context:
    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.inputs: list[str] = []

    def progress(self, msg: str) -> None:
        if not self.quiet:
            print(msg, file=sys.stderr, flush=True)

    def reporter(self) -> Callable[[str], None] | None:
        return None if self.quiet else self.progress

    def input(self, path: str) -> str:
        self.inputs.append(path)
        return path


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _records(ctx: Context, path: str):
    return read_dataset(ctx.input(path))


# --------------------------------------------------------------------------- commands


def cmd_gen(args, ctx: Context) -> str:
    oracle = default_oracle(args.family)
    records = build_dataset(args.family, args.n, oracle, args.seed)
    ctx.progress(f"generated {len(records)} {args.family} graphs")
    write_dataset(args.out, records)
    return args.out


def cmd_split(args, ctx: Context) -> str:
    records = _records(ctx, args.data)
    n = len(records)
    order = np.random.default_rng(args.seed).permutation(n)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    parts = {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    for name, idx in parts.items():
        write_dataset(f"{args.out_prefix}.{name}.jsonl", [records[i] for i in sorted(idx)])
        ctx.progress(f"{name}: {len(idx)} records")
    return f"{args.out_prefix}.train.jsonl"


def _signatures(ctx: Context, graphs, q: int, cache: str | None) -> np.ndarray:
    if cache and Path(cache).exists():
        stored = read_signature_cache(ctx.input(cache))
        if all(g.name in stored for g in graphs):
            return np.array([stored[g.name] for g in graphs])
    sigs = np.array([signature(g, q) for g in graphs])
    if cache:
        write_signature_cache(cache, [g.name for g in graphs], sigs)
    return sigs


def cmd_train_encoder(args, ctx: Context) -> str:
    graphs = [r.graph for r in _records(ctx, args.data)]
    config = EncoderConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        temperature=args.temperature,
        dropout_rate=args.dropout,
        alpha_sign=args.alpha_sign,
        aux_flops_weight=args.aux_weight,
        seed=args.seed,
    )
    sigs = _signatures(ctx, graphs, config.q, args.signature_cache)
    params, log = train_encoder(graphs, config, sigs, ctx.reporter())
    save_params(args.out, params)
    _write_json(args.out + ".log.json", log)
    return args.out


def cmd_embed(args, ctx: Context) -> str:
    params = load_params(ctx.input(args.encoder))
    records = _records(ctx, args.data)
    emb = encode_batch([r.graph for r in records], params)
    container.save(args.out, {"embeddings": emb}, {"names": [r.graph.name for r in records]})
    return args.out


def _train_config(args, prefix: str = "") -> TrainConfig:
    return TrainConfig(
        epochs=getattr(args, prefix + "epochs"),
        lr=getattr(args, prefix + "lr"),
        batch_size=getattr(args, prefix + "batch_size"),
        seed=args.seed,
    )


def _sizes(args) -> ModelSizes:
    return ModelSizes(args.head_hidden, args.head_layers, args.pair_hidden, args.pair_layers)


def cmd_cluster(args, ctx: Context) -> str:
    params = load_params(ctx.input(args.encoder))
    records = _records(ctx, args.data)
    graphs = [r.graph for r in records]
    emb = encode_batch(graphs, params)
    flops = [r.flops_g for r in records]
    reducer = fit_reducer(emb, flops)
    x = reducer.transform(emb, flops)
    scores = None
    if args.grid:
        if not args.val:
            raise UsageError("--grid needs --val")
        val = _records(ctx, args.val)
        val_graphs = [r.graph for r in val]
        val_acc = np.array([r.accuracy for r in val])
        acc = np.array([r.accuracy for r in records])
        from .metrics import srcc

        def trainer(model: FcmModel, _validation) -> float:
            model.reducer = reducer
            ctx.progress(f"grid cell C={model.C} m={model.m}")
            pred = train_predictor(
                "cl+fcm+t", graphs, acc, params, model, _train_config(args, "head_"), _sizes(args), embeddings=emb
            )
            return srcc(pred.predict(val_graphs), val_acc)

        result = grid_search(x, None, trainer, args.seed, args.grid_c, args.grid_m, reducer)
        model = result.model
        scores = {f"{c},{m}": s for (c, m), s in sorted(result.scores.items())}
    else:
        model = fcm_fit(x, args.C, args.m, args.seed, reducer=reducer)
    model.reducer = reducer
    ctx.progress(f"fcm C={model.C} m={model.m} iterations={model.n_iter}")
    container.save(
        args.out,
        container.with_prefix("fcm", model.to_arrays()),
        {"fcm": {"C": model.C, "m": model.m, "n_iter": model.n_iter, "grid_scores": scores}},
    )
    return args.out


def load_fcm(path: str) -> FcmModel:
    arrays, _ = container.load(path)
    return FcmModel.from_arrays(container.section("fcm", arrays))


def cmd_train_predictor(args, ctx: Context) -> str:
    records = _records(ctx, args.data)
    encoder = fcm = None
    if args.variant not in ("baseline-gnn", "flops"):
        if not args.encoder:
            raise UsageError(f"--encoder is required for variant {args.variant}")
        encoder = load_params(ctx.input(args.encoder))
    if args.variant.endswith("fcm") or "+fcm+" in args.variant:
        if not args.fcm:
            raise UsageError(f"--fcm is required for variant {args.variant}")
        fcm = load_fcm(ctx.input(args.fcm))
    pred = train_predictor(
        args.variant,
        [r.graph for r in records],
        [r.accuracy for r in records],
        encoder,
        fcm,
        _train_config(args),
        _sizes(args),
        ctx.reporter(),
    )
    save_predictor(args.out, pred)
    return args.out


def cmd_fine_tune(args, ctx: Context) -> str:
    pred = load_predictor(ctx.input(args.model))
    records = _records(ctx, args.data)
    idx = select_samples(len(records), args.seed, args.samples)
    tuned = pred.fine_tuned(
        [records[i].graph for i in idx], [records[i].accuracy for i in idx], _train_config(args), ctx.reporter()
    )
    save_predictor(args.out, tuned)
    _write_json(args.out + ".samples.json", {"seed": args.seed, "indices": [int(i) for i in idx]})
    return args.out


def _report(pred: GraphPredictor, records, ks) -> dict:
    scores = pred.predict([r.graph for r in records])
    labels = 100.0 * np.array([r.accuracy for r in records])
    return ranking_report(scores, labels, ks, with_mae=pred.variant in REGRESSION).to_dict()


def _aggregate(reports: list[dict]) -> dict:
    def stat(fn, key, sub=None):
        vals = [r[key] if sub is None else r[key][sub] for r in reports]
        return None if any(v is None for v in vals) else float(fn(vals))

    out = {}
    for name, fn in (("mean", np.mean), ("std", np.std)):
        out[name] = {k: stat(fn, k) for k in ("mae", "srcc", "kt")}
        out[name]["ndcg"] = {k: stat(fn, "ndcg", k) for k in reports[0]["ndcg"]}
    return out


def cmd_evaluate(args, ctx: Context) -> str:
    pred = load_predictor(ctx.input(args.model))
    records = _records(ctx, args.data)
    ft_samples = args.ft_samples if args.ft_samples is not None else (N_SAMPLES if args.seeds > 1 else 0)
    if args.seeds <= 1 and ft_samples == 0:
        report = {"n": len(records), "variant": pred.variant, **_report(pred, records, args.ndcg_k)}
    else:
        per_seed = []
        for seed in range(args.seeds):
            model, held = pred, records
            if ft_samples > 0:
                idx = select_samples(len(records), seed, ft_samples)
                chosen = set(int(i) for i in idx)
                model = pred.fine_tuned(
                    [records[i].graph for i in idx],
                    [records[i].accuracy for i in idx],
                    TrainConfig(args.ft_epochs, args.ft_lr, 1, seed),
                    ctx.reporter(),
                )
                held = [r for i, r in enumerate(records) if i not in chosen]
            per_seed.append({"seed": seed, **_report(model, held, args.ndcg_k)})
            ctx.progress(f"seed {seed}: srcc {per_seed[-1]['srcc']:.4f}")
        report = {"n": len(records), "variant": pred.variant, "per_seed": per_seed, **_aggregate(per_seed)}
    _write_json(args.out, report)
    return args.out


def cmd_search(args, ctx: Context) -> str:
    pred = load_predictor(ctx.input(args.model))
    records = _records(ctx, args.seed_data)
    seed_cg = records[args.index].graph
    budget = args.budget
    if budget == "seed":
        budget = compute_flops(seed_cg)
    elif budget is not None:
        budget = float(budget)
    config = SearchConfig(args.iterations, args.top_k, args.mutations, budget, args.seed)
    result = local_search(seed_cg, pred.predict, config)
    write_trajectory(args.out, result.trajectory)
    _write_json(
        args.out + ".best.json",
        {"graph": graph_to_dict(result.best.graph), "score": result.best.predicted, "flops_g": result.best.flops},
    )
    ctx.progress(f"best score {result.best.predicted:.6g} at {result.best.flops:.6g} GFLOPs")
    return args.out


def cmd_gennape(args, ctx: Context) -> str:
    if len(args.models) != len(CONSTITUENTS):
        raise UsageError(f"--models needs {len(CONSTITUENTS)} paths ({', '.join(CONSTITUENTS)})")
    records = _records(ctx, args.data)
    graphs = [r.graph for r in records]
    labels = 100.0 * np.array([r.accuracy for r in records])
    scores = []
    for path in args.models:
        pred = GraphPredictor("flops") if path == "flops" else load_predictor(ctx.input(path))
        scores.append(pred.predict(graphs))
    ft_idx = None
    if args.mode == "fine_tuned":
        ft_idx = select_samples(len(records), args.seed, args.ft_samples)
        combined, weights = gennape_combine(scores, "fine_tuned", ft_idx, labels[ft_idx])
    else:
        combined, weights = gennape_combine(scores, "zero_shot")
    held = np.arange(len(records)) if ft_idx is None else np.setdiff1d(np.arange(len(records)), ft_idx)
    report = ranking_report(combined[held], labels[held], args.ndcg_k, with_mae=False).to_dict()
    report.update(
        mode=args.mode,
        weights={name: float(w) for name, w in zip(CONSTITUENTS, weights)},
        scores=[float(s) for s in combined],
        ft_indices=None if ft_idx is None else [int(i) for i in ft_idx],
    )
    _write_json(args.out, report)
    return args.out


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gennape", description="Computation-graph accuracy predictors and local search.")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p.add_argument("--config", help="flat key = value file; flags override its values")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func, help_: str):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def train_flags(sp, epochs: int, lr: float = 1e-4, batch: int = 32, prefix: str = ""):
        dash = prefix.replace("_", "-")
        sp.add_argument(f"--{dash}epochs", dest=f"{prefix}epochs", type=int, default=epochs)
        sp.add_argument(f"--{dash}lr", dest=f"{prefix}lr", type=float, default=lr)
        sp.add_argument(f"--{dash}batch-size", dest=f"{prefix}batch_size", type=int, default=batch)

    def size_flags(sp):
        sizes = ModelSizes()
        sp.add_argument("--head-hidden", type=int, default=sizes.head_hidden)
        sp.add_argument("--head-layers", type=int, default=sizes.head_layers)
        sp.add_argument("--pair-hidden", type=int, default=sizes.pair_hidden)
        sp.add_argument("--pair-layers", type=int, default=sizes.pair_layers)

    sp = add("gen", cmd_gen, "generate a synthetic family with oracle labels")
    sp.add_argument("--family", required=True, choices=[k.value for k in FamilyKind])
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("split", cmd_split, "seeded 80/10/10 train/val/test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-prefix", required=True)

    enc = EncoderConfig()
    sp = add("train-encoder", cmd_train_encoder, "contrastive encoder pretraining")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    train_flags(sp, enc.epochs, enc.lr, enc.batch_size)
    sp.add_argument("--temperature", type=float, default=enc.temperature)
    sp.add_argument("--dropout", type=float, default=enc.dropout_rate)
    sp.add_argument("--alpha-sign", type=int, choices=(1, -1), default=enc.alpha_sign)
    sp.add_argument("--aux-weight", type=float, default=enc.aux_flops_weight)
    sp.add_argument("--signature-cache")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("embed", cmd_embed, "write graph embeddings")
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("cluster", cmd_cluster, "fit fuzzy c-means (or grid-search C and m)")
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--C", type=int, default=16)
    sp.add_argument("--m", type=float, default=4.0)
    sp.add_argument("--grid", action="store_true")
    sp.add_argument("--grid-c", type=int, nargs="+", default=list(GRID_C))
    sp.add_argument("--grid-m", type=float, nargs="+", default=list(GRID_M))
    sp.add_argument("--val")
    train_flags(sp, 40, prefix="head_")
    size_flags(sp)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train-predictor", cmd_train_predictor, "train one predictor variant")
    sp.add_argument("--variant", required=True, choices=VARIANTS)
    sp.add_argument("--data", required=True)
    sp.add_argument("--encoder")
    sp.add_argument("--fcm")
    sp.add_argument("--out", required=True)
    train_flags(sp, 40)
    size_flags(sp)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("fine-tune", cmd_fine_tune, "fine-tune on a few target-family samples")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=N_SAMPLES)
    train_flags(sp, 100, batch=1)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("evaluate", cmd_evaluate, "ranking report on a dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", type=int, default=1)
    sp.add_argument("--ft-samples", type=int, default=None, help=f"fine-tune per seed (default {N_SAMPLES} when --seeds > 1)")
    sp.add_argument("--ft-epochs", type=int, default=100)
    sp.add_argument("--ft-lr", type=float, default=1e-4)
    sp.add_argument("--ndcg-k", type=int, nargs="+", default=[10, 50])

    sp = add("search", cmd_search, "mutation local search from a seed graph")
    sp.add_argument("--model", required=True)
    sp.add_argument("--seed-data", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True)
    defaults = SearchConfig()
    sp.add_argument("--iterations", type=int, default=defaults.iterations)
    sp.add_argument("--top-k", type=int, default=defaults.top_k)
    sp.add_argument("--mutations", type=int, default=defaults.mutations_per_parent)
    sp.add_argument("--budget", default=None, help="GFLOPs cap, or 'seed' for the seed graph's FLOPs")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("gennape", cmd_gennape, "combine six constituent predictors")
    sp.add_argument("--models", nargs="+", required=True, help=f"paths in order: {', '.join(CONSTITUENTS)}")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("zero_shot", "fine_tuned"), default="zero_shot")
    sp.add_argument("--ft-samples", type=int, default=N_SAMPLES)
    sp.add_argument("--ndcg-k", type=int, nargs="+", default=[10, 50])
    sp.add_argument("--seed", type=int, default=0)

    sp = add("replay", None, "rerun a command from its manifest")
    sp.add_argument("manifest")
    return p


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "func"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            val: Any = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            conv = action.type or str
            val = [conv(v) for v in raw.replace(",", " ").split()]
        else:
            val = (action.type or str)(raw)
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"config key {key!r}: {val!r} not in {list(action.choices)}")
        defaults[key] = val
        action.required = False
    subparser.set_defaults(**defaults)


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        command = next((a for a in argv if a in sub_action.choices), None)
        if command is None:
            raise UsageError("a subcommand is required")
        _apply_config(sub_action.choices[command], read_config_file(known.config))
    return parser.parse_args(argv)


def _resolved(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}


def execute(command: str, config: dict, quiet: bool) -> str:
    parser = build_parser()
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    func = sub_action.choices[command].get_default("func")
    args = argparse.Namespace(**config)
    ctx = Context(quiet)
    primary = func(args, ctx)
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: sha256_file(p) for p in sorted(set(ctx.inputs))},
    }
    _write_json(primary + MANIFEST_SUFFIX, manifest)
    return primary


def replay(path: str, quiet: bool) -> str:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    for inp, digest in manifest["inputs"].items():
        if sha256_file(inp) != digest:
            raise GennapeError(f"input {inp} changed since the manifest was written")
    return execute(manifest["command"], manifest["config"], quiet)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            replay(args.manifest, args.quiet)
        else:
            execute(args.command, _resolved(args), args.quiet)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (GennapeError, OSError, ValueError, KeyError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
