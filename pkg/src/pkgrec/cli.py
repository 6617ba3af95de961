"""Command-line entry points: gen / pretrain / finetune / eval / infer / gradcheck.

Exit codes: 0 success, 1 usage error, 2 missing or invalid input, 3 numerical
failure, 4 checkpoint incompatibility, 5 gradient-check failure.

This module deliberately imports numpy (and everything built on it) lazily,
inside the command functions: ``--threads`` works by pinning the BLAS thread
env vars, which only takes effect if they are set before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4
EXIT_GRADCHECK = 5

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss."""


def _set_thread_env(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _topn_list(raw: str):
    try:
        vals = [int(p) for p in raw.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--topn expects a CSV of ints, got {raw!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError(f"--topn expects positive ints, got {raw!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkgrec",
        description="Multi-relation product-graph pre-training and zero-shot recommendation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True, out_required=True):
        p.add_argument("--config", required=config_required, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    common(p)

    p = sub.add_parser("pretrain", help="pre-train on a dataset directory")
    common(p)
    p.add_argument("--data", default=None, help="dataset directory (default: config data_dir)")

    p = sub.add_parser("finetune", help="fine-tune the relation gate on interactions")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--ckpt", required=True, help="pre-trained checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", choices=("kp", "zsir"), required=True)
    p.add_argument("--setting", choices=("all", "zs"), default="all")
    p.add_argument("--topn", type=_topn_list, default=[20])
    p.add_argument("--emit-plots", action="store_true")

    p = sub.add_parser("infer", help="write fused item embeddings for the inference graph")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    common(p, config_required=False, out_required=False)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=100)

    return parser


# --------------------------------------------------------------- subcommands


def _load_run_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _data_dir(args, cfg):
    data = getattr(args, "data", None) or cfg.data_dir
    if not data:
        raise FileNotFoundError("no dataset directory: pass --data or set data_dir")
    return data


def _load_bundle(args, cfg):
    from .dataset import load_dataset

    return load_dataset(_data_dir(args, cfg))


def _load_params(ckpt_path, bundle):
    """Checkpoint -> (params, embedded RunConfig); geometry checked against the data."""
    from .config import RunConfig
    from .io import CheckpointError, load_checkpoint
    from .model import ParamSet, check_shapes

    ckpt = load_checkpoint(ckpt_path)
    try:
        run_cfg = RunConfig(**ckpt.config)
    except TypeError as exc:
        raise CheckpointError(f"{ckpt_path}: embedded config unusable ({exc})")
    params = ParamSet.from_state(ckpt.tensors)
    try:
        check_shapes(
            params,
            bundle.graph.d_in,
            run_cfg.dim,
            bundle.graph.num_relations,
            run_cfg.gate_reduction,
        )
    except ValueError as exc:
        raise CheckpointError(f"{ckpt_path}: incompatible with dataset: {exc}")
    return params, run_cfg, ckpt


def cmd_gen(args) -> int:
    from .dataset import write_dataset
    from .synthetic import generate_synthetic

    cfg = _load_run_config(args)
    ds = generate_synthetic(cfg.to_synthetic_spec())
    manifest = write_dataset(args.out, ds)
    print(f"wrote dataset to {args.out}")
    print(
        f"items={manifest['num_items']} relations={len(manifest['relations'])} "
        f"triplets={manifest['counts']['triplets']} "
        f"interactions={manifest['counts']['interactions']} "
        f"zs_items={manifest['counts']['zs_items']}"
    )
    return EXIT_OK


def cmd_pretrain(args) -> int:
    import math

    from .io import save_checkpoint
    from .pretrain import history_tsv, pretrain

    cfg = _load_run_config(args)
    bundle = _load_bundle(args, cfg)
    result = pretrain(bundle.train_graph, cfg.to_pretrain_config())
    if any(not math.isfinite(row["total"]) for row in result.history):
        raise NumericalFailure("non-finite total loss during pre-training")

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "pretrain.ckpt")
    save_checkpoint(
        ckpt_path,
        kind="pretrain",
        tensors=result.params.state_arrays(),
        config=cfg.model_dict(),
        meta={
            "best_epoch": result.best_epoch,
            "best_valid_mrr": result.best_valid_mrr,
            "relations": list(bundle.graph.relations),
        },
    )
    with open(os.path.join(args.out, "pretrain_history.tsv"), "w", encoding="utf-8") as f:
        f.write(history_tsv(result.history))
    print(f"wrote {ckpt_path}")
    print(f"best epoch {result.best_epoch} valid MRR {result.best_valid_mrr:.6f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    import math

    from .interactions import chronological_split
    from .finetune import finetune_history_tsv, finetune
    from .io import save_checkpoint

    cfg = _load_run_config(args)
    bundle = _load_bundle(args, cfg)
    params, run_cfg, _ = _load_params(args.ckpt, bundle)

    split = chronological_split(bundle.interactions)
    result = finetune(
        bundle.train_graph,
        params,
        split,
        cfg.to_finetune_config(),
        run_cfg.m_layers,
        num_users=len(bundle.interactions.user_keys),
    )
    if any(not math.isfinite(row["bpr"]) for row in result.history):
        raise NumericalFailure("non-finite ranking loss during fine-tuning")

    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "finetune.ckpt")
    save_checkpoint(
        ckpt_path,
        kind="finetune",
        tensors=result.params.state_arrays(),
        config=dict(run_cfg.model_dict(), **_finetune_overrides(cfg)),
        meta={
            "best_epoch": result.best_epoch,
            "best_valid_ndcg": result.best_valid_ndcg,
            "gate_weights": [float(w) for w in result.gate_weights],
        },
    )
    with open(os.path.join(args.out, "finetune_history.tsv"), "w", encoding="utf-8") as f:
        f.write(finetune_history_tsv(result.history))
    print(f"wrote {ckpt_path}")
    weights = " ".join(f"{w:.4f}" for w in result.gate_weights)
    print(f"best epoch {result.best_epoch} valid NDCG {result.best_valid_ndcg:.6f}")
    print(f"gate weights: {weights}")
    return EXIT_OK


def _finetune_overrides(cfg) -> dict:
    return {
        "finetune_epochs": cfg.finetune_epochs,
        "finetune_lr": cfg.finetune_lr,
        "finetune_l2": cfg.finetune_l2,
        "finetune_batch_size": cfg.finetune_batch_size,
    }


def _zs_oriented_heldout(attach_edges, zs_items):
    """Directed evaluation triplets with a zero-shot head, per relation."""
    import numpy as np

    zs = set(int(i) for i in zs_items)
    out = []
    for e in attach_edges:
        rows = []
        for h, t in e:
            if int(h) in zs:
                rows.append((int(h), int(t)))
            if int(t) in zs:
                rows.append((int(t), int(h)))
        out.append(np.array(rows, dtype=np.int64).reshape(-1, 2))
    return out


def cmd_eval(args) -> int:
    import numpy as np

    from .evaluation import eval_knowledge_prediction, eval_zsir
    from .finetune import inductive_infer
    from .graph import symmetric_neighbor_sets
    from .interactions import chronological_split, per_user_items
    from .pretrain import split_edges

    cfg = _load_run_config(args)
    bundle = _load_bundle(args, cfg)
    params, run_cfg, _ = _load_params(args.ckpt, bundle)

    # Test-time embeddings come from the complete graph (every edge attached);
    # the trained tensors stay frozen.
    _, embs, weights, fused = inductive_infer(
        bundle.train_graph, params, run_cfg.m_layers, bundle.zs_batch
    )

    if args.task == "kp":
        pcfg = run_cfg.to_pretrain_config()
        split = split_edges(bundle.train_graph, pcfg.edge_split, pcfg.seed)
        known = [
            symmetric_neighbor_sets(split.train_graph, r)
            for r in range(bundle.graph.num_relations)
        ]
        zs_held = _zs_oriented_heldout(bundle.zs_batch.attach_edges, bundle.zs_items)
        heldout = [
            np.concatenate([split.test[r], zs_held[r]]).astype(np.int64)
            for r in range(bundle.graph.num_relations)
        ]
        report = eval_knowledge_prediction(
            embs, heldout, known, zs_items=bundle.zs_items, topn=tuple(args.topn)
        )
        report.task = "kp"
        report.setting = args.setting
    else:
        isplit = chronological_split(bundle.interactions)
        num_users = len(bundle.interactions.user_keys)
        report = eval_zsir(
            fused,
            per_user_items(isplit.train, num_users),
            per_user_items(isplit.test, num_users),
            setting=args.setting,
            zs_items=bundle.zs_items,
            topn=tuple(args.topn),
        )
        report.task = "zsir"

    os.makedirs(args.out, exist_ok=True)
    name = f"report_{report.task}_{report.setting}"
    with open(os.path.join(args.out, name + ".tsv"), "w", encoding="utf-8") as f:
        f.write(report.to_tsv())
    if args.emit_plots:
        _write_plot_data(args.out, name, report)
    print(report.format_table())
    print(f"gate weights: {' '.join(f'{w:.4f}' for w in weights)}")
    return EXIT_OK


def _write_plot_data(out_dir, name, report) -> None:
    """One TSV per metric: cohort vs value, ready for external bar plotting."""
    metrics = sorted({k for c in report.cohorts for k in c.metrics})
    for metric in metrics:
        path = os.path.join(out_dir, f"plot_{name}_{metric}.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("cohort\tvalue\n")
            for c in report.cohorts:
                if metric in c.metrics:
                    f.write(f"{c.cohort}\t{c.metrics[metric]:.10f}\n")


def cmd_infer(args) -> int:
    from .finetune import inductive_infer
    from .io import save_features

    cfg = _load_run_config(args)
    bundle = _load_bundle(args, cfg)
    params, run_cfg, _ = _load_params(args.ckpt, bundle)

    graph, _, weights, fused = inductive_infer(
        bundle.train_graph, params, run_cfg.m_layers, bundle.zs_batch
    )

    os.makedirs(args.out, exist_ok=True)
    save_features(os.path.join(args.out, "fused_embeddings.bin"), fused)
    with open(os.path.join(args.out, "items.tsv"), "w", encoding="utf-8") as f:
        for i, key in enumerate(graph.item_keys):
            f.write(f"{i}\t{key}\n")
    with open(os.path.join(args.out, "gate_weights.tsv"), "w", encoding="utf-8") as f:
        f.write("relation\tweight\n")
        for name, w in zip(graph.relations, weights):
            f.write(f"{name}\t{w:.10f}\n")
    print(f"wrote fused embeddings for {graph.num_items} items to {args.out}")
    return EXIT_OK


def gradcheck_setup(seed: int):
    """Deterministic loss closures + parameters for the gradient check.

    Returns (losses dict, ParamSet) on the 20-item fixture, with every loss —
    including the BPR objective — differentiable end to end.
    """
    import numpy as np

    from .interactions import build_interactions, chronological_split, per_user_items
    from .model import ParamSet
    from .pretrain import PretrainConfig, build_fixed_losses
    from .synthetic import gradcheck_fixture

    ds = gradcheck_fixture(seed)
    pcfg = PretrainConfig(dim=8, m_layers=3, k_hops=2, seed=seed)
    params = ParamSet.init(ds.graph.d_in, pcfg.dim, ds.graph.num_relations, seed)
    # Check at a scaled-down parameter point: fresh Glorot weights on top of
    # propagated features saturate the sigmoids, which makes the raw-sum
    # losses huge while some coordinate gradients are tiny — central
    # differences at h=1e-5 then drown in cancellation noise. The gradient
    # code is the same either way; the check point just has to be
    # well-conditioned.
    for tensor in params.named_tensors().values():
        tensor.data = tensor.data * 0.2

    index = {k: i for i, k in enumerate(ds.graph.item_keys)}
    inter = build_interactions(ds.interactions, index)
    split = chronological_split(inter)
    train_sets = per_user_items(split.train, len(inter.user_keys))
    train_arrays = [np.asarray(sorted(set(s.tolist())), dtype=np.int64) for s in train_sets]
    has_history = np.array([len(train_arrays[u]) > 0 for u in split.train.user])
    bpr_events = (
        train_arrays,
        split.train.user[has_history],
        split.train.item[has_history],
    )

    losses = build_fixed_losses(ds.graph, pcfg, params, bpr_events=bpr_events)
    return losses, params


def cmd_gradcheck(args) -> int:
    import time

    from .optim import grad_check

    seed = args.seed if args.seed is not None else 0
    if args.config:
        cfg = _load_run_config(args)
        seed = cfg.seed

    t0 = time.time()
    losses, params = gradcheck_setup(seed)
    order = ["kr", "fr", "hnr", "mra", "total", "bpr"]
    rows = []
    failed = []
    for name in order:
        report = grad_check(losses[name], params.named_tensors(), h=1e-5,
                            max_coords=args.max_coords, seed=seed)
        worst = report.worst()
        ok = report.max_rel_err < args.tol
        rows.append((name, report.max_rel_err, worst.name, ok))
        if not ok:
            failed.append((name, worst.name, report.max_rel_err))

    print(f"{'loss':<8} {'max_rel_err':>14} {'worst_tensor':>16} {'status':>8}")
    for name, err, tensor, ok in rows:
        print(f"{name:<8} {err:>14.3e} {tensor:>16} {'pass' if ok else 'FAIL':>8}")
    print(f"tolerance {args.tol:g}, {time.time() - t0:.2f}s")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.tsv"), "w", encoding="utf-8") as f:
            f.write("loss\tmax_rel_err\tworst_tensor\tstatus\n")
            for name, err, tensor, ok in rows:
                f.write(f"{name}\t{err:.10e}\t{tensor}\t{'pass' if ok else 'fail'}\n")

    if failed:
        detail = ", ".join(f"{n} ({t}: {e:.3e})" for n, t, e in failed)
        print(f"gradient check FAILED: {detail}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        _set_thread_env(args.threads)

    from .config import ConfigError
    from .io import CheckpointError, FormatError

    try:
        return _COMMANDS[args.command](args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        filename = getattr(exc, "filename", None)
        print(f"missing input: {filename or exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
