"""Command-line surface: preprocess -> train -> evaluate -> report.

Subcommands:

    preprocess    run the cleaning pipeline over a dataset tree into a cache
    train         cross-validated training (or a lambda sweep) from a cache
    evaluate      score a saved checkpoint against a cached dataset
    report        render a completed run directory as plain-text tables
    frame-dump    ASCII view of one frame, raw vs preprocessed
    augment-stats empirical firing frequencies of the augmentation steps
    synth         write a small synthetic dataset tree (demos, smoke tests)

The default dataset root comes from $PRESSNET_DATA_ROOT when --data-root is
omitted. `train --config file.json` reads defaults from a JSON file; explicit
flags always win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import baselines, dataio, harness, signal, synthetic
from .checkpoint import load_checkpoint, restore_net
from .errors import PressnetError, UsageError
from .harness import TrainConfig
from .model import ModelConfig
from .tensor import make_rng

DATA_ROOT_ENV = "PRESSNET_DATA_ROOT"


# ---------------------------------------------------------------------------
# helpers


def _data_root(args) -> str:
    root = args.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise UsageError(
            "no dataset root: pass --data-root or set $" + DATA_ROOT_ENV
            + " (expected layout: <root>/S<subject>/<posture>.txt)")
    return root


def _load_cache(cache_dir, stride: int) -> harness.FlatDataset:
    manifest_path = Path(cache_dir) / "manifest.tsv"
    if not manifest_path.exists():
        raise UsageError(
            f"no preprocessed cache at {cache_dir} (run 'preprocess' first)")
    manifest = dataio.read_manifest(manifest_path)
    sequences = signal.load_clean_sequences(manifest)
    return harness.flatten_sequences(sequences, manifest.taxonomy,
                                     stride=stride)


ASCII_RAMP = " .:-=+*#%@"


def render_frame(frame: np.ndarray) -> str:
    """Map a [0,1] frame to a 32-line ASCII grid."""
    idx = np.clip(frame * (len(ASCII_RAMP) - 1), 0,
                  len(ASCII_RAMP) - 1).astype(int)
    return "\n".join("".join(ASCII_RAMP[v] for v in row) for row in idx)


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    root = _data_root(args)
    manifest, hit = signal.preprocess_dataset(
        root, args.cache_dir, taxonomy=args.taxonomy, trim=args.trim,
        empty_threshold=args.empty_threshold, delimiter=args.delimiter,
        force=args.force)
    if hit:
        print(f"cache hit: {args.cache_dir} already matches the raw data "
              f"({len(manifest.entries)} sequences)")
        return 0
    removed = (Path(args.cache_dir) / "removed.txt").read_text().splitlines()
    print(f"cached {len(manifest.entries)} sequences "
          f"({manifest.total_frames()} frames) into {args.cache_dir}")
    print(f"removed/short sequences: {len(removed)}")
    for line in removed:
        print("  " + line)
    if manifest.warnings:
        print(f"warnings: {len(manifest.warnings)} "
              "(missing subject/posture combinations; see manifest.tsv)")
    return 0


def _train_config_from(args) -> TrainConfig:
    file_cfg = {}
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    return TrainConfig(
        lam=pick(args.lam, "lam", 0.5 if pick(args.scheme, "scheme", "kfold") == "kfold" else 0.2),
        base_lr=pick(args.lr, "base_lr", 2e-5),
        epochs=pick(args.epochs, "epochs", 40),
        batch_size=pick(args.batch_size, "batch_size", 64),
        seed=pick(args.seed, "seed", 0),
        augment=bool(pick(args.augment or None, "augment", False)),
        augment_eval=bool(pick(args.augment_eval or None, "augment_eval", False)),
        scheme=pick(args.scheme, "scheme", "kfold"),
        k=pick(args.k, "k", 10),
        split_level=pick(args.split_level, "split_level", "frame"),
    )


def cmd_train(args) -> int:
    data = _load_cache(args.cache_dir, args.stride)
    config = _train_config_from(args)

    def progress(fold_no, n_folds, report):
        acc = report["posture_coarse"].accuracy
        print(f"fold {fold_no + 1}/{n_folds}: "
              f"coarse posture accuracy {acc:.2f}%", flush=True)

    if args.lambda_sweep:
        lams = [float(v) for v in args.lambda_sweep.split(",")]
        if 0.0 not in lams:
            raise UsageError("--lambda-sweep must include 0 "
                             "(the single-task anchor for the t-test)")
        return _run_sweep(data, config, lams, args.out_dir, progress)

    aggregate = harness.run_experiment(data, config, args.out_dir,
                                       progress=progress)
    _run_baselines(args, data, config)
    print(open(os.path.join(args.out_dir, "summary.txt")).read(), end="")
    return 0


def _run_baselines(args, data, config) -> None:
    if not args.baselines:
        return
    methods = [m.strip() for m in args.baselines.split(",") if m.strip()]
    feats = baselines.extract_feature_matrix(data.x)
    plan = harness.split_for(data, config)
    results = {}
    for method in methods:
        accs = []
        for train_idx, test_idx in plan.folds:
            tr_f, te_f = feats[train_idx], feats[test_idx]
            tr_y = data.coarse_idx[train_idx]
            te_y = data.coarse_idx[test_idx]
            mu, sd = baselines.standardize_fit(tr_f)
            tr_s = baselines.standardize_apply(tr_f, mu, sd)
            te_s = baselines.standardize_apply(te_f, mu, sd)
            if method == "knn":
                pred = baselines.knn_predict(tr_s, tr_y, te_s, k=10)
            elif method == "trees":
                ens = baselines.train_bagged_trees(tr_s, tr_y,
                                                   seed=config.seed)
                pred = baselines.predict_trees(ens, te_s)
            elif method == "mlp":
                model = baselines.mlp_baseline(tr_s, tr_y,
                                               n_classes=len(dataio.CATEGORIES),
                                               seed=config.seed)
                pred = model.predict(te_s)
            else:
                raise UsageError(f"unknown baseline '{method}' "
                                 "(choose from knn, trees, mlp)")
            accs.append(float((pred == te_y).mean()) * 100.0)
        results[method] = {"accuracy_per_fold": accs,
                           "accuracy_mean": float(np.mean(accs))}
        print(f"baseline {method}: coarse accuracy "
              f"{results[method]['accuracy_mean']:.2f}%")
    with open(os.path.join(args.out_dir, "baselines.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_sweep(data, base_config, lams, out_dir, progress) -> int:
    os.makedirs(out_dir, exist_ok=True)
    from dataclasses import replace

    per_lam = {}
    for lam in lams:
        cfg = replace(base_config, lam=lam)
        run_dir = os.path.join(out_dir, f"lam_{lam:g}")
        aggregate = harness.run_experiment(data, cfg, run_dir,
                                           progress=progress)
        per_lam[lam] = aggregate["posture_fine"]["accuracy_per_fold"]
        print(f"lambda={lam:g}: fine posture accuracy "
              f"{aggregate['posture_fine']['accuracy_mean']:.2f}%")

    tests = {}
    anchor = per_lam[0.0]
    for lam in lams:
        if lam == 0.0:
            continue
        t, p, df = harness.welch_t_test(per_lam[lam], anchor)
        tests[f"{lam:g}"] = {
            "t": t, "p": p, "df": df,
            "mean_lambda": float(np.mean(per_lam[lam])),
            "mean_zero": float(np.mean(anchor)),
        }
        print(f"lambda={lam:g} vs 0: t={t:.4f} p={p:.4f} "
              f"(mean {np.mean(per_lam[lam]):.2f}% vs {np.mean(anchor):.2f}%)")
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        json.dump({"accuracy_per_fold": {f"{k:g}": v for k, v in per_lam.items()},
                   "welch_vs_zero": tests}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_evaluate(args) -> int:
    data = _load_cache(args.cache_dir, args.stride)
    ckpt = load_checkpoint(args.checkpoint)
    net = restore_net(ckpt)
    if net.config.num_postures != data.num_postures:
        raise UsageError(
            f"checkpoint expects {net.config.num_postures} postures, "
            f"dataset has {data.num_postures}")
    include_subject = net.config.num_subjects == data.num_subjects
    report = harness.evaluate_model(net, data, np.arange(len(data)),
                                    include_subject=include_subject)
    for task in ("posture_fine", "posture_coarse", "subject"):
        m = report[task]
        if m is None:
            print(f"{task}: skipped (subject count mismatch)")
            continue
        print(f"{task}: accuracy {m.accuracy:.2f}%")
    return 0


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    cfg_path = run / "config.json"
    if not cfg_path.exists():
        raise UsageError(f"{run} is not a run directory (no config.json)")
    cfg = json.loads(cfg_path.read_text())
    n_folds = cfg["folds"]
    missing = [i for i in range(n_folds)
               if not (run / f"fold_{i:02d}" / "metrics.json").exists()]
    if missing or not (run / "DONE").exists():
        print(f"incomplete run: missing folds {missing}" if missing
              else "incomplete run: no DONE marker", file=sys.stderr)
        return 2

    print((run / "summary.txt").read_text(), end="")
    print()
    print("fold  fine-acc  coarse-acc  subject-acc")
    for i in range(n_folds):
        m = json.loads((run / f"fold_{i:02d}" / "metrics.json").read_text())
        subj = (f"{m['subject']['accuracy']:9.2f}"
                if m.get("subject") else "        -")
        print(f"{i:4d}  {m['posture_fine']['accuracy']:8.2f}  "
              f"{m['posture_coarse']['accuracy']:10.2f}  {subj}")
    if args.confusion:
        total = None
        for i in range(n_folds):
            cm = np.loadtxt(run / f"fold_{i:02d}" / "cm_coarse.txt",
                            dtype=np.int64, ndmin=2)
            total = cm if total is None else total + cm
        print("\npooled coarse confusion (rows true, cols predicted):")
        for r, name in zip(total, dataio.CATEGORIES):
            print(f"  {name:>7s} " + " ".join(f"{v:7d}" for v in r))
    if args.curves:
        for i in range(n_folds):
            print(f"\nfold {i} curves:")
            print((run / f"fold_{i:02d}" / "curves.tsv").read_text(), end="")
    return 0


def cmd_frame_dump(args) -> int:
    seq = dataio.parse_frame_file(args.file, delimiter=args.delimiter,
                                  subject_id=args.subject or 0,
                                  posture_id=args.posture or 0)
    if not 0 <= args.index < len(seq):
        raise UsageError(f"frame index {args.index} out of range "
                         f"(sequence has {len(seq)} frames)")
    raw = seq.frames[args.index]
    cleaned = signal.normalize_frames(signal.median_filter_3d(seq.frames))
    print(f"frame {args.index} of {args.file} (raw, scaled to sensor range):")
    print(render_frame(np.clip(raw / dataio.SENSOR_MAX, 0, 1)))
    print("\nsame frame after median filter + normalization (no trim):")
    print(render_frame(cleaned[args.index]))
    return 0


def cmd_augment_stats(args) -> int:
    policy = signal.AugmentPolicy()
    rng = make_rng(args.seed, 95)
    counts = np.zeros(4, dtype=np.int64)
    for _ in range(args.draws):
        plan = signal.augment_plan(policy, rng)
        counts += [plan["rot180"], plan["dx"] is not None,
                   plan["dy"] is not None, plan["angle"] is not None]
    names = ("rotate-180", "translate-x", "translate-y", "rotate-free")
    expected = policy.probabilities()
    print(f"{args.draws} draws, seed {args.seed}:")
    for name, c, e in zip(names, counts, expected):
        print(f"  {name:12s} fired {c:6d} times "
              f"({c / args.draws:.4f}; configured {e:.2f})")
    return 0


def cmd_synth(args) -> int:
    synthetic.write_synthetic_dataset(args.out, subjects=args.subjects,
                                      postures=args.postures,
                                      frames_per_seq=args.frames,
                                      seed=args.seed)
    print(f"wrote {args.subjects} subjects x {args.postures} postures "
          f"x {args.frames} frames under {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pressnet",
        description="Pressure-map posture and subject recognition toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean a dataset tree into a cache")
    p.add_argument("--data-root", default=None)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--taxonomy", default=None,
                   help="taxonomy file (default: built-in mapping)")
    p.add_argument("--trim", type=int, default=3)
    p.add_argument("--empty-threshold", type=float, default=1.0)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--force", action="store_true",
                   help="recompute even when the cache fingerprint matches")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="cross-validated training from a cache")
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--scheme", choices=("kfold", "loso"), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda-sweep", default=None,
                   help="comma list of lambda values; must include 0")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--stride", type=int, default=1,
                   help="keep every n-th frame (runtime bound)")
    p.add_argument("--split-level", choices=("frame", "sequence"), default=None)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--augment-eval", action="store_true")
    p.add_argument("--baselines", default=None,
                   help="comma list from {knn,trees,mlp} to run alongside")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint against a cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render a completed run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--confusion", action="store_true",
                   help="print the pooled coarse confusion matrix")
    p.add_argument("--curves", action="store_true",
                   help="print per-epoch loss curves")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("frame-dump", help="ASCII view of one frame")
    p.add_argument("--file", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--subject", type=int, default=None)
    p.add_argument("--posture", type=int, default=None)
    p.set_defaults(func=cmd_frame_dump)

    p = sub.add_parser("augment-stats",
                       help="empirical augmentation firing frequencies")
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_stats)

    p = sub.add_parser("synth", help="write a synthetic dataset tree")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--postures", type=int, default=4)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PressnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
