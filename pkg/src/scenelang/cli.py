"""Command-line surface: dataset generation, training, sampling, analyses."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import ScenelangError
from . import analysis as an
from .captions import build_vocabulary, Vocabulary
from .config import (TrainingConfig, load_generation_config,
                     load_training_config)
from .dataio import SPLIT_FILES, generate_dataset, load_split
from .encoder import aggregate
from .render import save_png
from .scenes import GenerationConfig, sample_scene
from .training import evaluate, load_model, train


def _cmd_gen_data(args) -> int:
    cfg = load_generation_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    counts = generate_dataset(cfg, args.out)
    print(f"wrote {args.out}: train={counts['train']} "
          f"validation={counts['validation']} test={counts['test']}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_training_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    primary_train = load_split(args.data, "train")
    val_set = load_split(args.data, "validation")
    train_sets = [primary_train]
    if cfg.regime == "NL_SYN_MIX":
        if not args.mix_data:
            raise ScenelangError("NL_SYN_MIX needs --mix-data for the second corpus")
        train_sets.append(load_split(args.mix_data, "train"))
    state = train(cfg, train_sets, val_set, args.out, pretrained=args.pretrained)
    print(f"finished at step {state.step}; best validation ELBO "
          f"{state.best_val_loss:.4f}; checkpoints in {args.out}")
    return 0


def _find_scene(data_dir: str, scene_id: int):
    last_err = None
    for split in SPLIT_FILES:
        ds = load_split(data_dir, split)
        hits = np.flatnonzero(ds.scene_ids == scene_id)
        if hits.size:
            return ds, int(hits[0])
        last_err = f"scene id {scene_id} not found in any split of {data_dir}"
    raise ScenelangError(last_err)


def _cmd_sample(args) -> int:
    state, enc, dec = load_model(args.ckpt)
    ds, row = _find_scene(args.data, args.scene_id)
    caps = ds.captions[row]
    max_len = max(len(c) for c in caps)
    tokens = np.zeros((len(caps), max_len), dtype=np.int64)
    for i, c in enumerate(caps):
        tokens[i, :len(c)] = c
    with torch.no_grad():
        h = enc.encode_view(torch.from_numpy(tokens),
                            torch.from_numpy(ds.angles[row]).float())
        r = aggregate(h[None]).r
        gen = torch.Generator().manual_seed(args.seed)
        img = dec.sample(r, torch.tensor([args.theta], dtype=torch.float32),
                         gen=gen)[0]
    save_png(img.permute(1, 2, 0).numpy(), args.out)
    print(f"wrote {args.out}")
    return 0


def _load_vocab_for_model(args, vocab_size: int) -> Vocabulary:
    if args.data:
        vocab = Vocabulary.load(Path(args.data) / "vocab.txt")
    else:
        vocab = build_vocabulary("synthetic")
    if len(vocab) > vocab_size:
        raise ScenelangError(
            f"vocabulary has {len(vocab)} entries but the model embeds only "
            f"{vocab_size}")
    return vocab


def _cmd_analyze(args) -> int:
    state, enc, dec = load_model(args.ckpt)
    vocab = _load_vocab_for_model(args, state.model_cfg.vocab_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.study == "transforms":
        rep = an.transformation_study(enc, vocab, n_scenes=args.n, seed=args.seed)
        an.write_csv(out / "transforms.csv",
                     ["transformation", "scene_mean", "scene_ci95",
                      "single_mean", "single_ci95"], rep.rows())
        print(f"scene-level ordering (closest first): {rep.ordering('scene')}")
        print(f"single-view ordering: {rep.ordering('single')}")
        for t in rep.scene_level:
            m, ci = rep.scene_level[t]
            print(f"  {t:<12} {m:.5f} +- {ci:.5f}")
    elif args.study == "angles":
        table = an.angle_distance_curve(enc, vocab, n_scenes=args.n, seed=args.seed)
        an.write_csv(out / "angle_distance.csv",
                     ["angle_bin_center", "mean_distance", "pairs",
                      "different_scene_mean"], table.rows())
        print(f"wrote {out / 'angle_distance.csv'}")
    elif args.study == "arcs":
        table = an.arc_study(enc, vocab, n_scenes=args.n, seed=args.seed)
        an.write_csv(out / "arc_distance.csv",
                     ["arc_size", "same_mean", "same_ci95", "diff_mean",
                      "diff_ci95"], table.rows())
        print(f"wrote {out / 'arc_distance.csv'}")
    elif args.study == "probe":
        acc = an.angle_cluster_probe(enc, vocab, n_scenes=max(args.n, 8),
                                     seed=args.seed)
        (out / "angle_probe.txt").write_text(f"loo_1nn_accuracy = {acc:.4f}\n")
        print(f"angle probe LOO-1NN accuracy: {acc:.4f} (chance 0.1)")
    elif args.study == "sweep":
        rng = np.random.default_rng(args.seed)
        scene = sample_scene(rng, GenerationConfig())
        res = an.viewpoint_sweep(enc, dec, vocab, scene,
                                 theta_out=args.theta, seed=args.seed)
        save_png(res.grid, out / "sweep.png")
        an.write_csv(out / "sweep_scores.csv", ["condition", "consistency"],
                     [(c, "" if s is None else f"{s:.4f}")
                      for c, s in zip(res.conditions, res.scores)])
        print(f"wrote {out / 'sweep.png'}")
    return 0


def _cmd_eval(args) -> int:
    split = {"train": "train", "valid": "validation",
             "test": "test"}[args.split]
    ds = load_split(args.data, split)
    print(f"{'checkpoint':<40} {'elbo':>12} {'recon':>12} {'kl':>10}")
    for ckpt in args.ckpt:
        state, enc, dec = load_model(ckpt)
        cfg = TrainingConfig(seed=args.seed, eval_samples=args.n,
                             unconditional=state.unconditional)
        metrics = evaluate(enc, dec, ds, cfg)
        print(f"{Path(ckpt).name:<40} {metrics['elbo']:>12.4f} "
              f"{metrics['recon']:>12.4f} {metrics['kl']:>10.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenelang",
        description="Spatial-language scenes: data generation, training, analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a captioned scene dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="primary dataset directory")
    p.add_argument("--mix-data", help="second corpus for NL_SYN_MIX")
    p.add_argument("--pretrained", help="checkpoint for NL_FROZEN / NL_SYN_MIX")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sample", help="sample an image from a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scene-id", type=int, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("analyze", help="representation analyses")
    p.add_argument("study", choices=["transforms", "angles", "arcs", "probe",
                                     "sweep"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset dir for the vocabulary (optional)")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--theta", type=float, default=math.pi / 3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("eval", help="mean ELBO of checkpoints on a split")
    p.add_argument("--ckpt", required=True, action="append",
                   help="may be given multiple times")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], required=True)
    p.add_argument("--n", type=int, default=3200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenelangError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
