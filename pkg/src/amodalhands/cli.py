"""Command-line interface.

Subcommands: synth | train-hasm | train-hdrm | train-shpe | infer | eval |
ablate | viz.  Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


class UserError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path/directory", default=None)
    p.add_argument("--fast", action="store_true", help="64x64 test mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amodalhands",
        description="Interacting-hand pose estimation with occlusion recovery "
                    "and distractor removal, plus a synthetic data generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mix", type=float, default=0.76,
                   help="fraction of copy-paste samples")

    p = sub.add_parser("train-hasm", help="train the amodal segmentation model")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=2.5e-3)

    p = sub.add_parser("train-hdrm", help="train the de-occlusion/removal inpainter")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=500, help="stage-1 steps")
    p.add_argument("--stage2-steps", type=int, default=0)
    p.add_argument("--seg-checkpoint", default=None,
                   help="segmenter used to produce stage-2 masks")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--no-gan", action="store_true",
                   help="disable the adversarial term")

    p = sub.add_parser("train-shpe", help="train the single-hand pose estimator")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("infer", help="run the pipeline on one image")
    _add_common(p)
    p.add_argument("--image", required=True)

    p = sub.add_parser("eval", help="evaluate the pipeline on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default=None,
                   choices=["baseline", "no_removal", "no_deocclusion", "full"])
    p.add_argument("--mask-source", default=None, choices=["model", "gt"])

    p = sub.add_parser("ablate", help="train per seed and compare variants")
    _add_common(p)
    p.add_argument("--train-data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--seg-steps", type=int, default=400)
    p.add_argument("--inpaint-steps", type=int, default=400)
    p.add_argument("--pose-steps", type=int, default=600)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--mask-source", default="model", choices=["model", "gt"])

    p = sub.add_parser("viz", help="render a qualitative panel for one sample")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--gt-masks", action="store_true")
    return parser


def _require_out(args) -> Path:
    if not args.out:
        raise UserError("--out is required for this command")
    return Path(args.out)


def _load_pipeline(args):
    from .pipeline import Pipeline, PipelineConfig

    if not args.config:
        raise UserError("--config with model checkpoints is required")
    cfg = PipelineConfig.load(args.config)
    return Pipeline.from_config(cfg), cfg


def cmd_synth(args) -> int:
    from .presets import synth_config
    from .synth import generate_dataset

    out = _require_out(args)
    cfg = synth_config(fast=args.fast)
    manifest = generate_dataset(args.n, args.mix, args.seed, out, cfg)
    print(f"wrote {manifest['n']} samples to {out} "
          f"(syn={manifest['counts']['syn']}, render={manifest['counts']['render']})")
    return 0


def _load_samples(path):
    from .synth import load_dataset

    root = Path(path)
    if not (root / "manifest.json").exists():
        raise UserError(f"no manifest.json under {root}")
    return load_dataset(root)


def cmd_train_hasm(args) -> int:
    from .data import seg_examples
    from .presets import seg_config
    from .segmenter import SegTrainConfig, train_segmenter

    out = _require_out(args)
    _, samples = _load_samples(args.data)
    model_cfg = seg_config(fast=args.fast)
    examples = seg_examples(samples, model_cfg.input_size)
    _, rows = train_segmenter(examples, model_cfg,
                              SegTrainConfig(steps=args.steps, batch_size=args.batch,
                                             lr=args.lr, seed=args.seed),
                              out_dir=out)
    print(f"segmenter trained for {args.steps} steps; final loss "
          f"{rows[-1]['total']:.4f}; checkpoint in {out}")
    return 0


def cmd_train_hdrm(args) -> int:
    from .data import recovery_examples
    from .inpainter import InpainterTrainConfig, LossWeights, train_inpainter
    from .presets import inpaint_config
    from .segmenter import load_segmenter

    out = _require_out(args)
    _, samples = _load_samples(args.data)
    model_cfg = inpaint_config(fast=args.fast)
    examples = recovery_examples(samples, model_cfg.input_size)
    weights = LossWeights(gan=0.0) if args.no_gan else LossWeights()
    stage2 = None
    if args.stage2_steps > 0 and args.seg_checkpoint:
        segmenter = load_segmenter(args.seg_checkpoint)
        stage2 = recovery_examples(samples, model_cfg.input_size, segmenter=segmenter)
    cfg = InpainterTrainConfig(stage1_steps=args.steps, stage2_steps=args.stage2_steps,
                               batch_size=args.batch, weights=weights, seed=args.seed)
    _, rows = train_inpainter(examples, model_cfg, cfg, stage2_examples=stage2,
                              out_dir=out)
    print(f"inpainter trained; final l1 {rows[-1]['l1']:.4f}; checkpoint in {out}")
    return 0


def cmd_train_shpe(args) -> int:
    from .data import pose_examples
    from .posenet import PoseTrainConfig, train_posenet
    from .presets import pose_config

    out = _require_out(args)
    _, samples = _load_samples(args.data)
    model_cfg = pose_config(fast=args.fast)
    examples = pose_examples(samples, model_cfg)
    _, rows = train_posenet(examples, model_cfg,
                            PoseTrainConfig(steps=args.steps, batch_size=args.batch,
                                            lr=args.lr, seed=args.seed),
                            out_dir=out)
    print(f"pose net trained; final loss {rows[-1]['total']:.4f}; checkpoint in {out}")
    return 0


def cmd_infer(args) -> int:
    from .pipeline import infer_to_json
    from .storage import load_image

    pipeline, _ = _load_pipeline(args)
    image = load_image(args.image)
    payload = infer_to_json(pipeline, image)
    if args.out:
        Path(args.out).write_text(payload)
    else:
        print(payload)
    return 0


def cmd_eval(args) -> int:
    from .ablation import evaluate_pipeline
    from .metrics import aggregate, epe2d, mpjpe
    from .nnutil import write_metrics_csv

    pipeline, cfg = _load_pipeline(args)
    if args.variant:
        pipeline.variant = args.variant
    mask_source = args.mask_source or cfg.mask_source
    _, samples = _load_samples(args.data)
    records = evaluate_pipeline(pipeline, samples, mask_source=mask_source)
    rows = []
    for rec in records:
        rows.append({"id": rec.sample_id,
                     "subsets": "+".join(sorted(rec.tags)),
                     "mpjpe_mm": rec.hand_means(mpjpe),
                     "epe_px": rec.hand_means(epe2d)})
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "eval.csv", rows)
    mp = aggregate(records, mpjpe)
    ep = aggregate(records, epe2d)
    mp_s = "n/a" if mp is None else f"{mp:.3f} mm"
    ep_s = "n/a" if ep is None else f"{ep:.3f} px"
    print(f"evaluated {len(records)} samples: MPJPE {mp_s}, EPE {ep_s}")
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .training import train_desk_pipeline

    out = _require_out(args)
    _, train_samples = _load_samples(args.train_data)
    _, eval_samples = _load_samples(args.eval_data)
    seeds = [int(s) for s in str(args.seeds).split(",") if s != ""]
    runs = []
    for seed in seeds:
        pipeline = train_desk_pipeline(
            train_samples, seed=seed, fast=args.fast,
            seg_steps=args.seg_steps, inpaint_steps=args.inpaint_steps,
            pose_steps=args.pose_steps, batch_size=args.batch)
        runs.append((pipeline, eval_samples))
    report = run_ablation(runs, mask_source=args.mask_source)
    report.save(out)
    print(report.to_markdown())
    return 0


def cmd_viz(args) -> int:
    from .grids import HandSide
    from .storage import save_image
    from .synth import load_sample
    from .viz import render_panel

    pipeline, _ = _load_pipeline(args)
    out = _require_out(args)
    sample = load_sample(args.data, args.id)
    masks = sample.masks if args.gt_masks else None
    result = pipeline.infer(sample.image, masks=masks)
    tiles = []
    for side in ("right", "left"):
        if side in result.hands:
            hand = result.hands[side]
            tiles.extend([hand.input_crop, hand.recovered_crop])
    joints = [result.hands[s].joints for s in result.hands]
    quad = masks if masks is not None else result.seg
    panel = render_panel(sample.image, quad, tiles, joints)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, panel)
    print(f"panel written to {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-hasm": cmd_train_hasm,
    "train-hdrm": cmd_train_hdrm,
    "train-shpe": cmd_train_shpe,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "viz": cmd_viz,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return COMMANDS[args.command](args)
    except (UserError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
