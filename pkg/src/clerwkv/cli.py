"""Operator command line: dataset synthesis, training, inference, sweeps,
evaluation, theory demos and the HTTP service.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation, NumericFault
from .hvi import luma, mean_luma
from .lightsynth import (DEGENERATE_ISP, IspConfig, export_dataset,
                         generate_scene, load_dataset,
                         noise_gain_variance_ratio, synthesize_dataset)
from .losses import LossWeights, MetricReport, isp_noncommute_gap
from .model import (CleRwkvConfig, build_model, enhance, load_checkpoint,
                    save_checkpoint)
from .train import (TrainConfig, controllability_eval, l1_optimal_constant,
                    median_regression_experiment, train)

FOOTER_H = 8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def load_image(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except FileNotFoundError:
        raise ContractViolation(f"input image not found: {path}")
    except Exception as exc:
        raise ContractViolation(f"cannot read image {path}: {exc}")
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, img01: np.ndarray):
    Image.fromarray(np.round(np.clip(img01, 0, 1) * 255).astype(np.uint8),
                    mode="RGB").save(path)


def _parse_kv_config(path):
    """key=value lines; keys prefixed model./train./loss."""
    model_kw, train_kw, loss_kw = {}, {}, {}
    int_model = {f.name for f in fields(CleRwkvConfig)} - {"variant", "color_space"}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        scope, _, name = key.strip().partition(".")
        val = val.strip()
        if scope == "model":
            model_kw[name] = int(val) if name in int_model else val
        elif scope == "loss":
            loss_kw[name] = float(val)
        elif scope == "train":
            if name in ("epochs", "batch_size", "crop", "seed", "steps", "warmup_epochs"):
                train_kw[name] = int(val)
            elif name == "augment":
                train_kw[name] = val.lower() in ("1", "true", "yes")
            else:
                train_kw[name] = float(val)
        else:
            raise ContractViolation(f"unknown config scope '{scope}' in {path}")
    return model_kw, train_kw, loss_kw


def cmd_synth(args):
    isp = IspConfig()
    ds = synthesize_dataset(args.scenes, levels=args.levels, size=args.size,
                            base_seed=args.seed, isp=isp)
    export_dataset(ds, args.out)
    lo, hi = ds.beta_range()
    print(f"wrote {args.scenes} scenes x {args.levels} levels to {args.out} "
          f"(beta range [{lo:.3f}, {hi:.3f}])")
    return 0


def cmd_train(args):
    dataset = load_dataset(args.data)
    model_kw, train_kw, loss_kw = ({}, {}, {})
    if args.config:
        model_kw, train_kw, loss_kw = _parse_kv_config(args.config)
    if args.base:
        model_kw["variant"] = "base"
    config = CleRwkvConfig(**model_kw)
    tcfg = TrainConfig(loss=LossWeights(**loss_kw), **train_kw)
    model = build_model(config, seed=tcfg.seed)
    log = train(model, dataset, tcfg)
    lo, hi = dataset.beta_range()
    extra = {"beta_lo": lo, "beta_hi": hi, "train_seed": tcfg.seed,
             "w_l1": tcfg.loss.w_l1, "w_ssim": tcfg.loss.w_ssim,
             "w_edge": tcfg.loss.w_edge, "w_lpips": tcfg.loss.w_lpips,
             "lam": tcfg.loss.lam}
    save_checkpoint(model, args.out, extra=extra)
    if args.log:
        log.write(args.log)
    print(f"trained {len(log.steps)} steps; checkpoint -> {args.out}")
    return 0


def cmd_infer(args):
    model, _ = load_checkpoint(args.ckpt)
    img = load_image(args.input)
    if model.config.variant == "conditional":
        out = enhance(model, img, args.beta)
    else:
        out = enhance(model, img)
    save_image(args.out, out)
    print(f"mean_luminance={mean_luma(np.round(out * 255) / 255):.4f} -> {args.out}")
    return 0


def _luminance_bar(width: int, value: float) -> np.ndarray:
    bar = np.full((FOOTER_H, width, 3), 0.08)
    fill = int(round(np.clip(value, 0, 1) * width))
    bar[1:-1, :fill] = 0.95
    return bar


def cmd_sweep(args):
    model, _ = load_checkpoint(args.ckpt)
    try:
        lo, hi, count = args.betas.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
        if count < 1:
            raise ValueError
    except ValueError:
        raise ContractViolation(f"--betas expects LO:HI:G, got '{args.betas}'")
    img = load_image(args.input)
    betas = np.linspace(lo, hi, count) if count > 1 else np.array([lo])
    frames, bars = [], []
    for b in betas:
        if model.config.variant == "conditional":
            out = enhance(model, img, float(b))
        else:
            out = enhance(model, img)
        out = np.round(out * 255) / 255
        frames.append(out)
        bars.append(_luminance_bar(out.shape[1], mean_luma(out)))
    strip = np.concatenate([np.concatenate(frames, axis=1),
                            np.concatenate(bars, axis=1)], axis=0)
    save_image(args.out, strip)
    print(f"sweep of {count} frames -> {args.out}")
    return 0


def cmd_eval(args):
    from .hvi import synthesize_hybrid_target
    model, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    test = dataset.test_stacks() or dataset.stacks
    report = MetricReport()
    for stack in test:
        img = stack.images[0]
        for level in range(stack.levels):
            target = synthesize_hybrid_target(stack.reference, stack.images[level])
            if model.config.variant == "conditional":
                pred = enhance(model, img, float(stack.beta[level]))
            else:
                pred = enhance(model, img)
            report.add(f"scene{stack.scene_seed:05d}_level{level + 1:02d}", pred, target)
    text = report.text()
    ctrl = controllability_eval(model, test, grid_size=16)
    text += "\n[controllability]\n" + ctrl.text() + "\n"
    Path(args.report).write_text(text, encoding="utf-8")
    agg = report.aggregate()
    print(f"eval over {len(report.images)} pairs: psnr={agg['psnr']:.2f} "
          f"psnr_gtmean={agg['psnr_gtmean']:.2f} -> {args.report}")
    return 0


def cmd_demo(args):
    if args.which == "gtmean":
        for k in (2.0, 4.0):
            ratio = noise_gain_variance_ratio(k, seed=0)
            print(f"gain k={k:g}: variance ratio {ratio:.3f} (k^2 = {k * k:g})")
    elif args.which == "isp":
        flat = generate_scene(0, 16)
        flat.radiance[:] = 0.25
        pure_gamma = IspConfig(gamma=2.2, tone_scale=None, shot_noise=0.0,
                               read_noise=0.0, cast=(0.0, 0.0, 0.0))
        gap = isp_noncommute_gap(flat, 2.0, pure_gamma)
        print(f"pure-gamma flat R=0.25, k=2: gap {gap:.4f}")
        print(f"degenerate isp same case: gap "
              f"{isp_noncommute_gap(flat, 2.0, DEGENERATE_ISP):.4f}")
        for seed in range(3):
            scene = generate_scene(seed, 32)
            gap = isp_noncommute_gap(scene, 2.0, IspConfig().noiseless())
            print(f"default isp scene {seed}: gap {gap:.4f}")
    elif args.which == "median":
        print(f"l1-optimal constant for targets {{0.2, 0.5, 0.8}}: "
              f"{l1_optimal_constant([0.2, 0.5, 0.8])}")
        ds = synthesize_dataset(args.scenes, levels=8, size=32, base_seed=0)
        base = build_model(CleRwkvConfig(c_model=16, num_blocks=2, variant="base"), seed=0)
        cfg = TrainConfig(steps=args.steps, epochs=max(args.steps // 10, 1),
                          crop=32, seed=0, base_lr=1e-3)
        report = median_regression_experiment(ds, cfg, base)
        print(report.text())
    return 0


def cmd_serve(args):
    from .service import serve_forever
    serve_forever(args.ckpt, args.port, cors=args.cors)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="clerwkv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-illumination dataset")
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--levels", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model on a synthesized dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="key=value file (model./train./loss.)")
    p.add_argument("--out", required=True)
    p.add_argument("--base", action="store_true", help="train the unconditional variant")
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="enhance one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("sweep", help="render a horizontal control-value sweep strip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--betas", required=True, help="LO:HI:G")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval", help="metric report on a dataset's held-out scenes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("demo", help="run the theory analyses")
    p.add_argument("which", choices=("gtmean", "median", "isp"))
    p.add_argument("--scenes", type=int, default=12)
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--cors", action="store_true")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractViolation, NumericFault, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
