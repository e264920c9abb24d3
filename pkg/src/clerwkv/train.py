"""Micro-training loop and the behavioral experiments.

Three experiments accompany plain training:
  * median-regression study: an unconditional model trained with l1 on
    random-level targets drifts to the median training luminance;
  * controllability sweep: the conditional model tracks the requested
    luminance monotonically on held-out scenes;
  * conditional-spread analysis: the luminance spread across levels dwarfs
    the spread across noise draws at a fixed level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractViolation, NumericFault
from .hvi import hvit, mean_luma, synthesize_hybrid_target
from .lightsynth import SyntheticDataset, generate_scene, render_level
from .losses import LossWeights, psnr, ssim_metric, total_loss
from .model import CleRwkvModel, enhance, forward_tensors
from .optim import AdamW, cosine_lr
from .tensor import Tensor, backward


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 4
    crop: int = 32
    base_lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    warmup_epochs: int = 3
    augment: bool = True
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    steps: int | None = None        # overrides the epochs->steps conversion
    validate_every_epoch: bool = False
    target_mode: str = "hybrid"     # "capture" trains on raw level captures
                                    # (the no-decoupling ablation)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractViolation("batch size must be >= 1")
        if self.target_mode not in ("hybrid", "capture"):
            raise ContractViolation(f"unknown target mode '{self.target_mode}'")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)      # (step, loss, lr, wall)
    validations: list = field(default_factory=list)

    def record(self, step, loss, lr):
        self.steps.append((step, float(loss), float(lr), time.time()))

    def lines(self):
        out = [f"step={s} loss={l:.6f} lr={lr:.8f} t={ts:.3f}"
               for s, l, lr, ts in self.steps]
        for (epoch, metric) in self.validations:
            out.append(f"val epoch={epoch} psnr={metric:.3f}")
        return out

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines()) + "\n")


@dataclass
class Sample:
    image: np.ndarray
    target: np.ndarray
    beta: float
    scene_seed: int
    input_level: int
    target_level: int


def _augment_pair(a, b, rng):
    rot = rng.integers(4)
    if rot:
        a, b = np.rot90(a, rot), np.rot90(b, rot)
    if rng.integers(2):
        a, b = a[:, ::-1], b[:, ::-1]
    if rng.integers(2):
        a, b = a[::-1], b[::-1]
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def sample_batch(stacks, config: TrainConfig, rng) -> list[Sample]:
    """Dark input, uniformly sampled target level, hybrid target, shared
    crop/flip/rotation for input and target."""
    batch = []
    for _ in range(config.batch_size):
        stack = stacks[rng.integers(len(stacks))]
        input_level = int(rng.choice(stack.darkest_quartile()))
        target_level = int(rng.integers(stack.levels))
        if config.target_mode == "hybrid":
            target_full = synthesize_hybrid_target(stack.reference,
                                                   stack.images[target_level])
        else:
            target_full = stack.images[target_level]
        crop = config.crop
        if crop > stack.height or crop > stack.width:
            raise ContractViolation("crop larger than scene")
        y0 = int(rng.integers(stack.height - crop + 1))
        x0 = int(rng.integers(stack.width - crop + 1))
        img = stack.images[input_level][y0:y0 + crop, x0:x0 + crop]
        tgt = target_full[y0:y0 + crop, x0:x0 + crop]
        if config.augment:
            img, tgt = _augment_pair(img, tgt, rng)
        batch.append(Sample(image=img, target=tgt, beta=float(stack.beta[target_level]),
                            scene_seed=stack.scene_seed, input_level=input_level,
                            target_level=target_level))
    return batch


def _schedule(config: TrainConfig, n_train_stacks: int):
    steps_per_epoch = max(1, n_train_stacks // config.batch_size)
    total = config.steps if config.steps is not None else config.epochs * steps_per_epoch
    warmup = min(config.warmup_epochs * steps_per_epoch, max(total - 1, 0))
    return total, warmup


def validate(model: CleRwkvModel, stacks, n_scenes=5, betas=(0.3, 0.5, 0.7)) -> float:
    """Mean PSNR against hybrid targets at the level nearest each beta."""
    scores = []
    for stack in stacks[:n_scenes]:
        img = stack.images[0]
        for b in betas:
            level = int(np.argmin(np.abs(stack.beta - b)))
            target = synthesize_hybrid_target(stack.reference, stack.images[level])
            if model.config.variant == "conditional":
                out = enhance(model, img, float(stack.beta[level]))
            else:
                out = enhance(model, img)
            scores.append(psnr(out, target))
    return float(np.mean(scores))


def train(model: CleRwkvModel, dataset: SyntheticDataset, config: TrainConfig,
          batches=None) -> TrainLog:
    """Deterministic training given (seed, config, dataset). ``batches`` may
    inject a fixed batch list (single-batch overfit runs)."""
    stacks = dataset.train_stacks() if dataset is not None else None
    rng = np.random.default_rng(config.seed)
    opt = AdamW(model.parameters(), lr=config.base_lr, beta1=config.beta1,
                beta2=config.beta2, weight_decay=config.weight_decay)
    total, warmup = _schedule(config, len(stacks) if stacks else 1)
    log = TrainLog()
    dtype = model.head_w.dtype
    steps_per_epoch = max(1, total // max(config.epochs, 1))
    for step in range(total):
        opt.lr = cosine_lr(step, total, warmup, config.base_lr)
        batch = batches[step % len(batches)] if batches is not None \
            else sample_batch(stacks, config, rng)
        opt.zero_grad()
        loss_total = 0.0
        for sample in batch:
            beta = sample.beta if model.config.variant == "conditional" else None
            try:
                rgb, hvi = forward_tensors(model, sample.image, beta)
                t_rgb = Tensor(sample.target.astype(dtype))
                t_hvi = None
                if hvi is not None:
                    t_hvi = Tensor(hvit(sample.target).stacked().astype(dtype))
                loss = T.mul(total_loss(rgb, hvi, t_rgb, t_hvi, config.loss),
                             1.0 / len(batch))
                backward(loss)
            except NumericFault as exc:
                raise NumericFault(f"training aborted at step {step}: {exc}") from exc
            loss_total += float(loss.data)
        if not np.isfinite(loss_total):
            raise NumericFault(f"training aborted at step {step}: non-finite loss")
        opt.step()
        log.record(step, loss_total, opt.lr)
        if config.validate_every_epoch and dataset is not None \
                and (step + 1) % steps_per_epoch == 0:
            epoch = (step + 1) // steps_per_epoch
            log.validations.append((epoch, validate(model, dataset.test_stacks())))
    return log


def l1_optimal_constant(values) -> float:
    """The constant minimizing mean absolute error: the median."""
    return float(np.median(np.asarray(values, dtype=np.float64)))


@dataclass
class MedianRegressionReport:
    median_target_luma: float
    output_lumas: list
    fraction_within: float
    tolerance: float
    conditional_tracking_mae: float | None = None

    def text(self):
        lines = [f"median_target_luma={self.median_target_luma:.4f}",
                 f"held_out_inputs={len(self.output_lumas)}",
                 f"fraction_within_{self.tolerance}={self.fraction_within:.3f}"]
        if self.conditional_tracking_mae is not None:
            lines.append(f"conditional_tracking_mae={self.conditional_tracking_mae:.4f}")
        return "\n".join(lines)


def median_regression_experiment(dataset: SyntheticDataset, config: TrainConfig,
                                 base_model: CleRwkvModel,
                                 conditional_model: CleRwkvModel | None = None,
                                 tolerance: float = 0.05) -> MedianRegressionReport:
    """Train the unconditional model on random-level targets with l1 only and
    measure how its output luminance clusters around the target median."""
    if base_model.config.variant != "base":
        raise ContractViolation("median regression study runs on the base variant")
    cfg = TrainConfig(**{**config.__dict__,
                         "loss": LossWeights(w_l1=1.0, w_ssim=0.0, w_edge=0.0,
                                             w_lpips=0.0, lam=0.0)})
    train(base_model, dataset, cfg)

    train_betas = np.concatenate([s.beta for s in dataset.train_stacks()])
    median_target = l1_optimal_constant(train_betas)
    outputs = []
    tracking = []
    for stack in dataset.test_stacks():
        for level in stack.darkest_quartile():
            out = enhance(base_model, stack.images[level])
            outputs.append(mean_luma(out))
            if conditional_model is not None:
                for tl in range(0, stack.levels, max(1, stack.levels // 4)):
                    beta = float(stack.beta[tl])
                    got = mean_luma(enhance(conditional_model, stack.images[level], beta))
                    tracking.append(abs(got - beta))
    within = float(np.mean([abs(o - median_target) < tolerance for o in outputs]))
    return MedianRegressionReport(
        median_target_luma=median_target, output_lumas=outputs,
        fraction_within=within, tolerance=tolerance,
        conditional_tracking_mae=float(np.mean(tracking)) if tracking else None)


@dataclass
class SweepResult:
    scene_seed: int
    betas: np.ndarray
    mean_lumas: np.ndarray
    psnrs: np.ndarray
    ssims: np.ndarray

    def monotonicity_violations(self, tol=0.01) -> int:
        return int((np.diff(self.mean_lumas) < -tol).sum())


@dataclass
class ControllabilityReport:
    sweeps: list
    tolerance: float = 0.05

    @property
    def fraction_tracking(self) -> float:
        hits = [abs(m - b) < self.tolerance
                for sw in self.sweeps for m, b in zip(sw.mean_lumas, sw.betas)]
        return float(np.mean(hits))

    @property
    def max_violations_per_sweep(self) -> int:
        return max(sw.monotonicity_violations() for sw in self.sweeps)

    @property
    def mean_abs_error(self) -> float:
        errs = [abs(m - b) for sw in self.sweeps for m, b in zip(sw.mean_lumas, sw.betas)]
        return float(np.mean(errs))

    def text(self):
        return (f"scenes={len(self.sweeps)} grid={len(self.sweeps[0].betas)} "
                f"tracking<{self.tolerance}: {self.fraction_tracking:.3f} "
                f"mae={self.mean_abs_error:.4f} "
                f"max_monotonicity_violations={self.max_violations_per_sweep}")


def controllability_eval(model: CleRwkvModel, test_stacks, grid_size: int = 16) -> ControllabilityReport:
    """Sweep the control value over held-out scenes; record luminance
    tracking, monotonicity, and fidelity to the nearest-level hybrid target."""
    lo = min(float(s.beta.min()) for s in test_stacks)
    hi = max(float(s.beta.max()) for s in test_stacks)
    grid = np.linspace(lo, hi, grid_size)
    sweeps = []
    for stack in test_stacks:
        img = stack.images[0]
        lumas, ps, ss = [], [], []
        for b in grid:
            if model.config.variant == "conditional":
                out = enhance(model, img, float(b))
            else:
                out = enhance(model, img)
            level = int(np.argmin(np.abs(stack.beta - b)))
            target = synthesize_hybrid_target(stack.reference, stack.images[level])
            lumas.append(mean_luma(out))
            ps.append(psnr(out, target))
            ss.append(ssim_metric(out, target))
        sweeps.append(SweepResult(scene_seed=stack.scene_seed, betas=grid.copy(),
                                  mean_lumas=np.array(lumas), psnrs=np.array(ps),
                                  ssims=np.array(ss)))
    return ControllabilityReport(sweeps=sweeps)


@dataclass
class SpreadReport:
    per_scene_ratio: list
    cap: float = 1e9

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.per_scene_ratio))

    def text(self):
        return f"scenes={len(self.per_scene_ratio)} median_spread_ratio={self.median_ratio:.2f}"


def conditional_spread_analysis(dataset: SyntheticDataset, draws: int = 8,
                                max_scenes: int = 8, cap: float = 1e9) -> SpreadReport:
    """Per-pixel luminance variance across levels (and noise) vs across noise
    draws at a fixed level; the ratio is the spread collapse the control
    signal buys."""
    from .hvi import luma as luma_fn
    ratios = []
    for stack in dataset.stacks[:max_scenes]:
        scene = generate_scene(stack.scene_seed, stack.height)
        multi = []
        for level, k in enumerate(stack.k):
            for d in range(draws):
                seed = np.random.SeedSequence([stack.scene_seed, level, 1000 + d])
                multi.append(luma_fn(render_level(scene, float(k), stack.isp, seed)[0]))
        fixed_level = stack.levels // 2
        fixed = []
        for d in range(draws * max(1, stack.levels // 2)):
            seed = np.random.SeedSequence([stack.scene_seed, fixed_level, 5000 + d])
            fixed.append(luma_fn(render_level(scene, float(stack.k[fixed_level]),
                                              stack.isp, seed)[0]))
        var_multi = np.var(np.stack(multi), axis=0).mean()
        var_fixed = np.var(np.stack(fixed), axis=0).mean()
        ratios.append(min(cap, var_multi / var_fixed) if var_fixed > 0 else cap)
    return SpreadReport(per_scene_ratio=ratios, cap=cap)
