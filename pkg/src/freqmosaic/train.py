"""Losses, Adam with cosine annealing, and the stagewise two-pass training
schedule.

Each mini-batch is optimized with two backward passes: the first minimizes
the weighted multi-level frequency loss and updates restorers plus the
backbone, the second runs a fresh forward and minimizes the reconstruction
loss, updating the backbone only.  One Adam state is shared across both
stages, and each pass increments the step counter once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bayer import CfaImage, NoiseSpec, add_noise, mosaic
from .errors import ContractViolation
from .imgio import read_rgb
from .model import ModelConfig, ModelParams, dfenet_forward, init_params, named_parameters, save_checkpoint


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 1
    crop_size: int = 128          # desk-scale runs use 32
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fft_loss_weight: float = 0.01  # lambda in front of the frequency loss
    sigma_min: float = 0.0
    sigma_max: float = 20.0
    seed: int = 0
    checkpoint_every: int = 0     # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ContractViolation("lr_min must be <= lr_max")
        if self.fft_loss_weight < 0:
            raise ContractViolation("fft_loss_weight must be >= 0")
        if self.crop_size % 2:
            raise ContractViolation("crop_size must be even")


@dataclass
class Sample:
    """One training example: noisy CFA input, its noise level, clean target."""

    cfa: CfaImage
    sigma: float
    target: np.ndarray  # [H,W,3] clean RGB


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def loss_rec(i_dm: Tensor, i_gt: Tensor) -> Tensor:
    """Mean absolute difference between output and ground truth."""
    if i_dm.shape != i_gt.shape:
        raise ContractViolation(f"loss_rec: shapes {i_dm.shape} vs {i_gt.shape}")
    return ad.mean_all(ad.absolute(ad.sub(i_dm, i_gt)))


def loss_fft(intermediates, i_gt: Tensor) -> Tensor:
    """Multi-level frequency loss.

    Sum over restorer outputs of the mean absolute difference between their
    spectra and the target spectrum, with the complex L1 realized as
    |d_re| + |d_im|.
    """
    gt_spec = ad.fft2(i_gt)
    total = None
    for inter in intermediates:
        if inter.shape != i_gt.shape:
            raise ContractViolation(f"loss_fft: shapes {inter.shape} vs {i_gt.shape}")
        spec = ad.fft2(inter)
        term = ad.add(
            ad.mean_all(ad.absolute(ad.sub(spec.re, gt_spec.re))),
            ad.mean_all(ad.absolute(ad.sub(spec.im, gt_spec.im))),
        )
        total = term if total is None else ad.add(total, term)
    return total


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at step == total."""
    if step > total:
        raise ContractViolation(f"cosine_lr: step {step} > total {total}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total))


def adam_update(named, opt_state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """Standard bias-corrected Adam over the given (name, Tensor) pairs.

    Tensors whose grad is unset are treated as having zero gradient (their
    moments still decay).  Increments the shared step counter once.
    """
    opt_state.step += 1
    t = opt_state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in named:
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        m = opt_state.m.get(name)
        v = opt_state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        opt_state.m[name] = m
        opt_state.v[name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _is_restorer(name: str) -> bool:
    return ".restorer." in name


def _batch_forward(batch, params, model_cfg, loss_kind):
    """Forward a batch and return the mean of the requested loss."""
    total = None
    for sample in batch:
        i_dm, inters = dfenet_forward(sample.cfa, sample.sigma, params, model_cfg)
        target = Tensor(np.asarray(sample.target).transpose(2, 0, 1))
        term = loss_rec(i_dm, target) if loss_kind == "rec" else loss_fft(inters, target)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(batch))


def stagewise_step(batch, params: ModelParams, opt_state: OptimizerState,
                   model_cfg: ModelConfig, train_cfg: TrainConfig, lr: float):
    """One mini-batch with two backward passes.

    Pass 1: minimize lambda * L_fft, updating restorers and backbone.
    Pass 2: fresh forward on the updated parameters, minimize L_rec,
    updating the backbone only.  Returns (loss_fft_value, loss_rec_value)
    as observed by each pass.
    """
    named = named_parameters(params)

    with ad.Tape() as tape:
        fft_val = _batch_forward(batch, params, model_cfg, "fft")
        weighted = ad.scale(fft_val, train_cfg.fft_loss_weight)
        ad.backward(tape, weighted)
    adam_update(named, opt_state, lr, train_cfg)

    with ad.Tape() as tape:
        rec_val = _batch_forward(batch, params, model_cfg, "rec")
        ad.backward(tape, rec_val)
    backbone = [(n, p) for n, p in named if not _is_restorer(n)]
    adam_update(backbone, opt_state, lr, train_cfg)

    return float(fft_val.data), float(rec_val.data)


# ---------------------------------------------------------------------------
# data pipeline and the loop
# ---------------------------------------------------------------------------


def _augment(img: np.ndarray, rng) -> np.ndarray:
    if rng.random() < 0.5:
        img = img[:, ::-1]
    if rng.random() < 0.5:
        img = img[::-1, :]
    img = np.rot90(img, k=int(rng.integers(4)))
    return np.ascontiguousarray(img)


def make_sample(img: np.ndarray, crop: int, sigma: float, noise_seed: int,
                rng, pattern: str = "RGGB") -> Sample:
    """Crop, augment, corrupt, and mosaic one training image."""
    h, w = img.shape[:2]
    if h < crop or w < crop:
        raise ContractViolation(f"image {h}x{w} smaller than crop {crop}")
    r0 = int(rng.integers(h - crop + 1))
    c0 = int(rng.integers(w - crop + 1))
    patch = _augment(img[r0:r0 + crop, c0:c0 + crop], rng)
    noisy = add_noise(patch, NoiseSpec(sigma, noise_seed))
    return Sample(cfa=mosaic(noisy, pattern), sigma=sigma, target=patch)


def load_dataset(dataset_dir) -> list:
    """Load every PNG/PPM in a directory, sorted by name."""
    root = Path(dataset_dir)
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".png", ".ppm", ".pgm"))
    if not paths:
        raise ContractViolation(f"no images found in {root}")
    return [read_rgb(p) for p in paths]


def train_loop(dataset_dir, train_cfg: TrainConfig, model_cfg: ModelConfig,
               out_dir=None, log_hook=None):
    """Seeded training over a directory of RGB images.

    Per iteration: sample an image, random even crop, flip/rot augmentation,
    uniform sigma in [sigma_min, sigma_max], Gaussian noise, mosaic, then a
    stagewise step.  Writes `log.csv` (iter,lr,loss_fft,loss_rec) and
    `checkpoint.dfen` under out_dir when given; returns (params, rows).
    """
    images = load_dataset(dataset_dir)
    for img in images:
        if min(img.shape[:2]) < train_cfg.crop_size:
            raise ContractViolation("dataset contains images smaller than crop_size")

    params = init_params(model_cfg, train_cfg.seed)
    opt_state = OptimizerState()
    rng = np.random.default_rng(train_cfg.seed)
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for it in range(train_cfg.iterations):
        lr = cosine_lr(it, max(train_cfg.iterations, 1), train_cfg.lr_max, train_cfg.lr_min)
        batch = []
        for _ in range(train_cfg.batch_size):
            img = images[int(rng.integers(len(images)))]
            sigma = float(rng.uniform(train_cfg.sigma_min, train_cfg.sigma_max))
            noise_seed = int(rng.integers(2 ** 62))
            batch.append(make_sample(img, train_cfg.crop_size, sigma, noise_seed, rng))
        fft_val, rec_val = stagewise_step(batch, params, opt_state, model_cfg, train_cfg, lr)
        rows.append((it, lr, fft_val, rec_val))
        if log_hook is not None:
            log_hook(it, lr, fft_val, rec_val)
        if (out_dir is not None and train_cfg.checkpoint_every
                and (it + 1) % train_cfg.checkpoint_every == 0):
            save_checkpoint(out_dir / f"checkpoint_{it + 1:06d}.dfen", params, model_cfg)

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.dfen", params, model_cfg)
        write_log(out_dir / "log.csv", rows)
    return params, rows


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["iter", "lr", "loss_fft", "loss_rec"])
        for row in rows:
            writer.writerow([row[0], f"{row[1]:.10g}", f"{row[2]:.10g}", f"{row[3]:.10g}"])
