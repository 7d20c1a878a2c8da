"""Alternating discriminator/generator training on unpaired pools."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticDatasetSpec, UnpairedDataset, sample_batch, synth_generate
from .losses import (
    LossWeights,
    color_loss,
    gan_loss_d,
    gan_loss_g,
    idem_loss,
    spatial_loss,
    total_loss,
)
from .networks import GeneratorBundle, discriminator, generator, init_params
from .optim import AdamState, adam_step
from .rng import Streams

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("l_idem", "l_spa", "l_color", "l_gan_g", "l_gan_d")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    iterations: int = 2000
    image_size: int = 32
    lambda_gan_split: float = 0.9
    alpha_gan: float = 0.05
    seed: int = 0
    scale_mode: str = "fan-in-scaled"
    data_dir: str = ""
    synth_count: int = 200
    synth_test_count: int = 20
    synth_seed: int = 0
    checkpoint_interval: int = 500

    def __post_init__(self):
        if self.image_size % 8 or self.image_size <= 0:
            raise ValueError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        LossWeights(self.lambda_gan_split, self.alpha_gan)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_gan_split, self.alpha_gan)

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)

    def synthetic_spec(self) -> SyntheticDatasetSpec:
        return SyntheticDatasetSpec(count=self.synth_count, test_count=self.synth_test_count,
                                    image_size=self.image_size, seed=self.synth_seed)


def _coerce(value: str, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def parse_key_values(text: str, cls):
    """Parse ``key = value`` lines into ``cls``; unknown keys raise KeyError."""
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise KeyError(f"unknown config key {key!r} (line {lineno})")
        kwargs[key] = _coerce(value, known[key])
    return cls(**kwargs)


def format_key_values(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(obj).items())


def load_config(path) -> TrainConfig:
    return parse_key_values(Path(path).read_text(encoding="utf-8"), TrainConfig)


# -- one iteration ---------------------------------------------------------------


def _finite(report: dict[str, float]) -> None:
    bad = {k: v for k, v in report.items() if not math.isfinite(v)}
    if bad:
        raise NonFiniteLossError(f"non-finite losses: {bad}")


def discriminator_step(bundle: GeneratorBundle, x, y, y_ref, state_d: AdamState,
                       cfg: TrainConfig) -> float:
    """Update the discriminator head and the shared CondNet; fakes are constants."""
    b = x.shape[0]
    with ad.no_grad():
        fakes = generator(Tensor(np.concatenate([x, y])),
                          Tensor(np.concatenate([y_ref, y_ref])), bundle).data
    bundle.zero_grad()
    probs = discriminator(Tensor(np.concatenate([y, fakes])), bundle)
    loss = gan_loss_d(probs[:b], probs[b:2 * b], probs[2 * b:], cfg.weights)
    _finite({"l_gan_d": loss.item()})
    loss.backward()
    adam_step(bundle.discriminator_parameters(), state_d, cfg.lr, cfg.betas, cfg.adam_eps)
    return loss.item()


def generator_losses(bundle: GeneratorBundle, x, y, y_ref, w: LossWeights):
    """Forward all generator objectives on one batch; returns (total, parts)."""
    b = x.shape[0]
    out = generator(Tensor(np.concatenate([y, y, x])),
                    Tensor(np.concatenate([y, y_ref, y_ref])), bundle)
    g_yy, g_y12, g_x = out[:b], out[b:2 * b], out[2 * b:]
    l_idem = idem_loss(g_yy, Tensor(y))
    l_spa = spatial_loss(g_y12, Tensor(y))
    l_color = color_loss(g_x, Tensor(x))
    probs = discriminator(ad.concat([g_x, g_y12]), bundle)
    l_gan = gan_loss_g(probs[:b], probs[b:], w)
    total = total_loss(l_idem, l_spa, l_color, l_gan, w)
    return total, {"l_idem": l_idem.item(), "l_spa": l_spa.item(),
                   "l_color": l_color.item(), "l_gan_g": l_gan.item()}


def generator_step(bundle: GeneratorBundle, x, y, y_ref, state_g: AdamState,
                   cfg: TrainConfig) -> dict[str, float]:
    bundle.zero_grad()
    total, parts = generator_losses(bundle, x, y, y_ref, cfg.weights)
    _finite(parts)
    total.backward()
    adam_step(bundle.generator_parameters(), state_g, cfg.lr, cfg.betas, cfg.adam_eps)
    parts["l_total"] = total.item()
    return parts


def train_step(bundle: GeneratorBundle, batch, state_g: AdamState, state_d: AdamState,
               cfg: TrainConfig) -> dict[str, float]:
    """One discriminator update followed by one generator update."""
    x, y, y_ref = (np.asarray(a, dtype=np.float32) for a in batch)
    l_d = discriminator_step(bundle, x, y, y_ref, state_d, cfg)
    report = generator_step(bundle, x, y, y_ref, state_g, cfg)
    report["l_gan_d"] = l_d
    return report


# -- full runs -------------------------------------------------------------------


@dataclass
class TrainState:
    bundle: GeneratorBundle
    state_g: AdamState
    state_d: AdamState
    iteration: int = 0


def load_dataset(cfg: TrainConfig) -> UnpairedDataset:
    if cfg.data_dir:
        from .imageio import load_dataset_dir
        return load_dataset_dir(cfg.data_dir, cfg.image_size)
    return synth_generate(cfg.synthetic_spec())


def fresh_state(cfg: TrainConfig) -> TrainState:
    rng = Streams(cfg.seed).generator("init")
    bundle = init_params(cfg.seed, cfg.scale_mode, rng=rng)
    return TrainState(bundle, AdamState(), AdamState())


def save_state(path, ts: TrainState, cfg: TrainConfig) -> None:
    extra = {
        "rng.iteration": np.asarray(ts.iteration, dtype=np.float32),
        # seed split into 16-bit limbs so float32 holds it exactly
        "rng.seed": np.asarray([(cfg.seed >> s) & 0xFFFF for s in (0, 16, 32, 48)],
                               dtype=np.float32),
    }
    save_checkpoint(path, ts.bundle, ts.state_g, ts.state_d, extra)


def load_state(path) -> tuple[TrainState, int]:
    bundle, sg, sd, extra = load_checkpoint(path)
    it = int(extra.get("rng.iteration", 0))
    limbs = extra.get("rng.seed")
    seed = sum(int(v) << s for v, s in zip(limbs, (0, 16, 32, 48))) if limbs is not None else 0
    return TrainState(bundle, sg, sd, it), seed


def _log_rows_until(path, iteration: int) -> list[list[str]]:
    if iteration == 0 or not Path(path).exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if r and int(r[0]) <= iteration]


def run_training(cfg: TrainConfig, out_dir=None, dataset: UnpairedDataset | None = None,
                 state: TrainState | None = None, log_path=None, callback=None) -> TrainState:
    """Train until ``state.iteration`` reaches ``cfg.iterations``.

    A resumed run appends to the existing loss log after dropping any rows
    past the resumed iteration. Checkpoints land in ``out_dir`` every
    ``checkpoint_interval`` iterations and after the final one.
    """
    ds = dataset if dataset is not None else load_dataset(cfg)
    ts = state if state is not None else fresh_state(cfg)
    streams = Streams(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out / "loss_log.csv"
    writer = fh = None
    if log_path is not None:
        kept = _log_rows_until(log_path, ts.iteration)
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(("iteration",) + LOSS_COLUMNS)
        writer.writerows(kept)
    try:
        end = cfg.iterations
        while ts.iteration < end:
            rng = streams.generator("batch", ts.iteration)
            batch = sample_batch(ds, rng, cfg.batch_size)
            try:
                report = train_step(ts.bundle, batch, ts.state_g, ts.state_d, cfg)
            except NonFiniteLossError:
                log.error("non-finite loss at iteration %d", ts.iteration + 1)
                raise
            ts.iteration += 1
            if writer is not None:
                writer.writerow([ts.iteration] + [repr(report[k]) for k in LOSS_COLUMNS])
            if callback is not None:
                callback(ts.iteration, report)
            if out is not None and (ts.iteration % cfg.checkpoint_interval == 0
                                    or ts.iteration == end):
                if fh is not None:
                    fh.flush()
                save_state(out / f"checkpoint_{ts.iteration:06d}.lmc", ts, cfg)
    finally:
        if fh is not None:
            fh.close()
    return ts
