"""The optimization loop: Adam with linear warmup then linear decay,
per-epoch validation by character error rate, best-checkpoint retention,
and a TSV metrics log.

Single-threaded runs with a fixed seed are bitwise reproducible; the
``workers`` knob parallelizes per-sample forward/backward within a batch
while keeping the accumulation order (and therefore the arithmetic) fixed.
"""

from __future__ import annotations

import math
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SynthConfig, augment, preprocess
from .decode import DecodeConfig, decode_image
from .errors import ConfigError, TrainingError, UsageError
from .lattice import Vocab, rnnt_alphabeta, rnnt_grad
from .model import (
    ModelConfig,
    ModelParams,
    backward_pass,
    forward_lattice,
    init_params,
    named_arrays,
    save_checkpoint,
    zero_grads_shell,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

METRICS_COLUMNS = ("epoch", "mean_train_loss", "val_cer", "lr", "wall_seconds")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 30
    base_lr: float = 2e-4
    warmup_epochs: int = 1
    seed: int = 0
    grad_clip_norm: float = 5.0  # global norm; 0 disables clipping
    augment_strength: float = 1.0
    checkpoint_dir: str = "runs"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"warmup_epochs must be in [0, epochs], got {self.warmup_epochs}"
            )
        if self.grad_clip_norm < 0 or self.augment_strength < 0:
            raise ConfigError("grad_clip_norm and augment_strength must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


# --- learning-rate schedule -----------------------------------------------------


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-linear: 0 up to base_lr over the warmup steps, then back
    down to 0 at the end of training. Continuous, peak exactly base_lr."""
    if steps_per_epoch < 1:
        raise UsageError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    total = cfg.epochs * steps_per_epoch
    warm = cfg.warmup_epochs * steps_per_epoch
    if step <= 0 and warm > 0:
        return 0.0
    if step < warm:
        return cfg.base_lr * (step / warm)
    if step >= total or total == warm:
        return 0.0
    # ratio first so the peak at step == warm is exactly base_lr
    return cfg.base_lr * ((total - step) / (total - warm))


# --- optimizer --------------------------------------------------------------------


@dataclass
class OptState:
    m: ModelParams  # first-moment accumulators, shapes mirror the params
    v: ModelParams  # second-moment accumulators
    step: int = 0


def init_opt_state(params: ModelParams) -> OptState:
    return OptState(m=zero_grads_shell(params), v=zero_grads_shell(params), step=0)


def global_grad_norm(grads: ModelParams) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for _, g in named_arrays(grads)))


def adam_step(params: ModelParams, grads: ModelParams, opt: OptState, lr: float,
              clip_norm: float = 5.0):
    """One optimizer update, in place; returns (params, opt) for chaining.

    Gradients are first clipped to the given global norm (0 disables), then
    fed through bias-corrected Adam.
    """
    norm = global_grad_norm(grads)
    if not math.isfinite(norm):
        bad = [n for n, g in named_arrays(grads) if not np.all(np.isfinite(g))]
        raise TrainingError(f"non-finite gradient in {bad}")
    scale = clip_norm / norm if clip_norm > 0 and norm > clip_norm else 1.0
    opt.step += 1
    correct1 = 1.0 - ADAM_BETA1**opt.step
    correct2 = 1.0 - ADAM_BETA2**opt.step
    triples = zip(named_arrays(params), named_arrays(grads),
                  named_arrays(opt.m), named_arrays(opt.v))
    for (_, p), (_, g), (_, m), (_, v) in triples:
        g = g * scale
        m[...] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / correct1) / (np.sqrt(v / correct2) + ADAM_EPS)
    return params, opt


# --- character error rate ----------------------------------------------------------


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance, two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(hypothesis: str, reference: str) -> float:
    """Edit distance over reference length; an empty reference scores 0 for
    an empty hypothesis and 1 for any non-empty one."""
    if not reference:
        return 0.0 if not hypothesis else 1.0
    return levenshtein(hypothesis, reference) / len(reference)


def corpus_cer(pairs) -> float:
    """Total edits over total reference length across (hypothesis, reference)
    pairs. Empty references still contribute their edits. All-empty
    references with any edits give inf rather than hiding the errors."""
    edits = sum(levenshtein(h, r) for h, r in pairs)
    length = sum(len(r) for _, r in pairs)
    if length == 0:
        return 0.0 if edits == 0 else float("inf")
    return edits / length


# --- training loop ----------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    mean_train_loss: float
    val_cer: float
    lr: float
    wall_seconds: float

    def row(self) -> str:
        return (f"{self.epoch}\t{self.mean_train_loss:.6f}\t{self.val_cer:.6f}"
                f"\t{self.lr:.8f}\t{self.wall_seconds:.3f}")


@dataclass
class TrainResult:
    params: ModelParams  # the final-epoch weights, live
    best_epoch: int
    best_val_cer: float
    metrics: list  # [EpochMetrics]
    checkpoint_paths: list
    best_path: Path
    metrics_path: Path


def evaluate_cer(params: ModelParams, model_cfg: ModelConfig, vocab: Vocab, samples,
                 decode_cfg: DecodeConfig | None = None) -> float:
    pairs = []
    for s in samples:
        canon = preprocess(s, model_cfg.input_height)
        hyp = decode_image(canon.image, vocab, params, model_cfg, decode_cfg)
        pairs.append((hyp, canon.transcript))
    return corpus_cer(pairs)


def _augment_seed(base_seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence((base_seed, epoch, index)).generate_state(1)[0])


def _example_loss_grads(sample, labels, params, model_cfg, dropout_rng, inv_batch):
    lattice, cache = forward_lattice(sample.image, labels, params, model_cfg,
                                     rng=dropout_rng)
    tables = rnnt_alphabeta(lattice, labels)
    loss = -tables.log_prob
    grad_lattice = rnnt_grad(lattice, labels, tables) * inv_batch
    return loss, backward_pass(grad_lattice, cache, params, model_cfg)


def _accumulate(total: ModelParams, delta: ModelParams) -> None:
    for (_, a), (_, b) in zip(named_arrays(total), named_arrays(delta)):
        a += b


def train_run(model_cfg: ModelConfig, train_cfg: TrainConfig, synth_cfg: SynthConfig,
              vocab: Vocab, train_samples, val_samples, *, workers: int = 1,
              clock=time.monotonic, progress=None) -> TrainResult:
    """Full training run over pre-split data; returns the result summary and
    leaves per-epoch checkpoints, a `best.ckpt` alias, and `metrics.tsv`
    under train_cfg.checkpoint_dir.

    ``clock`` exists so reproducibility checks can pin the wall_seconds
    column; everything else is a pure function of configs, data, and seed.
    """
    model_cfg.validate()
    train_cfg.validate()
    if vocab.size != model_cfg.vocab_size:
        raise ConfigError(
            f"charset has {vocab.size} symbols but the model expects {model_cfg.vocab_size}"
        )
    if not train_samples:
        raise ConfigError("no training samples")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    ckpt_dir = Path(train_cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    params = init_params(model_cfg, train_cfg.seed)
    opt = init_opt_state(params)
    canon_train = [preprocess(s, model_cfg.input_height) for s in train_samples]
    canon_val = [preprocess(s, model_cfg.input_height) for s in val_samples]
    label_cache = [vocab.encode(s.transcript) for s in canon_train]
    n = len(canon_train)
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    metrics: list = []
    checkpoint_paths: list = []
    best_epoch, best_cer = 0, float("inf")
    metrics_path = ckpt_dir / "metrics.tsv"
    t0 = clock()
    global_step = 0
    try:
        with open(metrics_path, "w", encoding="utf-8") as log:
            log.write("\t".join(METRICS_COLUMNS) + "\n")
            for epoch in range(1, train_cfg.epochs + 1):
                order = np.random.default_rng((train_cfg.seed, epoch)).permutation(n)
                losses = []
                lr = 0.0
                for start in range(0, n, train_cfg.batch_size):
                    chunk = order[start : start + train_cfg.batch_size]
                    lr = lr_at(global_step, steps_per_epoch, train_cfg)
                    batch_grads = zero_grads_shell(params)

                    def one(idx, _epoch=epoch):
                        idx = int(idx)
                        s = augment(canon_train[idx], synth_cfg,
                                    train_cfg.augment_strength,
                                    _augment_seed(train_cfg.seed, _epoch, idx))
                        rng = (np.random.default_rng((train_cfg.seed, _epoch, idx, 7))
                               if model_cfg.dropout_rate > 0 else None)
                        return _example_loss_grads(s, label_cache[idx], params,
                                                   model_cfg, rng, 1.0 / len(chunk))

                    try:
                        if pool is not None:
                            results = list(pool.map(one, chunk))
                        else:
                            results = [one(idx) for idx in chunk]
                    except (UsageError, FloatingPointError) as exc:
                        raise TrainingError(
                            f"epoch {epoch}, batch starting at sample {start}: "
                            f"samples {[int(i) for i in chunk]}: {exc}"
                        ) from exc
                    batch_loss = 0.0
                    for loss, grads in results:
                        batch_loss += loss / len(chunk)
                        _accumulate(batch_grads, grads)
                    if not math.isfinite(batch_loss):
                        raise TrainingError(
                            f"epoch {epoch}, batch starting at sample {start}: "
                            f"loss diverged on samples {[int(i) for i in chunk]}"
                        )
                    losses.append(batch_loss)
                    adam_step(params, batch_grads, opt, lr,
                              clip_norm=train_cfg.grad_clip_norm)
                    global_step += 1

                val = evaluate_cer(params, model_cfg, vocab, canon_val)
                entry = EpochMetrics(epoch, float(np.mean(losses)), val, lr,
                                     clock() - t0)
                metrics.append(entry)
                log.write(entry.row() + "\n")
                log.flush()
                if progress is not None:
                    progress(entry)
                path = ckpt_dir / f"epoch_{epoch:03d}.ckpt"
                save_checkpoint(path, model_cfg, vocab, params)
                checkpoint_paths.append(path)
                if val < best_cer:  # strict: ties keep the earlier epoch
                    best_cer, best_epoch = val, epoch
    finally:
        if pool is not None:
            pool.shutdown()

    best_path = ckpt_dir / "best.ckpt"
    shutil.copyfile(checkpoint_paths[best_epoch - 1], best_path)
    return TrainResult(params=params, best_epoch=best_epoch, best_val_cer=best_cer,
                       metrics=metrics, checkpoint_paths=checkpoint_paths,
                       best_path=best_path, metrics_path=metrics_path)
