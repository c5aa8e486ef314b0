"""Dynamic multi-size training loop with decay, scoring, and checkpoints.

Every batch runs the same five steps: draw a patch size from the configured
distribution, extract a batch of that size, take one forward/backward/SGD
step, compute the batch statistic (accuracy or loss) from the pre-update
forward pass, and add it to that size's score. The learning rate follows a
staircase schedule: base * factor^(step // decay_steps).

All randomness derives statelessly from (seed, step), so a run resumed from
a checkpoint reproduces the uninterrupted trajectory bit for bit; the
checkpoint's rng blob only records the seed and the next step to run.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, infer, models
from .engine import sgd_step, softmax_cross_entropy
from .errors import NumericError
from .metrics import ConfusionMatrix, MetricsBundle
from .scheduler import SCORE_MODES, PatchSizeDistribution, ScoreTable

__all__ = [
    "TrainConfig",
    "TrainResult",
    "lr_at",
    "train",
    "evaluate",
    "write_history",
    "read_history",
    "save_checkpoint",
    "load_checkpoint",
]

HISTORY_HEADER = "step,size,loss,accuracy,lr"


@dataclass
class TrainConfig:
    distribution: PatchSizeDistribution
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    iterations: int = 2000
    decay_factor: float = 0.5
    decay_steps: int = 50000
    batch_size: int = 16
    score_mode: str = "accuracy"
    seed: int = 0
    score_warmup: int = 0  # batches before this step do not touch the score table
    class_balance: bool = False
    checkpoint_every: int = 0  # 0 = only initial and final
    validate_every: int = 0  # 0 = never

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_steps < 1:
            raise ValueError(f"decay steps must be >= 1, got {self.decay_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"unknown score mode {self.score_mode!r}")


@dataclass
class TrainResult:
    params: list
    table: ScoreTable
    history: list = field(default_factory=list)  # (step, size, loss, accuracy, lr)
    val_history: list = field(default_factory=list)  # (step, size, overall_accuracy)


def lr_at(config: TrainConfig, step: int) -> float:
    """Staircase exponential decay: base * factor^(step // decay_steps)."""
    return config.learning_rate * config.decay_factor ** (step // config.decay_steps)


def _step_rng(seed: int, step: int, lane: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, lane])


def write_history(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(HISTORY_HEADER + "\n")
        for step, size, loss, accuracy, lr in rows:
            f.write(f"{step},{size},{loss!r},{accuracy!r},{lr!r}\n")


def read_history(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected history header {header!r}")
        for line in f:
            step, size, loss, accuracy, lr = line.strip().split(",")
            rows.append((int(step), int(size), float(loss), float(accuracy), float(lr)))
    return rows


def save_checkpoint(ckpt_dir, spec, params, table: ScoreTable, seed: int, next_step: int):
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    models.save_params(ckpt_dir / "weights.dsw", spec, params)
    table.save(ckpt_dir / "score_table.txt")
    with open(ckpt_dir / "rng_state.json", "w", encoding="utf-8") as f:
        json.dump({"seed": seed, "next_step": next_step}, f, sort_keys=True)
        f.write("\n")
    return ckpt_dir


def load_checkpoint(ckpt_dir):
    """Returns (spec, params, table, seed, next_step)."""
    ckpt_dir = Path(ckpt_dir)
    spec, params = models.load_params(ckpt_dir / "weights.dsw")
    table = ScoreTable.load(ckpt_dir / "score_table.txt")
    with open(ckpt_dir / "rng_state.json", "r", encoding="utf-8") as f:
        state = json.load(f)
    return spec, params, table, int(state["seed"]), int(state["next_step"])


def train(
    config: TrainConfig,
    scenes,
    spec,
    params=None,
    table: ScoreTable | None = None,
    start_step: int = 0,
    run_dir=None,
    val_scenes=None,
) -> TrainResult:
    """Run the dynamic loop from start_step to config.iterations.

    scenes must carry labels (at least one non-void pixel overall). When
    run_dir is given, checkpoints land under run_dir/checkpoints/step_*
    (initial, every checkpoint_every steps, and final) and history.csv is
    refreshed alongside them. A non-finite loss aborts with NumericError;
    checkpoints already written stay on disk.
    """
    if params is None:
        params = models.init_params(spec, config.seed)
    if table is None:
        table = ScoreTable(config.distribution.candidates(), config.score_mode)
    if not any((~s.void_mask).any() for s in scenes):
        raise NumericError("no training scene has labeled pixels")

    run_dir = Path(run_dir) if run_dir is not None else None
    result = TrainResult(params=params, table=table)
    if run_dir is not None and start_step > 0 and (run_dir / "history.csv").exists():
        # Resumed runs keep the earlier rows so history.csv stays complete.
        result.history.extend(
            row for row in read_history(run_dir / "history.csv") if row[0] < start_step
        )

    def checkpoint(next_step):
        if run_dir is None:
            return
        save_checkpoint(
            run_dir / "checkpoints" / f"step_{next_step:08d}",
            spec,
            params,
            table,
            config.seed,
            next_step,
        )
        write_history(run_dir / "history.csv", result.history)

    checkpoint(start_step)
    for step in range(start_step, config.iterations):
        size = config.distribution.sample(_step_rng(config.seed, step, 0))
        batch = data.extract_batch(
            scenes,
            size,
            config.batch_size,
            _step_rng(config.seed, step, 1),
            class_balance=config.class_balance,
        )
        logits, saved = models.forward(spec, params, batch.inputs, save_for_backward=True)
        stats = softmax_cross_entropy(logits, batch.labels, batch.void_mask)
        if not np.isfinite(stats.loss):
            raise NumericError(
                f"non-finite loss at step {step}; last checkpoint retained"
                + (f" under {run_dir}" if run_dir else "")
            )
        grads, _ = models.backward(spec, params, saved, stats.grad_logits)
        lr = lr_at(config, step)
        sgd_step(params, grads, lr, config.weight_decay)
        if step >= config.score_warmup:
            stat = stats.accuracy if config.score_mode == "accuracy" else stats.loss
            table.update(size, stat)
        result.history.append((step, size, stats.loss, stats.accuracy, lr))

        done = step + 1
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            checkpoint(done)
        if (
            config.validate_every
            and val_scenes
            and done % config.validate_every == 0
        ):
            val_size = table.best_size() if table.total_updates() else size
            bundle = evaluate(spec, params, val_scenes, val_size)
            if bundle.overall_accuracy is not None:
                result.val_history.append((step, val_size, bundle.overall_accuracy))

    if config.iterations > start_step or start_step == 0:
        checkpoint(config.iterations)
    if run_dir is not None:
        # Final weights and scores also live at the run root for convenience.
        final = run_dir / "checkpoints" / f"step_{config.iterations:08d}"
        shutil.copyfile(final / "weights.dsw", run_dir / "weights.dsw")
        shutil.copyfile(final / "score_table.txt", run_dir / "score_table.txt")
        if result.val_history:
            with open(run_dir / "validation.csv", "w", encoding="utf-8") as f:
                f.write("step,size,overall_accuracy\n")
                for step, size, acc in result.val_history:
                    f.write(f"{step},{size},{acc!r}\n")
    return result


def evaluate(spec, params, scenes, size: int, overlap: float = 0.0) -> MetricsBundle:
    """Predict every scene at the given size and score against its labels."""
    cm = ConfusionMatrix(spec.num_classes)
    for scene in scenes:
        result = infer.predict_scene(spec, params, scene.bands, size, overlap)
        cm.accumulate(scene.labels, result.classes, scene.void_mask)
    return MetricsBundle.from_confusion(cm)
