"""Training: Adam, the stochastic loss-selection loop (two independent
optimizers, a random branch per batch), the aggregated-loss alternative, a
visual-only loop for the plain regressor, and early stopping on validation loss.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .data import CaptionedImage
from .nn import Model
from .textvec import Vocabulary


class TrainingDiverged(RuntimeError):
    """A training loss became non-finite."""


class Adam:
    """Adam with bias correction; moments are kept in float64 per parameter."""

    def __init__(self, alpha: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if alpha <= 0 or epsilon <= 0:
            raise ValueError("alpha and epsilon must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One update, in place; parameter dtypes are preserved."""
        if set(params) != set(grads):
            raise ValueError("parameter and gradient keys differ")
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise ValueError(f"non-finite gradient for {name!r}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            m = self._m.get(name)
            if m is None:
                m = np.zeros(p.shape, dtype=np.float64)
                self._v[name] = np.zeros(p.shape, dtype=np.float64)
            v = self._v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[name], self._v[name] = m, v
            step = self.alpha * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            p[...] = p.astype(np.float64) - step


@dataclass
class TrainConfig:
    batch_size: int = 100
    max_iterations: int = 300_000
    eval_every: int = 500
    patience: int = 10
    sl_prob_visual: float = 0.5
    seed: int = 0
    learning_rate: float = 0.001

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 1 or self.eval_every < 1:
            raise ValueError("max_iterations and eval_every must be >= 1")
        if not 0.0 <= self.sl_prob_visual <= 1.0:
            raise ValueError("sl_prob_visual must lie in [0, 1]")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class HistoryPoint:
    iteration: int
    train_loss_t: float | None
    train_loss_v: float
    val_loss_t: float | None
    val_loss_v: float


@dataclass
class TrainHistory:
    points: list[HistoryPoint] = field(default_factory=list)

    CSV_HEADER = ["iteration", "train_loss_t", "train_loss_v", "val_loss_t", "val_loss_v"]

    def val_loss_v_series(self) -> list[float]:
        return [p.val_loss_v for p in self.points]

    def to_csv(self, path) -> None:
        """`iteration,train_loss_t,train_loss_v,val_loss_t,val_loss_v`; absent as empty."""
        def cell(x):
            return "" if x is None else repr(x)

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for p in self.points:
                writer.writerow([p.iteration, cell(p.train_loss_t), cell(p.train_loss_v),
                                 cell(p.val_loss_t), cell(p.val_loss_v)])

    @classmethod
    def from_csv(cls, path) -> "TrainHistory":
        def parse(x):
            return None if x == "" else float(x)

        points = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != cls.CSV_HEADER:
                raise ValueError(f"{path}: unexpected history header {header}")
            for row in reader:
                points.append(HistoryPoint(int(row[0]), parse(row[1]), float(row[2]),
                                           parse(row[3]), float(row[4])))
        return cls(points)


@dataclass
class TrainResult:
    model: Model  # parameters at the best validation checkpoint
    history: TrainHistory
    best_iteration: int
    best_val_loss_v: float
    iterations_run: int
    visual_steps: int
    text_steps: int
    wall_seconds: float
    stopped_early: bool


@dataclass(frozen=True)
class TrainTriple:
    """One training instance: a visual target and an input/output caption pair."""

    feature: np.ndarray
    caption_in: str
    caption_out: str


def _uniform_pick(rng: np.random.Generator, n: int) -> int:
    return min(int(rng.random() * n), n - 1)


def sample_triple(instance: CaptionedImage, rng: np.random.Generator) -> TrainTriple:
    """Draw the input and output captions independently and uniformly."""
    n = len(instance.captions)
    if n == 0:
        raise ValueError("instance has no captions")
    return TrainTriple(feature=instance.feature,
                       caption_in=instance.captions[_uniform_pick(rng, n)],
                       caption_out=instance.captions[_uniform_pick(rng, n)])


def early_stop_check(history: TrainHistory, patience: int) -> tuple[bool, int]:
    """Whether to stop, and the iteration of the best validation point so far.

    Stops once the running minimum of val_loss_v has gone max(1, patience)
    consecutive evaluations without a strict improvement.
    """
    if not history.points:
        raise ValueError("history is empty")
    best_idx = 0
    best = history.points[0].val_loss_v
    for i, point in enumerate(history.points):
        if point.val_loss_v < best:
            best = point.val_loss_v
            best_idx = i
    since_best = len(history.points) - 1 - best_idx
    return since_best >= max(1, patience), history.points[best_idx].iteration


# ---------------------------------------------------------------------------
# Dataset encoding and the shared training engine
# ---------------------------------------------------------------------------

@dataclass
class EncodedDataset:
    """Captions pre-encoded to active-index arrays, features as float64 targets."""

    vocab_dim: int
    features: np.ndarray  # [N x visual_dim]
    caption_indices: list[list[np.ndarray]]
    n_captions: np.ndarray

    @property
    def size(self) -> int:
        return len(self.caption_indices)

    @property
    def visual_dim(self) -> int:
        return self.features.shape[1]


def encode_dataset(images: Sequence[CaptionedImage], vocab: Vocabulary) -> EncodedDataset:
    if not images:
        raise ValueError("dataset is empty")
    dims = {img.feature.shape for img in images}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature shapes: {sorted(dims)}")
    features = np.stack([img.feature for img in images]).astype(np.float64)
    caption_indices = [
        [np.asarray(vocab.encode_text(c).on_indices, dtype=np.intp) for c in img.captions]
        for img in images
    ]
    return EncodedDataset(
        vocab_dim=len(vocab), features=features, caption_indices=caption_indices,
        n_captions=np.array([len(img.captions) for img in images], dtype=np.int64))


def _bow_matrix(index_lists: Sequence[np.ndarray], dim: int) -> np.ndarray:
    out = np.zeros((dim, len(index_lists)))
    for col, idx in enumerate(index_lists):
        out[idx, col] = 1.0
    return out


class _BatchSampler:
    """Fixed-size batches over a permutation, reshuffled after every full pass."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        parts = []
        need = self.batch_size
        while need > 0:
            take = min(need, self.n - self._pos)
            parts.append(self._order[self._pos:self._pos + take])
            self._pos += take
            need -= take
            if self._pos == self.n:
                self._order = self.rng.permutation(self.n)
                self._pos = 0
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


def _split_losses(model: Model, ds: EncodedDataset,
                  with_text: bool, chunk: int = 512) -> tuple[float | None, float]:
    """Deterministic whole-split losses, using each image's first caption as
    both the input and the reconstruction target."""
    sq_t = 0.0
    sq_v = 0.0
    for start in range(0, ds.size, chunk):
        cols = [caps[0] for caps in ds.caption_indices[start:start + chunk]]
        inputs = _bow_matrix(cols, ds.vocab_dim)
        _, text_recon, visual_pred = nn.forward_batch(model, inputs)
        sq_v += float(((visual_pred - ds.features[start:start + chunk].T) ** 2).sum())
        if with_text:
            sq_t += float(((text_recon - inputs) ** 2).sum())
    loss_v = sq_v / (ds.size * ds.visual_dim)
    loss_t = sq_t / (ds.size * ds.vocab_dim) if with_text else None
    return loss_t, loss_v


_MODE_SL = "sl"
_MODE_VISUAL = "visual"
_MODE_AGGREGATED = "aggregated"


def _run_training(train: EncodedDataset, val: EncodedDataset, model: Model,
                  config: TrainConfig, mode: str, text_weight: float = 1.0,
                  progress=None) -> TrainResult:
    config.validate()
    if train.size == 0 or val.size == 0:
        raise ValueError("train and validation sets must be non-empty")
    for ds, name in ((train, "train"), (val, "validation")):
        if ds.vocab_dim != model.vocab_dim or ds.visual_dim != model.visual_dim:
            raise ValueError(f"{name} set dims do not match the model")

    track_text = model.has_text_branch and not (mode == _MODE_AGGREGATED and text_weight == 0.0)
    rng = np.random.default_rng(config.seed)
    sampler = _BatchSampler(train.size, config.batch_size, rng)

    vis_params = {"w_hid": model.w_hid, "b_hid": model.b_hid,
                  "w_vis": model.w_vis, "b_vis": model.b_vis}
    if mode == _MODE_SL:
        adam_visual = Adam(alpha=config.learning_rate)
        adam_text = Adam(alpha=config.learning_rate)
        txt_params = {"w_hid": model.w_hid, "b_hid": model.b_hid,
                      "w_txt": model.w_txt, "b_txt": model.b_txt}
    elif mode == _MODE_VISUAL:
        adam_visual = Adam(alpha=config.learning_rate)
    elif mode == _MODE_AGGREGATED:
        adam_all = Adam(alpha=config.learning_rate)
        all_params = model.params()
    else:
        raise ValueError(f"unknown training mode {mode!r}")

    history = TrainHistory()
    best_snapshot = model.copy()
    best_iteration = 0

    def evaluate_point(iteration: int) -> None:
        nonlocal best_snapshot, best_iteration
        tr_t, tr_v = _split_losses(model, train, track_text)
        va_t, va_v = _split_losses(model, val, track_text)
        history.points.append(HistoryPoint(iteration, tr_t, tr_v, va_t, va_v))
        best_before = min(p.val_loss_v for p in history.points[:-1]) if len(history.points) > 1 else None
        if best_before is None or va_v < best_before:
            best_snapshot = model.copy()
            best_iteration = iteration
        if progress is not None:
            progress(history.points[-1])

    evaluate_point(0)
    visual_steps = 0
    text_steps = 0
    iterations_run = 0
    stopped_early = False
    started = time.perf_counter()

    for iteration in range(1, config.max_iterations + 1):
        batch = sampler.next_batch()
        picks = rng.random((len(batch), 2))
        counts = train.n_captions[batch]
        in_pick = np.minimum((picks[:, 0] * counts).astype(np.int64), counts - 1)
        out_pick = np.minimum((picks[:, 1] * counts).astype(np.int64), counts - 1)
        in_cols = [train.caption_indices[i][p] for i, p in zip(batch, in_pick)]
        inputs = _bow_matrix(in_cols, train.vocab_dim)

        if mode == _MODE_SL:
            if rng.random() < config.sl_prob_visual:
                loss, grads = nn.backward_visual_batch(model, inputs,
                                                       train.features[batch].T)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"visual loss is {loss} at iteration {iteration}")
                adam_visual.step(vis_params, grads)
                visual_steps += 1
            else:
                out_cols = [train.caption_indices[i][p] for i, p in zip(batch, out_pick)]
                targets = _bow_matrix(out_cols, train.vocab_dim)
                loss, grads = nn.backward_text_batch(model, inputs, targets)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"text loss is {loss} at iteration {iteration}")
                adam_text.step(txt_params, grads)
                text_steps += 1
        elif mode == _MODE_VISUAL:
            loss, grads = nn.backward_visual_batch(model, inputs, train.features[batch].T)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"visual loss is {loss} at iteration {iteration}")
            adam_visual.step(vis_params, grads)
            visual_steps += 1
        else:  # aggregated
            out_cols = [train.caption_indices[i][p] for i, p in zip(batch, out_pick)]
            targets = _bow_matrix(out_cols, train.vocab_dim)
            loss_t, loss_v, grads = nn.backward_joint_batch(
                model, inputs, targets, train.features[batch].T, text_weight)
            if not np.isfinite(loss_v) or (text_weight != 0.0 and not np.isfinite(loss_t)):
                raise TrainingDiverged(
                    f"aggregated loss is non-finite at iteration {iteration} "
                    f"(visual={loss_v}, text={loss_t})")
            adam_all.step(all_params, grads)
            visual_steps += 1
            if text_weight != 0.0:
                text_steps += 1

        iterations_run = iteration
        if iteration % config.eval_every == 0:
            evaluate_point(iteration)
            stop, _ = early_stop_check(history, config.patience)
            if stop:
                stopped_early = True
                break

    wall = time.perf_counter() - started
    best_val = min(p.val_loss_v for p in history.points)
    return TrainResult(model=best_snapshot, history=history,
                       best_iteration=best_iteration, best_val_loss_v=best_val,
                       iterations_run=iterations_run, visual_steps=visual_steps,
                       text_steps=text_steps, wall_seconds=wall,
                       stopped_early=stopped_early)


def sl_train(train: EncodedDataset, val: EncodedDataset, model: Model,
             config: TrainConfig, progress=None) -> TrainResult:
    """Stochastic loss selection: per batch, flip a coin with
    P(visual) = sl_prob_visual and update only that branch with its own Adam."""
    if not model.has_text_branch:
        raise ValueError("stochastic-loss training needs the text branch")
    return _run_training(train, val, model, config, _MODE_SL, progress=progress)


def aggregated_train(train: EncodedDataset, val: EncodedDataset, model: Model,
                     config: TrainConfig, text_weight: float = 1.0,
                     progress=None) -> TrainResult:
    """Single Adam over all parameters minimizing visual + text_weight * text loss."""
    if not model.has_text_branch:
        raise ValueError("aggregated training needs the text branch")
    return _run_training(train, val, model, config, _MODE_AGGREGATED,
                         text_weight=text_weight, progress=progress)


def visreg_train(train: EncodedDataset, val: EncodedDataset, model: Model,
                 config: TrainConfig, progress=None) -> TrainResult:
    """Visual branch only; any text head is left untouched."""
    return _run_training(train, val, model, config, _MODE_VISUAL, progress=progress)
