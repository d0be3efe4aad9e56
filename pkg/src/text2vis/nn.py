"""The two-branch feedforward net: a shared hidden layer feeding a text
reconstruction head and a visual regression head.

    hidden      = ReLU(w_hid @ x + b_hid)        x: binary bag-of-words
    text_recon  = ReLU(w_txt @ hidden + b_txt)   (only with the text branch)
    visual_pred = ReLU(w_vis @ hidden + b_vis)

Parameters are stored float32; all arithmetic and gradient accumulation is
done in float64.  Gradients are computed analytically, per branch: the text
loss touches {w_hid, b_hid, w_txt, b_txt}, the visual loss {w_hid, b_hid,
w_vis, b_vis}.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .textvec import BowVector

CHECKPOINT_MAGIC = b"T2VM"
CHECKPOINT_VERSION = 1
_FLAG_TEXT_BRANCH = 1

# Std of a unit normal truncated at +-2 sigma: sqrt(1 - 4*phi(2)/(2*Phi(2)-1)).
# Sampling widths are divided by this so the post-truncation std hits the target.
TRUNC_STD_FACTOR = math.sqrt(
    1.0 - 4.0 * (math.exp(-2.0) / math.sqrt(2.0 * math.pi)) / math.erf(math.sqrt(2.0))
)


@dataclass
class Model:
    """Weights and biases of the network; heads are named by what they produce."""

    w_hid: np.ndarray  # [hidden x vocab]
    b_hid: np.ndarray  # [hidden]
    w_txt: np.ndarray | None  # [vocab x hidden], None without the text branch
    b_txt: np.ndarray | None  # [vocab]
    w_vis: np.ndarray  # [visual x hidden]
    b_vis: np.ndarray  # [visual]

    @property
    def vocab_dim(self) -> int:
        return self.w_hid.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hid.shape[0]

    @property
    def visual_dim(self) -> int:
        return self.w_vis.shape[0]

    @property
    def has_text_branch(self) -> bool:
        return self.w_txt is not None

    def params(self) -> dict[str, np.ndarray]:
        """All present parameter arrays, keyed by field name."""
        out = {"w_hid": self.w_hid, "b_hid": self.b_hid,
               "w_vis": self.w_vis, "b_vis": self.b_vis}
        if self.has_text_branch:
            out["w_txt"] = self.w_txt
            out["b_txt"] = self.b_txt
        return out

    def copy(self) -> "Model":
        return Model(
            w_hid=self.w_hid.copy(), b_hid=self.b_hid.copy(),
            w_txt=None if self.w_txt is None else self.w_txt.copy(),
            b_txt=None if self.b_txt is None else self.b_txt.copy(),
            w_vis=self.w_vis.copy(), b_vis=self.b_vis.copy(),
        )


@dataclass
class ForwardResult:
    hidden: np.ndarray
    text_recon: np.ndarray | None
    visual_pred: np.ndarray


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(x, 0)


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Zero-mean normal samples with standard deviation ``std``, rejection-sampled
    so nothing falls outside two sampling deviations."""
    sigma = std / TRUNC_STD_FACTOR
    out = rng.normal(0.0, sigma, size=shape)
    bad = np.abs(out) > 2.0 * sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * sigma
    return out


def init_model(vocab_dim: int, hidden_dim: int = 1024, visual_dim: int = 4096,
               has_text_branch: bool = True, seed: int = 0) -> Model:
    """Fresh model: weights truncated-normal with std 1/sqrt(fan-in), biases zero."""
    if vocab_dim < 1 or hidden_dim < 1 or visual_dim < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def weights(rows, cols):
        return truncated_normal(rng, (rows, cols), 1.0 / math.sqrt(cols)).astype(np.float32)

    w_hid = weights(hidden_dim, vocab_dim)
    w_txt = weights(vocab_dim, hidden_dim) if has_text_branch else None
    w_vis = weights(visual_dim, hidden_dim)
    return Model(
        w_hid=w_hid,
        b_hid=np.zeros(hidden_dim, dtype=np.float32),
        w_txt=w_txt,
        b_txt=np.zeros(vocab_dim, dtype=np.float32) if has_text_branch else None,
        w_vis=w_vis,
        b_vis=np.zeros(visual_dim, dtype=np.float32),
    )


def param_count(model: Model) -> int:
    """Exact number of scalars across all present weights and biases."""
    return sum(int(p.size) for p in model.params().values())


def mse(x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error (1/n) * sum((x_i - y_i)^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("mse of empty vectors is undefined")
    d = x - y
    return float(np.mean(d * d))


def _hidden_from_bow(model: Model, text_bow: BowVector) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activation and activation of the hidden layer for one sparse input.

    Only the active columns of w_hid are touched.
    """
    if text_bow.dim != model.vocab_dim:
        raise ValueError(
            f"input dim {text_bow.dim} does not match vocabulary dim {model.vocab_dim}")
    pre = model.b_hid.astype(np.float64).copy()
    if text_bow.on_indices:
        idx = np.asarray(text_bow.on_indices, dtype=np.intp)
        pre += model.w_hid[:, idx].astype(np.float64).sum(axis=1)
    return pre, relu(pre)


def forward(model: Model, text_bow: BowVector) -> ForwardResult:
    """Run the net on one bag-of-words input."""
    _, hidden = _hidden_from_bow(model, text_bow)
    text_recon = None
    if model.has_text_branch:
        text_recon = relu(model.w_txt.astype(np.float64) @ hidden
                          + model.b_txt.astype(np.float64))
    visual_pred = relu(model.w_vis.astype(np.float64) @ hidden
                       + model.b_vis.astype(np.float64))
    return ForwardResult(hidden=hidden, text_recon=text_recon, visual_pred=visual_pred)


def _head_backward(w_out, b_out, pre1, hidden, on_idx, target, vocab_dim):
    """Shared chain rule for one output head over {w_hid, b_hid, w_out, b_out}."""
    w_out64 = w_out.astype(np.float64)
    pre_out = w_out64 @ hidden + b_out.astype(np.float64)
    pred = relu(pre_out)
    diff = pred - target
    n = diff.size
    loss = float(np.mean(diff * diff))

    delta_out = (2.0 / n) * diff * (pre_out > 0)
    g_w_out = np.outer(delta_out, hidden)
    g_b_out = delta_out
    delta_hid = (w_out64.T @ delta_out) * (pre1 > 0)
    g_w_hid = np.zeros((hidden.shape[0], vocab_dim), dtype=np.float64)
    if on_idx:
        g_w_hid[:, list(on_idx)] = delta_hid[:, None]
    return loss, g_w_hid, delta_hid, g_w_out, g_b_out


def backward_text(model: Model, text_bow: BowVector,
                  target_bow: BowVector) -> tuple[float, dict[str, np.ndarray]]:
    """Text-reconstruction loss and its gradients over {w_hid, b_hid, w_txt, b_txt}."""
    if not model.has_text_branch:
        raise ValueError("model has no text branch")
    if target_bow.dim != model.vocab_dim:
        raise ValueError("target dim does not match vocabulary dim")
    pre1, hidden = _hidden_from_bow(model, text_bow)
    target = target_bow.to_dense(np.float64)
    loss, g_w_hid, g_b_hid, g_w_txt, g_b_txt = _head_backward(
        model.w_txt, model.b_txt, pre1, hidden, text_bow.on_indices, target,
        model.vocab_dim)
    return loss, {"w_hid": g_w_hid, "b_hid": g_b_hid, "w_txt": g_w_txt, "b_txt": g_b_txt}


def backward_visual(model: Model, text_bow: BowVector,
                    visual_target: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Visual-regression loss and its gradients over {w_hid, b_hid, w_vis, b_vis}."""
    visual_target = np.asarray(visual_target, dtype=np.float64)
    if visual_target.shape != (model.visual_dim,):
        raise ValueError("target dim does not match visual dim")
    pre1, hidden = _hidden_from_bow(model, text_bow)
    loss, g_w_hid, g_b_hid, g_w_vis, g_b_vis = _head_backward(
        model.w_vis, model.b_vis, pre1, hidden, text_bow.on_indices, visual_target,
        model.vocab_dim)
    return loss, {"w_hid": g_w_hid, "b_hid": g_b_hid, "w_vis": g_w_vis, "b_vis": g_b_vis}


# ---------------------------------------------------------------------------
# Batched versions, used by the trainers.  Inputs are dense float64 matrices
# with one column per example; returned gradients are means over the batch.
# ---------------------------------------------------------------------------

def hidden_batch(model: Model, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = model.w_hid.astype(np.float64) @ inputs + model.b_hid.astype(np.float64)[:, None]
    return pre, relu(pre)


def forward_batch(model: Model, inputs: np.ndarray):
    """(hidden, text_recon, visual_pred) for a [vocab x batch] input matrix."""
    _, hidden = hidden_batch(model, inputs)
    text_recon = None
    if model.has_text_branch:
        text_recon = relu(model.w_txt.astype(np.float64) @ hidden
                          + model.b_txt.astype(np.float64)[:, None])
    visual_pred = relu(model.w_vis.astype(np.float64) @ hidden
                       + model.b_vis.astype(np.float64)[:, None])
    return hidden, text_recon, visual_pred


def _head_backward_batch(w_out, b_out, pre1, hidden, inputs, targets):
    w_out64 = w_out.astype(np.float64)
    pre_out = w_out64 @ hidden + b_out.astype(np.float64)[:, None]
    pred = relu(pre_out)
    diff = pred - targets
    loss = float(np.mean(diff * diff))

    delta_out = (2.0 / diff.size) * diff * (pre_out > 0)
    g_w_out = delta_out @ hidden.T
    g_b_out = delta_out.sum(axis=1)
    delta_hid = (w_out64.T @ delta_out) * (pre1 > 0)
    g_w_hid = delta_hid @ inputs.T
    g_b_hid = delta_hid.sum(axis=1)
    return loss, g_w_hid, g_b_hid, g_w_out, g_b_out


def backward_text_batch(model: Model, inputs: np.ndarray, targets: np.ndarray):
    """Mean text loss and mean per-example gradients for a batch."""
    pre1, hidden = hidden_batch(model, inputs)
    loss, g_w_hid, g_b_hid, g_w_txt, g_b_txt = _head_backward_batch(
        model.w_txt, model.b_txt, pre1, hidden, inputs, targets)
    return loss, {"w_hid": g_w_hid, "b_hid": g_b_hid, "w_txt": g_w_txt, "b_txt": g_b_txt}


def backward_visual_batch(model: Model, inputs: np.ndarray, targets: np.ndarray):
    """Mean visual loss and mean per-example gradients for a batch."""
    pre1, hidden = hidden_batch(model, inputs)
    loss, g_w_hid, g_b_hid, g_w_vis, g_b_vis = _head_backward_batch(
        model.w_vis, model.b_vis, pre1, hidden, inputs, targets)
    return loss, {"w_hid": g_w_hid, "b_hid": g_b_hid, "w_vis": g_w_vis, "b_vis": g_b_vis}


def backward_joint_batch(model: Model, inputs: np.ndarray, text_targets: np.ndarray,
                         visual_targets: np.ndarray, text_weight: float):
    """Gradients of visual_loss + text_weight * text_loss over all parameters.

    The hidden layer is computed once and shared by both heads.  With
    text_weight == 0 the text head is skipped entirely, so the shared-parameter
    gradients are bitwise those of the visual branch alone.
    """
    pre1, hidden = hidden_batch(model, inputs)
    loss_v, g_w_hid, g_b_hid, g_w_vis, g_b_vis = _head_backward_batch(
        model.w_vis, model.b_vis, pre1, hidden, inputs, visual_targets)
    grads = {"w_hid": g_w_hid, "b_hid": g_b_hid, "w_vis": g_w_vis, "b_vis": g_b_vis,
             "w_txt": np.zeros_like(model.w_txt, dtype=np.float64),
             "b_txt": np.zeros_like(model.b_txt, dtype=np.float64)}
    loss_t = float("nan")
    if text_weight != 0.0:
        loss_t, tg_w_hid, tg_b_hid, tg_w_txt, tg_b_txt = _head_backward_batch(
            model.w_txt, model.b_txt, pre1, hidden, inputs, text_targets)
        grads["w_hid"] += text_weight * tg_w_hid
        grads["b_hid"] += text_weight * tg_b_hid
        grads["w_txt"] = text_weight * tg_w_txt
        grads["b_txt"] = text_weight * tg_b_txt
    return loss_t, loss_v, grads


# ---------------------------------------------------------------------------
# Checkpoints: "T2VM", version u32, flags u32 (bit 0 = text branch), dims as
# u64 (vocab, hidden, visual), then row-major float32 arrays, little-endian:
# w_hid, b_hid, [w_txt, b_txt,] w_vis, b_vis.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIQQQ")


def save_checkpoint(model: Model, path) -> None:
    flags = _FLAG_TEXT_BRANCH if model.has_text_branch else 0
    arrays = [model.w_hid, model.b_hid]
    if model.has_text_branch:
        arrays += [model.w_txt, model.b_txt]
    arrays += [model.w_vis, model.b_vis]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, flags,
                              model.vocab_dim, model.hidden_dim, model.visual_dim))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError(f"checkpoint truncated: {path}")
    magic, version, flags, vocab_dim, hidden_dim, visual_dim = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(
            f"bad magic {magic!r} in {path}: expected {CHECKPOINT_MAGIC.decode()}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    has_text = bool(flags & _FLAG_TEXT_BRANCH)

    shapes = [("w_hid", (hidden_dim, vocab_dim)), ("b_hid", (hidden_dim,))]
    if has_text:
        shapes += [("w_txt", (vocab_dim, hidden_dim)), ("b_txt", (vocab_dim,))]
    shapes += [("w_vis", (visual_dim, hidden_dim)), ("b_vis", (visual_dim,))]

    expected = _HEADER.size + 4 * sum(int(np.prod(s)) for _, s in shapes)
    if len(blob) != expected:
        raise ValueError(
            f"checkpoint size mismatch: {path} has {len(blob)} bytes, expected {expected}")

    offset = _HEADER.size
    fields: dict[str, np.ndarray] = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        arr = arr.astype(np.float32).reshape(shape)
        if not np.isfinite(arr).all():
            raise ValueError(f"checkpoint contains non-finite values in {name}")
        fields[name] = arr
    return Model(w_hid=fields["w_hid"], b_hid=fields["b_hid"],
                 w_txt=fields.get("w_txt"), b_txt=fields.get("b_txt"),
                 w_vis=fields["w_vis"], b_vis=fields["b_vis"])
