"""Classifier definition, initialization, base training, and exact state handling.

The model is a plain affine+ReLU stack over float64 parameters stored as one
flat vector (row-major weight matrix followed by bias, per layer).  Snapshots
are bit-exact copies: the per-sample refinement loop clones, perturbs, and
restores this state for every input, so restore must be exact equality rather
than approximate.
"""

from dataclasses import dataclass, field

import numpy as np

from .backends import kernels as K


class ShapeError(ValueError):
    """Dimension mismatch between parameters, gradients, or inputs."""


class TrainingDiverged(RuntimeError):
    """Base training produced a non-finite loss."""


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: layer widths (input, hidden..., classes) and init seed."""

    layer_widths: tuple
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ShapeError("need at least input and output widths")
        if any(w < 1 for w in widths):
            raise ShapeError("layer widths must be positive")
        if widths[-1] < 2:
            raise ShapeError("need at least 2 classes")

    @property
    def num_classes(self):
        return self.layer_widths[-1]

    @property
    def num_params(self):
        ws = self.layer_widths
        return sum(ws[i] * ws[i + 1] + ws[i + 1] for i in range(len(ws) - 1))


@dataclass
class Parameters:
    """Flat float64 weight vector plus its shape metadata."""

    vector: np.ndarray
    spec: MlpSpec

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1 or self.vector.size != self.spec.num_params:
            raise ShapeError(
                f"expected {self.spec.num_params} parameters, got {self.vector.size}"
            )

    def copy(self):
        return Parameters(self.vector.copy(), self.spec)

    def layer_views(self):
        """Per-layer (W, b) views into the flat vector; W is (out, in)."""
        ws = self.spec.layer_widths
        out, off = [], 0
        for i in range(len(ws) - 1):
            n_in, n_out = ws[i], ws[i + 1]
            W = self.vector[off:off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            b = self.vector[off:off + n_out]
            off += n_out
            out.append((W, b))
        return out


@dataclass(frozen=True)
class Snapshot:
    """Bit-exact copy of a parameter state."""

    vector: np.ndarray
    spec: MlpSpec


def snapshot(params):
    """Capture the exact parameter state."""
    return Snapshot(params.vector.copy(), params.spec)


def restore(params, snap):
    """Parameters restored to the snapshotted state (exact equality)."""
    if snap.spec != params.spec or snap.vector.size != params.vector.size:
        raise ShapeError("snapshot does not match parameter shape")
    return Parameters(snap.vector.copy(), snap.spec)


def init_params(spec):
    """Deterministic init: W ~ U(-s, s) with s = 1/sqrt(fan_in); biases zero."""
    rng = np.random.default_rng(spec.seed)
    chunks = []
    ws = spec.layer_widths
    for i in range(len(ws) - 1):
        n_in, n_out = ws[i], ws[i + 1]
        s = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-s, s, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return Parameters(np.concatenate(chunks), spec)


def softmax_stable(logits):
    """Probabilities from logits; shift-invariant and overflow-safe."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def argmax_class(logits):
    """Index of the largest logit; ties broken by lowest index."""
    z = np.asarray(logits)
    if z.size == 0:
        raise ShapeError("empty logits")
    return int(np.argmax(z))


def clip_gradient(grads, clip_norm):
    """Gradient scaled so its global L2 norm is at most clip_norm.

    clip_norm = 0 disables clipping.  Returns a new array only when scaling
    happened.
    """
    if clip_norm == 0:
        return grads
    norm = K.grad_norm(grads)
    if norm > clip_norm:
        return grads * (clip_norm / norm)
    return grads


def sgd_step(params, grads, lr, clip_norm=0.0):
    """One plain SGD step (no momentum, no weight decay) with optional clipping."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.vector.shape:
        raise ShapeError("gradient length does not match parameters")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    g = clip_gradient(grads, clip_norm)
    return Parameters(params.vector - lr * g, params.spec)


def _sgd_step_inplace(vector, grads, lr, clip_norm):
    """Hot-path variant of sgd_step mutating vector; grads may be rescaled."""
    if clip_norm != 0:
        norm = K.grad_norm(grads)
        if norm > clip_norm:
            K.scale(grads, clip_norm / norm)
    K.axpy(vector, -lr, grads)


def forward_batch(params, X):
    """Logits for a batch of inputs (rows); vectorized, no tape."""
    A = np.asarray(X, dtype=np.float64)
    layers = params.layer_views()
    for l, (W, b) in enumerate(layers):
        A = A @ W.T + b
        if l < len(layers) - 1:
            A = np.maximum(A, 0.0)
    return A


def forward_logits(params, x):
    """Logits for a single input via the kernel backend."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (params.spec.layer_widths[0],):
        raise ShapeError(
            f"input length {x.size} != first layer width {params.spec.layer_widths[0]}"
        )
    return K.mlp_forward(params.spec.layer_widths, params.vector, x)


@dataclass
class TrainResult:
    params: Parameters
    final_train_accuracy: float
    epoch_losses: list = field(default_factory=list)


def train_base(spec, features, labels, epochs, lr, batch_size, seed):
    """Train a fresh classifier with standard mini-batch cross-entropy SGD.

    Deterministic for a given seed (init seed lives in spec; the training
    seed drives shuffling).  epochs = 0 returns the initialization exactly.
    Raises TrainingDiverged on a non-finite loss.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError("need a nonempty 2-D feature matrix")
    if X.shape[1] != spec.layer_widths[0]:
        raise ShapeError("feature dim does not match first layer width")
    num_classes = spec.num_classes
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("labels out of range")

    params = init_params(spec)
    if epochs == 0:
        acc = float(np.mean(forward_batch(params, X).argmax(axis=1) == y))
        return TrainResult(params, acc)

    rng = np.random.default_rng(seed)
    n = X.shape[0]
    views = params.layer_views()
    n_layers = len(views)
    epoch_losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb, yb = X[idx], y[idx]
            # forward, keeping activations for backprop
            acts = [Xb]
            Z = Xb
            for l, (W, b) in enumerate(views):
                Z = acts[-1] @ W.T + b
                if l < n_layers - 1:
                    acts.append(np.maximum(Z, 0.0))
            logits = Z
            m = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - m)
            P = e / e.sum(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(e.sum(axis=1))
            loss = float(np.mean(lse - logits[np.arange(len(idx)), yb]))
            total_loss += loss * len(idx)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss: {loss}")
            # backward: dL/dlogits = (softmax - onehot) / batch
            dZ = P
            dZ[np.arange(len(idx)), yb] -= 1.0
            dZ /= len(idx)
            for l in range(n_layers - 1, -1, -1):
                W, b = views[l]
                dW = dZ.T @ acts[l]
                db = dZ.sum(axis=0)
                if l > 0:
                    dZ = (dZ @ W) * (acts[l] > 0.0)
                W -= lr * dW
                b -= lr * db
        epoch_losses.append(total_loss / n)
    acc = float(np.mean(forward_batch(params, X).argmax(axis=1) == y))
    return TrainResult(params, acc, epoch_losses)


CHECKPOINT_MAGIC = "focusopt-mlp 1"


def save_checkpoint(params, path):
    """Text checkpoint: header (widths, seed), then one float64 per line.

    Values are written with repr(), which round-trips float64 exactly.
    """
    lines = [CHECKPOINT_MAGIC]
    lines.append("widths " + " ".join(str(w) for w in params.spec.layer_widths))
    lines.append(f"seed {params.spec.seed}")
    lines.append(str(params.vector.size))
    lines.extend(repr(float(v)) for v in params.vector)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    widths = tuple(int(w) for w in lines[1].split()[1:])
    seed = int(lines[2].split()[1])
    n = int(lines[3])
    vec = np.array([float(v) for v in lines[4:4 + n]], dtype=np.float64)
    return Parameters(vec, MlpSpec(widths, seed))
