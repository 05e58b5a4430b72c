"""Uncertainty-gated test-time refinement of a single prediction.

The pipeline per sample: forward pass, softmax, uncertainty gap (top-1 minus
top-2 probability).  If the gap clears the threshold the prediction is kept
as-is (gated).  Otherwise the n_f most likely classes become the focus set,
which stays fixed while T gradient steps are applied to a private clone of
the parameters, and the argmax of the final logits is returned.  The caller's
parameters are never modified.

Four loss variants drive the step, all built on the raw logits f_c:

* ifo        -sum_{c in F} w_c f_c, raising focus-class logits.  Weighted
             uses the detached softmax probabilities as w_c; unweighted uses
             the per-class average w_c = 1/|F|.
* dofo       mean of the out-of-focus logits, pushing them down.
* entropy    Shannon entropy of the softmax (gradient flows through softmax).
* ce_focus   logsumexp(f) - sum_{c in F} w_c f_c, the cross-entropy analog
             averaged (or probability-weighted) over the focus set.

Detached weights never receive gradient; only the logits path does.
"""

from dataclasses import dataclass

import numpy as np

from . import gradcore
from .backends import kernels as K
from .network import _sgd_step_inplace, argmax_class, softmax_stable

LOSS_KINDS = ("ifo", "dofo", "entropy", "ce_focus")


@dataclass(frozen=True)
class FocusConfig:
    """Knobs of the refinement step.

    eta: learning rate (0 allowed; it makes the step a no-op).
    T: gradient iterations, default 1.
    n_f: focus-class count, default 2 (at least the two most likely classes).
    d12: uncertainty threshold, default 0.16; optimization runs only when the
        top-1/top-2 probability gap is strictly below it.
    loss_kind: one of ifo | dofo | entropy | ce_focus.
    weighted: probability weighting for ifo and ce_focus.
    clip_norm: global gradient-norm clip applied before each step (0 = off).
    """

    eta: float
    T: int = 1
    n_f: int = 2
    d12: float = 0.16
    loss_kind: str = "ifo"
    weighted: bool = True
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.n_f < 2:
            raise ValueError("n_f must be >= 2")
        if not 0.0 <= self.d12 <= 1.0:
            raise ValueError("d12 must be in [0, 1]")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables)")


@dataclass
class FocusOutcome:
    """Result of refining one sample."""

    gated: bool
    original_prediction: int
    refined_prediction: int
    delta12: float
    focus_set: tuple = ()
    loss_value: float = None
    diverged: bool = False


def uncertainty_gap(probs):
    """Top-1 minus top-2 probability; in [0, 1]."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size < 2:
        raise ValueError("need at least 2 classes")
    top2 = np.partition(p, p.size - 2)[-2:]
    return float(top2[1] - top2[0])


def select_focus(probs, n_f):
    """Indices of the n_f largest probabilities, descending, ties by lowest index."""
    p = np.asarray(probs, dtype=np.float64)
    if n_f > p.size:
        raise ValueError(f"n_f={n_f} exceeds number of classes {p.size}")
    order = np.argsort(-p, kind="stable")
    return tuple(int(i) for i in order[:n_f])


def _focus_weights(num_classes, focus, probs_detached, weighted, sign):
    w = np.zeros(num_classes)
    idx = np.fromiter(focus, dtype=np.intp)
    if weighted:
        w[idx] = sign * np.asarray(probs_detached, dtype=np.float64)[idx]
    else:
        w[idx] = sign / len(idx)
    return w


def loss_ifo(logits, probs_detached, focus, weighted=True):
    """Negative (weighted) sum of focus-class logits, as a tape node."""
    if len(focus) == 0:
        raise ValueError("focus set must be nonempty")
    w = _focus_weights(logits.value.size, focus, probs_detached, weighted, -1.0)
    return logits.tape.dot_const(logits, w)


def loss_dofo(logits, focus, num_classes):
    """Mean of out-of-focus logits, as a tape node."""
    out = sorted(set(range(num_classes)) - set(focus))
    if not out:
        raise ValueError("out-of-focus set is empty (focus covers all classes)")
    w = np.zeros(num_classes)
    w[out] = 1.0 / len(out)
    return logits.tape.dot_const(logits, w)


def loss_entropy(logits):
    """Shannon entropy of softmax(logits), natural log, via the logsumexp identity.

    H = logsumexp(z) - sum_c p_c z_c, with gradient flowing through p as well;
    never evaluates log(0).
    """
    tape = logits.tape
    p = tape.softmax(logits)
    return tape.sub(tape.logsumexp(logits), tape.dot(p, logits))


def loss_ce_focus(logits, focus, probs_detached=None, weighted=False):
    """Cross-entropy against the focus set: logsumexp(z) - sum_{c in F} w_c z_c."""
    if len(focus) == 0:
        raise ValueError("focus set must be nonempty")
    tape = logits.tape
    w = _focus_weights(logits.value.size, focus, probs_detached, weighted, 1.0)
    return tape.sub(tape.logsumexp(logits), tape.dot_const(logits, w))


def build_loss(logits, config, focus, probs_detached):
    """Loss node for the configured kind."""
    if config.loss_kind == "ifo":
        return loss_ifo(logits, probs_detached, focus, config.weighted)
    if config.loss_kind == "dofo":
        return loss_dofo(logits, focus, logits.value.size)
    if config.loss_kind == "entropy":
        return loss_entropy(logits)
    return loss_ce_focus(logits, focus, probs_detached, config.weighted)


def focus_predict(params, x, config):
    """Refine one prediction; the caller-visible params are left untouched.

    The focus set is fixed from the initial probabilities.  For T > 1 the
    probabilities used as loss weights are recomputed each step.  Non-finite
    logits after a step flag the outcome as diverged and fall back to the
    original prediction.
    """
    num_classes = params.spec.num_classes
    if config.n_f > num_classes:
        raise ValueError("n_f exceeds number of classes")
    if config.loss_kind == "dofo" and config.n_f >= num_classes:
        raise ValueError("dofo needs a nonempty out-of-focus set (n_f < classes)")

    logits_node, tape = gradcore.forward_mlp(params, x)
    probs = softmax_stable(logits_node.value)
    delta = uncertainty_gap(probs)
    original = argmax_class(logits_node.value)
    if delta >= config.d12:
        return FocusOutcome(True, original, original, delta)

    focus = select_focus(probs, config.n_f)
    work = params.copy()
    x = np.ascontiguousarray(x, dtype=np.float64)
    first_loss = None
    logits = logits_node.value
    for t in range(config.T):
        if t > 0:
            logits_node, tape = gradcore.forward_mlp(work, x)
            logits = logits_node.value
            probs = softmax_stable(logits)
        loss_node = build_loss(logits_node, config, focus, probs)
        if first_loss is None:
            first_loss = float(loss_node.value)
        grads = gradcore.backward(tape, loss_node)
        _sgd_step_inplace(work.vector, grads, config.eta, config.clip_norm)
        logits = K.mlp_forward(work.spec.layer_widths, work.vector, x)
        if not np.all(np.isfinite(logits)):
            return FocusOutcome(False, original, original, delta, focus,
                                first_loss, diverged=True)
    return FocusOutcome(False, original, argmax_class(logits), delta, focus,
                        first_loss)
