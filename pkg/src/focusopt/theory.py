"""Closed-form analysis of a 3-class, 4-feature linear model.

The model has outputs

    y0 = c0*x0 + c4*x3,   y1 = c1*x1 + c5*x3,   y2 = c2*x2 + c6*x3

where x0..x2 are class-specific features, x3 is shared by all classes, and
the focus set is {y0, y1}.  (c3 is carried in the coefficient vector so that
c_{4+j} pairs with class j, but no output uses it; its partials are zero.)

For each loss the module provides the exact per-coefficient partials and the
coefficient that multiplies the shared feature's upstream sensitivity
(d x3 / d z): raising both focus classes moves the shared pathway by
-(c4 + c5), so with same-sign c4, c5 the shared feature is amplified more
than under a single-class loss (|c4 + c5| > |c4|), and with opposing signs it
moves less.  Entropy minimization scales the same pathways by the
probability-dependent coefficients g_k = p_k * (-H - log p_k), which vanish
at the uniform distribution and at a tied top-2 with negligible third class.
"""

from dataclasses import dataclass

import numpy as np

from . import gradcore
from .network import MlpSpec, Parameters, softmax_stable

LOSS_KINDS = ("ifo_unweighted", "dofo", "single_plus", "single_minus", "entropy")


@dataclass(frozen=True)
class ToyModel:
    """Seven coefficients c0..c6 and four nonnegative features x0..x3."""

    c: tuple
    x: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        x = tuple(float(v) for v in self.x)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "x", x)
        if len(c) != 7 or len(x) != 4:
            raise ValueError("need 7 coefficients and 4 features")
        if any(v < 0 for v in x):
            raise ValueError("feature values cannot be negative")
        if c[0] <= 0 or c[1] <= 0 or c[2] <= 0:
            raise ValueError("class-specific coefficients c0, c1, c2 must be positive")


@dataclass
class GradReport:
    """Exact partials dL/dc_i plus the shared-feature pathway coefficient."""

    loss_kind: str
    partials: np.ndarray
    shared_pathway: float


def toy_forward(model):
    """The three linear outputs (y0, y1, y2)."""
    c, x = model.c, model.x
    return (
        c[0] * x[0] + c[4] * x[3],
        c[1] * x[1] + c[5] * x[3],
        c[2] * x[2] + c[6] * x[3],
    )


def entropy_coeffs(probs):
    """g_k = p_k * (-H - log p_k), the per-logit entropy-gradient coefficients.

    Zero entries are handled by the limit g_k -> 0 as p_k -> 0.  For a tied
    top pair p0 = p1 >= p2 the signs come out g0 = g1 <= 0 and g2 >= 0.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("not a probability vector")
    pos = p > 0
    logp = np.zeros_like(p)
    logp[pos] = np.log(p[pos])
    H = -float(p[pos] @ logp[pos])
    g = np.zeros_like(p)
    g[pos] = p[pos] * (-H - logp[pos])
    return g


def toy_grad(model, loss_kind, class_index=0):
    """Closed-form gradient report for one loss on the toy model.

    single_plus / single_minus take the class via class_index; the other
    kinds use the fixed focus set {y0, y1}.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    c, x = model.c, model.x
    d = np.zeros(7)
    if loss_kind == "ifo_unweighted":
        d[0], d[1] = -x[0], -x[1]
        d[4], d[5] = -x[3], -x[3]
        pathway = -(c[4] + c[5])
    elif loss_kind == "dofo":
        d[2], d[6] = x[2], x[3]
        pathway = c[6]
    elif loss_kind in ("single_plus", "single_minus"):
        if class_index not in (0, 1, 2):
            raise ValueError("class_index must be 0, 1, or 2")
        sign = 1.0 if loss_kind == "single_plus" else -1.0
        d[class_index] = sign * x[class_index]
        d[4 + class_index] = sign * x[3]
        pathway = sign * c[4 + class_index]
    else:  # entropy
        g = entropy_coeffs(softmax_stable(np.array(toy_forward(model))))
        d[0], d[1], d[2] = g[0] * x[0], g[1] * x[1], g[2] * x[2]
        d[4], d[5], d[6] = g[0] * x[3], g[1] * x[3], g[2] * x[3]
        pathway = float(g[0] * c[4] + g[1] * c[5] + g[2] * c[6])
    return GradReport(loss_kind, d, float(pathway))


def toy_as_parameters(model):
    """The toy model as a single affine layer (4 -> 3) for autodiff cross-checks.

    Weight cells carry c0..c2 on the diagonal and c4..c6 in the shared-feature
    column; c3 maps to no weight.  Biases are zero.
    """
    c = model.c
    W = np.zeros((3, 4))
    W[0, 0], W[1, 1], W[2, 2] = c[0], c[1], c[2]
    W[0, 3], W[1, 3], W[2, 3] = c[4], c[5], c[6]
    vec = np.concatenate([W.ravel(), np.zeros(3)])
    return Parameters(vec, MlpSpec((4, 3)))


# flat-vector positions of c0..c6 in toy_as_parameters (c3 has no slot)
TOY_COEFF_SLOTS = (0, 5, 10, None, 3, 7, 11)


def toy_autodiff_grad(model, loss_kind, class_index=0):
    """Tape-autodiff partials for the same losses, aligned with c0..c6."""
    params = toy_as_parameters(model)
    logits, tape = gradcore.forward_mlp(params, np.asarray(model.x))
    if loss_kind == "ifo_unweighted":
        root = tape.dot_const(logits, np.array([-1.0, -1.0, 0.0]))
    elif loss_kind == "dofo":
        root = tape.dot_const(logits, np.array([0.0, 0.0, 1.0]))
    elif loss_kind in ("single_plus", "single_minus"):
        w = np.zeros(3)
        w[class_index] = 1.0 if loss_kind == "single_plus" else -1.0
        root = tape.dot_const(logits, w)
    elif loss_kind == "entropy":
        p = tape.softmax(logits)
        root = tape.sub(tape.logsumexp(logits), tape.dot(p, logits))
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    flat = gradcore.backward(tape, root)
    return np.array([0.0 if s is None else flat[s] for s in TOY_COEFF_SLOTS])


@dataclass
class CoefficientCurve:
    """Update-strength coefficients along the tied-top-2 probability sweep."""

    p: np.ndarray
    alpha_ifo: np.ndarray
    g_a: np.ndarray
    g_b: np.ndarray


CURVE_MARGIN = 1.0 / 12.0  # sweep starts below the 3-way tie to expose the sign change


def coefficient_curve(resolution):
    """Coefficients along p0 = p1 = p, p2 = 1 - 2p, for p in [1/3 - margin, 1/2].

    Each column is rescaled to max |value| = 1.  The grid contains the exact
    points p = 1/3 (all-tied; g_a = g_b = 0) and p = 1/2 (third class empty;
    g_a = 0).  alpha_ifo is the constant unit coefficient of the logit loss.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    third = 1.0 / 3.0
    n_below = max(1, resolution // 5)
    n_above = resolution - n_below
    below = np.linspace(third - CURVE_MARGIN, third, n_below + 1)[:-1]
    above = np.linspace(third, 0.5, n_above)
    ps = np.concatenate([below, above])
    g_a = np.empty_like(ps)
    g_b = np.empty_like(ps)
    for i, p in enumerate(ps):
        g = entropy_coeffs(np.array([p, p, 1.0 - 2.0 * p]))
        g_a[i], g_b[i] = g[0], g[2]

    def rescaled(col):
        m = np.abs(col).max()
        return col / m if m > 0 else col

    return CoefficientCurve(ps, np.ones_like(ps), rescaled(g_a), rescaled(g_b))


@dataclass
class AmplificationReport:
    """Shared-feature pathway magnitudes for the competing losses."""

    regime: str                 # same_sign | opposing | mixed
    ifo_pathway: float          # |c4 + c5|
    single_pathway: float       # |c4|, single-class loss on y0
    entropy_pathway: float      # |g0 c4 + g1 c5 + g2 c6|
    ifo_exceeds_single: bool
    entropy_below_ifo: bool


def amplification_report(model):
    """Compare how strongly each loss moves the shared feature's pathway."""
    c = model.c
    if c[4] > 0 and c[5] > 0:
        regime = "same_sign"
    elif c[4] * c[5] < 0:
        regime = "opposing"
    else:
        regime = "mixed"
    ifo = abs(c[4] + c[5])
    single = abs(c[4])
    entropy = abs(toy_grad(model, "entropy").shared_pathway)
    return AmplificationReport(regime, ifo, single, entropy,
                               ifo > single, entropy < ifo)


def shared_growth_trace(model, eta, steps, kind):
    """Iterate coupled updates of (c4, c5, x3) and record the pathway growth.

    Demonstrates the compounding between the shared feature and its
    coefficients: each step applies the gradient update to c4/c5 (toward
    raising the focus outputs) and grows x3 in proportion to the pathway
    coefficient, mimicking an upstream-layer update.  kind is "ifo" (both
    focus classes) or "single" (y0 alone).  Returns the |pathway| sequence,
    one entry per step, starting with the initial state.
    """
    if kind not in ("ifo", "single"):
        raise ValueError("kind must be 'ifo' or 'single'")
    c4, c5 = model.c[4], model.c[5]
    x3 = model.x[3]
    trace = [abs(c4 + c5) if kind == "ifo" else abs(c4)]
    for _ in range(steps):
        if kind == "ifo":
            c4 += eta * x3
            c5 += eta * x3
            pathway = c4 + c5
        else:
            c4 += eta * x3
            pathway = c4
        x3 += eta * pathway
        trace.append(abs(pathway))
    return trace
