"""Minimal reverse-mode automatic differentiation over dense affine stacks.

A Tape records primitive operations (affine, relu, logsumexp, softmax, dot,
scalar arithmetic) in creation order, which is already topological: a node can
only consume nodes created before it.  backward() seeds the root adjoint with
1 and sweeps the tape in reverse, accumulating adjoints on every node; the
parameter-leaf adjoints, flattened in registration order, form the gradient
aligned index-for-index with the flat parameter vector.

Tapes are rebuilt per forward pass and never shared between samples; values
are float64 throughout.  finite_diff_grad is the independent oracle used to
validate backward and must stay free of any tape machinery.
"""

import numpy as np

from .backends import kernels as K
from .network import Parameters, ShapeError


class Node:
    """One tape entry: a float64 vector or scalar plus its adjoint slot."""

    __slots__ = ("tape", "value", "adjoint", "needs_grad", "_bwd")

    def __init__(self, tape, value, needs_grad, bwd=None):
        self.tape = tape
        self.value = value
        self.adjoint = None
        self.needs_grad = needs_grad
        self._bwd = bwd

    @property
    def is_scalar(self):
        return np.isscalar(self.value)


class Tape:
    """Ordered record of one forward computation."""

    def __init__(self):
        self.nodes = []
        self.param_leaves = []

    def _append(self, value, needs_grad, bwd=None):
        node = Node(self, value, needs_grad, bwd)
        self.nodes.append(node)
        return node

    def _check(self, *nodes):
        for n in nodes:
            if n.tape is not self:
                raise ValueError("node belongs to a different tape")

    # -- leaves ------------------------------------------------------------

    def param(self, array):
        """Parameter leaf; its adjoint is part of the returned gradient."""
        node = self._append(array, True)
        self.param_leaves.append(node)
        return node

    def const(self, array):
        """Constant leaf: no gradient flows into it (detached)."""
        return self._append(np.asarray(array, dtype=np.float64), False)

    # -- primitives ----------------------------------------------------------

    def affine(self, W, b, x):
        """W @ x + b with parameter leaves W (2-D) and b."""
        self._check(W, b, x)
        value = K.affine_fwd(W.value, b.value, x.value)

        def bwd(adj):
            K.outer_acc(W.adjoint, adj, x.value)
            K.vec_acc(b.adjoint, adj)
            if x.needs_grad:
                K.matvecT_acc(x.adjoint, W.value, adj)

        return self._append(value, True, bwd)

    def relu(self, v):
        self._check(v)
        value = K.relu_fwd(v.value)

        def bwd(adj):
            if v.needs_grad:
                K.relu_bwd_acc(v.adjoint, v.value, adj)

        return self._append(value, True, bwd)

    def logsumexp(self, v):
        """Scalar log-sum-exp, max-shifted; safe for large logits."""
        self._check(v)
        value = K.logsumexp(v.value)
        p = K.softmax(v.value)

        def bwd(adj):
            if v.needs_grad:
                K.axpy(v.adjoint, adj, p)

        return self._append(value, True, bwd)

    def softmax(self, v):
        """Differentiable softmax (full Jacobian in backward)."""
        self._check(v)
        p = K.softmax(v.value)

        def bwd(adj):
            if v.needs_grad:
                v.adjoint += p * (adj - float(adj @ p))

        return self._append(p, True, bwd)

    def dot(self, u, v):
        """Inner product of two vector nodes."""
        self._check(u, v)
        value = float(u.value @ v.value)

        def bwd(adj):
            if u.needs_grad:
                K.axpy(u.adjoint, adj, v.value)
            if v.needs_grad:
                K.axpy(v.adjoint, adj, u.value)

        return self._append(value, True, bwd)

    def dot_const(self, v, weights):
        """Inner product with a constant weight vector."""
        self._check(v)
        w = np.ascontiguousarray(weights, dtype=np.float64)
        value = float(v.value @ w)

        def bwd(adj):
            if v.needs_grad:
                K.axpy(v.adjoint, adj, w)

        return self._append(value, True, bwd)

    def add(self, a, b):
        self._check(a, b)

        def bwd(adj):
            a.adjoint += adj
            b.adjoint += adj

        return self._append(a.value + b.value, True, bwd)

    def sub(self, a, b):
        self._check(a, b)

        def bwd(adj):
            a.adjoint += adj
            b.adjoint -= adj

        return self._append(a.value - b.value, True, bwd)

    def scale(self, a, c):
        """Scalar node times a plain float."""
        self._check(a)
        c = float(c)

        def bwd(adj):
            a.adjoint += adj * c

        return self._append(a.value * c, True, bwd)


def forward_mlp(params, x):
    """Forward pass of the affine+ReLU stack, recorded on a fresh tape.

    Returns the logits node (logits themselves in .value) and the tape.
    Parameter leaves are registered in flat-vector order, so backward
    gradients align with params.vector.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    widths = params.spec.layer_widths
    if x.shape != (widths[0],):
        raise ShapeError(f"input length {x.size} != first layer width {widths[0]}")
    tape = Tape()
    a = tape.const(x)
    layers = params.layer_views()
    for l, (W, b) in enumerate(layers):
        Wn = tape.param(W)
        bn = tape.param(b)
        a = tape.affine(Wn, bn, a)
        if l < len(layers) - 1:
            a = tape.relu(a)
    return a, tape


def backward(tape, root):
    """Adjoint sweep; returns d(root)/d(theta) as a flat float64 vector.

    Idempotent: adjoints are reset on every call, so repeated backward on the
    same tape yields identical gradients.  Tape values are never mutated.
    """
    if root.tape is not tape:
        raise ValueError("root was not produced on this tape")
    if not root.is_scalar:
        raise ValueError("root must be a scalar node")
    for node in tape.nodes:
        node.adjoint = 0.0 if node.is_scalar else np.zeros_like(node.value)
    root.adjoint = 1.0
    for node in reversed(tape.nodes):
        if node._bwd is not None:
            node._bwd(node.adjoint)
    if not tape.param_leaves:
        return np.zeros(0)
    return np.concatenate([leaf.adjoint.ravel() for leaf in tape.param_leaves])


def finite_diff_grad(eval_fn, params, eps=1e-6):
    """Central-difference gradient oracle: (f(t+eps e_i) - f(t-eps e_i)) / 2 eps.

    eval_fn maps a Parameters value to a scalar and must be deterministic.
    Deliberately independent of the tape machinery.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = params.vector.copy()
    grad = np.zeros_like(base)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] += eps
        f_plus = float(eval_fn(Parameters(bumped, params.spec)))
        bumped[i] = base[i] - eps
        f_minus = float(eval_fn(Parameters(bumped, params.spec)))
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
