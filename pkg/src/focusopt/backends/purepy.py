"""Numpy implementations of the numeric kernels.

This is the portable fallback for the compiled extension.  Both backends
expose the same functions with the same contracts; everything operates on
float64 arrays.  Accumulating kernels (``*_acc``, ``axpy``) mutate their
first argument in place.
"""

import numpy as np

NAME = "python"


def affine_fwd(W, b, x):
    """z = W @ x + b for a single sample."""
    return W @ x + b


def outer_acc(A, u, v):
    """A += outer(u, v)."""
    A += np.outer(u, v)


def matvecT_acc(out, W, u):
    """out += W.T @ u."""
    out += W.T @ u


def vec_acc(out, u):
    """out += u."""
    out += u


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd_acc(out, x, adj):
    """out += adj masked to where the forward input was positive."""
    out += adj * (x > 0.0)


def softmax(z):
    """Shift-stabilized softmax."""
    e = np.exp(z - z.max())
    return e / e.sum()


def logsumexp(z):
    """Shift-stabilized log of the sum of exponentials."""
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


def mlp_forward(widths, theta, x):
    """Plain logits of an affine+ReLU stack; no intermediate state kept.

    ``widths`` lists layer sizes (input, hidden..., classes); ``theta`` is the
    flat parameter vector laid out as W1, b1, W2, b2, ...  ReLU is applied
    after every layer except the last.
    """
    a = x
    off = 0
    n_layers = len(widths) - 1
    for l in range(n_layers):
        n_in, n_out = widths[l], widths[l + 1]
        W = theta[off:off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = theta[off:off + n_out]
        off += n_out
        a = W @ a + b
        if l < n_layers - 1:
            a = np.maximum(a, 0.0)
    return a


def grad_norm(g):
    """Global L2 norm."""
    return float(np.sqrt(np.dot(g, g)))


def axpy(y, a, x):
    """y += a * x."""
    y += a * x


def scale(x, a):
    """x *= a."""
    x *= a
