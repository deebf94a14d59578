"""Pure numpy implementations of the numerical kernels.

Every function here has a twin with an identical signature in the compiled
``_kernels`` extension. ``spfilter.kernels`` picks one at import time.
"""

import math

import numpy as np

NAME = "python"


def beta_logpdf(z, alpha, beta):
    z = np.asarray(z, dtype=np.float64)
    log_norm = math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta)
    return log_norm + (alpha - 1.0) * np.log(z) + (beta - 1.0) * np.log1p(-z)


def gauss_logpdf(z, mean, variance):
    z = np.asarray(z, dtype=np.float64)
    # a tiny variance sends far points to -inf, which the E-step handles
    with np.errstate(over="ignore"):
        return -0.5 * (math.log(2.0 * math.pi * variance) + (z - mean) ** 2 / variance)


def responsibilities(logp1, logp2, gamma1, gamma2):
    """Bayes-rule responsibilities from per-component log densities.

    Works on the log-odds of component 1 so that common factors cancel
    exactly. Returns ``(W, n_degenerate)``; rows where both densities are
    zero fall back to ``(gamma1, gamma2)``.
    """
    logp1 = np.asarray(logp1, dtype=np.float64)
    logp2 = np.asarray(logp2, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prior = np.log(gamma1) - np.log(gamma2)
        d = prior + (logp1 - logp2)
        # logistic function, stable on both tails
        e = np.exp(-np.abs(d))
        w1 = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    bad = np.isnan(d)
    W = np.empty((w1.shape[0], 2))
    W[:, 0] = np.where(bad, gamma1, w1)
    W[:, 1] = np.where(bad, gamma2, 1.0 - w1)
    return W, int(bad.sum())


def weighted_moments(z, W):
    """Per-column weight totals, weighted means and weighted variances."""
    z = np.asarray(z, dtype=np.float64)
    totals = W.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = (W * z[:, None]).sum(axis=0) / totals
        variances = (W * (z[:, None] - means) ** 2).sum(axis=0) / totals
    return totals, means, variances


def midrank_auroc(scores, positives):
    """Mann-Whitney AUROC with tied scores sharing their average rank."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n = scores.shape[0]
    n_pos = int(positives.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(scores, kind="mergesort")
    ranked = scores[order]
    ranks = np.empty(n)
    # boundaries of tie groups in sorted order
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], n]
    group_rank = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(group_rank, ends - starts)
    rank_sum = ranks[positives].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mlp_forward(params, x):
    """Tanh MLP forward pass. Returns ``(probs, activations)``.

    ``params`` is a flat list ``[W1, b1, W2, b2, ...]``; ``activations``
    holds the input and each hidden layer output, as needed by backward.
    """
    h = np.asarray(x, dtype=np.float64)
    activations = [h]
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = np.tanh(h @ params[2 * i] + params[2 * i + 1])
        activations.append(h)
    logits = h @ params[-2] + params[-1]
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, activations


def mlp_backward(params, activations, dlogits):
    """Gradients of the loss with respect to ``params`` given dL/dlogits."""
    n_layers = len(params) // 2
    grads = [None] * len(params)
    delta = dlogits
    for i in range(n_layers - 1, -1, -1):
        h = activations[i]
        grads[2 * i] = h.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (1.0 - h * h)
    return grads


def sgd_update(params, grads, buffers, lr, momentum, weight_decay, nesterov):
    """In-place momentum SGD step with decoupled decay.

    Returns False, touching nothing, if any gradient entry is not finite.
    """
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    shrink = 1.0 - lr * weight_decay
    for p, g, buf in zip(params, grads, buffers):
        buf *= momentum
        buf += g
        step = g + momentum * buf if nesterov else buf
        p *= shrink
        p -= lr * step
    return True
