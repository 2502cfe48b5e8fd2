"""Compiled training loops for the bag networks and the linear SVM.

The network kernel runs one epoch of batch-size-1 SGD over a packed
parameter vector. It is a line-for-line transcription of the numpy path
in :mod:`attnmil.models` (forward, BCE, backward, update) and consumes
dropout uniforms in the same order, so both paths agree to rounding.
"""

from __future__ import annotations

import numpy as np
from numba import njit

POOL_ATTENTION = 0
POOL_MAX = 1
POOL_MEAN = 2

PROB_EPS = 1e-12

# reassociation only; NaN/inf semantics stay IEEE so divergence is detectable
_FASTMATH = {"reassoc", "contract", "nsz"}


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _act(code, z):
    if code == 0:
        return z if z > 0.0 else 0.0
    if code == 1:
        return np.tanh(z)
    if code == 2:
        return _sigmoid(z)
    return z


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _act_grad(code, z, a):
    if code == 0:
        return 1.0 if z > 0.0 else 0.0
    if code == 1:
        return 1.0 - a * a
    if code == 2:
        return a * (1.0 - a)
    return 1.0


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def train_network_epoch(params, grads, layer_in, layer_out, layer_act, layer_rate,
                        w_off, b_off, pool_kind, att_dim, v_off, wv_off, hw_off, hb_off,
                        X, bag_start, bag_len, labels, order, U, lr):
    """One epoch over ``order``; updates ``params`` in place, returns the summed loss."""
    n_layers = layer_in.shape[0]
    maxdim = 0
    for l in range(n_layers):
        if layer_in[l] > maxdim:
            maxdim = layer_in[l]
        if layer_out[l] > maxdim:
            maxdim = layer_out[l]
    emb = layer_out[n_layers - 1]
    u_pos = 0
    total_loss = 0.0
    for step in range(order.shape[0]):
        bi = order[step]
        K = bag_len[bi]
        s0 = bag_start[bi]
        y = labels[bi]
        A = np.zeros((n_layers + 1, K, maxdim))
        Z = np.zeros((n_layers, K, maxdim))
        P = np.zeros((n_layers, K, maxdim))
        M = np.ones((n_layers, K, maxdim))
        for k in range(K):
            for j in range(layer_in[0]):
                A[0, k, j] = X[s0 + k, j]
        # forward through the stack
        for l in range(n_layers):
            din = layer_in[l]
            dout = layer_out[l]
            rate = layer_rate[l]
            for k in range(K):
                for o in range(dout):
                    acc = 0.0
                    base = w_off[l] + o * din
                    for j in range(din):
                        acc += params[base + j] * A[l, k, j]
                    acc += params[b_off[l] + o]
                    Z[l, k, o] = acc
                    P[l, k, o] = _act(layer_act[l], acc)
            if rate > 0.0:
                scale = 1.0 / (1.0 - rate)
                for k in range(K):
                    for o in range(dout):
                        if U[u_pos] >= rate:
                            M[l, k, o] = scale
                        else:
                            M[l, k, o] = 0.0
                        u_pos += 1
            for k in range(K):
                for o in range(dout):
                    A[l + 1, k, o] = P[l, k, o] * M[l, k, o]
        # pooling
        zbag = np.zeros(emb)
        alpha = np.zeros(K)
        T = np.zeros((K, att_dim))
        amax = np.zeros(emb, dtype=np.int64)
        if pool_kind == POOL_ATTENTION:
            scores = np.zeros(K)
            for k in range(K):
                sc = 0.0
                for a in range(att_dim):
                    acc = 0.0
                    base = v_off + a * emb
                    for m in range(emb):
                        acc += params[base + m] * A[n_layers, k, m]
                    t = np.tanh(acc)
                    T[k, a] = t
                    sc += params[wv_off + a] * t
                scores[k] = sc
            smax = scores[0]
            for k in range(1, K):
                if scores[k] > smax:
                    smax = scores[k]
            ssum = 0.0
            for k in range(K):
                alpha[k] = np.exp(scores[k] - smax)
                ssum += alpha[k]
            for k in range(K):
                alpha[k] /= ssum
            for k in range(K):
                for m in range(emb):
                    zbag[m] += alpha[k] * A[n_layers, k, m]
        elif pool_kind == POOL_MAX:
            for m in range(emb):
                best = A[n_layers, 0, m]
                bk = 0
                for k in range(1, K):
                    if A[n_layers, k, m] > best:
                        best = A[n_layers, k, m]
                        bk = k
                zbag[m] = best
                amax[m] = bk
        else:
            for k in range(K):
                for m in range(emb):
                    zbag[m] += A[n_layers, k, m]
            for m in range(emb):
                zbag[m] /= K
        # head and loss
        logit = params[hb_off]
        for m in range(emb):
            logit += params[hw_off + m] * zbag[m]
        p = _sigmoid(logit)
        pc = min(max(p, PROB_EPS), 1.0 - PROB_EPS)
        total_loss += -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
        dp = -y / pc + (1.0 - y) / (1.0 - pc)
        dlogit = dp * p * (1.0 - p)
        grads[:] = 0.0
        grads[hb_off] = dlogit
        dz = np.zeros(emb)
        for m in range(emb):
            grads[hw_off + m] = dlogit * zbag[m]
            dz[m] = dlogit * params[hw_off + m]
        # pooling backward
        G = np.zeros((K, maxdim))
        if pool_kind == POOL_ATTENTION:
            dalpha = np.zeros(K)
            wsum = 0.0
            for k in range(K):
                acc = 0.0
                for m in range(emb):
                    acc += dz[m] * A[n_layers, k, m]
                dalpha[k] = acc
                wsum += alpha[k] * acc
            for k in range(K):
                ds = alpha[k] * (dalpha[k] - wsum)
                for m in range(emb):
                    G[k, m] = alpha[k] * dz[m]
                for a in range(att_dim):
                    t = T[k, a]
                    grads[wv_off + a] += ds * t
                    c = ds * params[wv_off + a] * (1.0 - t * t)
                    base = v_off + a * emb
                    for m in range(emb):
                        grads[base + m] += c * A[n_layers, k, m]
                        G[k, m] += c * params[base + m]
        elif pool_kind == POOL_MAX:
            for m in range(emb):
                G[amax[m], m] = dz[m]
        else:
            for k in range(K):
                for m in range(emb):
                    G[k, m] = dz[m] / K
        # stack backward
        for l in range(n_layers - 1, -1, -1):
            din = layer_in[l]
            dout = layer_out[l]
            D = np.zeros((K, dout))
            for k in range(K):
                for o in range(dout):
                    D[k, o] = G[k, o] * M[l, k, o] * _act_grad(layer_act[l], Z[l, k, o], P[l, k, o])
            for o in range(dout):
                base = w_off[l] + o * din
                bsum = 0.0
                for k in range(K):
                    d = D[k, o]
                    bsum += d
                    if d != 0.0:
                        for j in range(din):
                            grads[base + j] += d * A[l, k, j]
                grads[b_off[l] + o] += bsum
            if l > 0:
                for k in range(K):
                    for j in range(din):
                        G[k, j] = 0.0
                    for o in range(dout):
                        d = D[k, o]
                        if d != 0.0:
                            base = w_off[l] + o * din
                            for j in range(din):
                                G[k, j] += d * params[base + j]
        for i in range(params.shape[0]):
            params[i] -= lr * grads[i]
    return total_loss


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def pegasos_fit(X, y, lam, orders, t0):
    """Sub-gradient descent on ``lam/2 |w|^2 + mean hinge``; bias is unregularized.

    ``orders`` holds one visiting permutation per epoch; the step size is
    ``1 / (lam * (t + t0))`` at global step ``t`` (1-based).
    """
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    t = 0
    for e in range(orders.shape[0]):
        for s in range(n):
            i = orders[e, s]
            t += 1
            eta = 1.0 / (lam * (t + t0))
            margin = b
            for j in range(d):
                margin += w[j] * X[i, j]
            margin *= y[i]
            shrink = 1.0 - eta * lam
            for j in range(d):
                w[j] *= shrink
            if margin < 1.0:
                for j in range(d):
                    w[j] += eta * y[i] * X[i, j]
                b += eta * y[i]
    return w, b
