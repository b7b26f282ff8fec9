"""Pure numpy implementations of the hot kernels.

This is the fallback backend; `sarcattn.kernels._ckernels` provides the
compiled equivalents. Both expose the same functions and must agree
numerically (see tests/test_kernels.py), so everything here is written
against plain float64 C-order arrays, no Tensor objects.
"""

import numpy as np

BACKEND = "python"


def masked_softmax_fwd(x, mask):
    """Row softmax over the last axis of a 2-d array.

    `mask` is None or a (rows, n) boolean array; False entries get weight
    exactly 0. Every row must keep at least one entry.
    """
    if mask is None:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        neg = np.where(mask, x, -np.inf)
        # at least one finite entry per row, so the max is finite and
        # exp(-inf - max) underflows to an exact 0
        e = np.exp(neg - neg.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(p, grad):
    """Jacobian-vector product of the row softmax: p * (g - <g, p>)."""
    inner = (grad * p).sum(axis=1, keepdims=True)
    return p * (grad - inner)


def layernorm_fwd(x, gain, bias, eps):
    """Normalize each row of (rows, d) to zero mean / unit variance.

    Returns (y, xhat, inv_std); the latter two feed the backward pass.
    """
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, xhat, inv_std


def layernorm_bwd(grad, xhat, inv_std, gain):
    dxhat = grad * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    dgain = (grad * xhat).sum(axis=0)
    dbias = grad.sum(axis=0)
    return dx, dgain, dbias


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru_seq_fwd(xg, u_r, u_z, u_h, lengths, reverse):
    """Run one GRU direction over a padded batch.

    xg       (B, N, 3u) input projections, gate order [reset | update | cand]
    u_*      (u, u) recurrent weights
    lengths  (B,) true sequence lengths; steps at or past a sample's length
             leave its hidden state untouched
    reverse  iterate t = N-1 .. 0 instead of 0 .. N-1

    Returns (h_final (B, u), cache) where cache holds the per-step values
    the backward pass needs.
    """
    B, N, u3 = xg.shape
    u = u3 // 3
    h = np.zeros((B, u))
    r_all = np.empty((B, N, u))
    z_all = np.empty((B, N, u))
    hc_all = np.empty((B, N, u))
    hp_all = np.empty((B, N, u))
    steps = range(N - 1, -1, -1) if reverse else range(N)
    for t in steps:
        active = (t < lengths)[:, None]
        hp_all[:, t] = h
        r = _sigmoid(xg[:, t, :u] + h @ u_r)
        z = _sigmoid(xg[:, t, u:2 * u] + h @ u_z)
        hc = np.tanh(xg[:, t, 2 * u:] + (r * h) @ u_h)
        h = np.where(active, z * h + (1.0 - z) * hc, h)
        r_all[:, t] = r
        z_all[:, t] = z
        hc_all[:, t] = hc
    return h, (r_all, z_all, hc_all, hp_all)


def gru_seq_bwd(grad, u_r, u_z, u_h, lengths, reverse, cache):
    """Backward of gru_seq_fwd.

    Returns (dxg, du_r, du_z, du_h). Steps past a sample's length get a
    zero dxg row and pass the hidden-state gradient through unchanged.
    """
    r_all, z_all, hc_all, hp_all = cache
    B, N, u = r_all.shape
    dh = grad.copy()
    dxg = np.zeros((B, N, 3 * u))
    du_r = np.zeros_like(u_r)
    du_z = np.zeros_like(u_z)
    du_h = np.zeros_like(u_h)
    steps = range(N) if reverse else range(N - 1, -1, -1)
    for t in steps:
        active = (t < lengths)[:, None]
        r = r_all[:, t]
        z = z_all[:, t]
        hc = hc_all[:, t]
        hp = hp_all[:, t]
        dpre_h = np.where(active, dh * (1.0 - z) * (1.0 - hc * hc), 0.0)
        dpre_z = np.where(active, dh * (hp - hc) * z * (1.0 - z), 0.0)
        drh = dpre_h @ u_h.T
        dpre_r = drh * hp * r * (1.0 - r)
        du_h += (r * hp).T @ dpre_h
        du_r += hp.T @ dpre_r
        du_z += hp.T @ dpre_z
        dh_prev = dh * z + drh * r + dpre_r @ u_r.T + dpre_z @ u_z.T
        dh = np.where(active, dh_prev, dh)
        dxg[:, t, :u] = dpre_r
        dxg[:, t, u:2 * u] = dpre_z
        dxg[:, t, 2 * u:] = dpre_h
    return dxg, du_r, du_z, du_h
