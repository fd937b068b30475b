"""GRU and LSTM layers with full backpropagation through time.

Both accept [T, in] (one sequence) or [B, T, in] and return the hidden
state at every timestep. The input-side projections for all timesteps are
computed as single matmuls up front; only the recurrent terms loop over T.

GRU recurrence (the convention every test in this repo targets):

    z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
    r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
    hc_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
    h_t = (1 - z_t) * h_{t-1} + z_t * hc_t
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .layers import Layer, glorot_uniform, orthogonal


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_batched(x, in_dim, name):
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, :, :]
        squeeze = True
    elif x.ndim == 3:
        squeeze = False
    else:
        raise ShapeError(f"{name}: input must be [T,in] or [B,T,in], got {x.shape}")
    if x.shape[-1] != in_dim:
        raise ShapeError(f"{name}: expected input dim {in_dim}, got {x.shape[-1]}")
    return x, squeeze


class Gru(Layer):
    def __init__(self, input_dim, hidden_dim, rng, dtype=np.float32, name="gru"):
        super().__init__(name)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        p = {}
        for gate in ("z", "r", "h"):
            p["W" + gate] = glorot_uniform((hidden_dim, input_dim), rng, dtype)
            p["U" + gate] = orthogonal((hidden_dim, hidden_dim), rng, dtype)
            p["b" + gate] = np.zeros(hidden_dim, dtype=dtype)
        self.params = p

    def forward(self, x, h0=None, training=False, rng=None):
        x, squeeze = _as_batched(x, self.input_dim, self.name)
        p = self.params
        B, T, _ = x.shape
        H = self.hidden_dim
        if h0 is None:
            h0 = np.zeros((B, H), dtype=x.dtype)
        elif h0.shape[-1] != H:
            raise ShapeError(f"{self.name}: h0 dim {h0.shape} != hidden {H}")
        else:
            h0 = np.broadcast_to(h0.astype(x.dtype), (B, H))

        x2 = x.reshape(B * T, -1)
        xz = (x2 @ p["Wz"].T).reshape(B, T, H)
        xr = (x2 @ p["Wr"].T).reshape(B, T, H)
        xh = (x2 @ p["Wh"].T).reshape(B, T, H)

        h_all = np.empty((B, T + 1, H), dtype=x.dtype)
        h_all[:, 0] = h0
        z_all = np.empty((B, T, H), dtype=x.dtype)
        r_all = np.empty((B, T, H), dtype=x.dtype)
        hc_all = np.empty((B, T, H), dtype=x.dtype)
        for t in range(T):
            h_prev = h_all[:, t]
            z = _sigmoid(xz[:, t] + h_prev @ p["Uz"].T + p["bz"])
            r = _sigmoid(xr[:, t] + h_prev @ p["Ur"].T + p["br"])
            hc = np.tanh(xh[:, t] + (r * h_prev) @ p["Uh"].T + p["bh"])
            h_all[:, t + 1] = (1.0 - z) * h_prev + z * hc
            z_all[:, t], r_all[:, t], hc_all[:, t] = z, r, hc
        self._cache = (x, h_all, z_all, r_all, hc_all, squeeze)
        h_seq = h_all[:, 1:]
        return h_seq[0] if squeeze else h_seq

    def backward(self, dh_seq):
        x, h_all, z_all, r_all, hc_all, squeeze = self._take_cache()
        p = self.params
        B, T, H = z_all.shape
        dh_seq = np.asarray(dh_seq, dtype=x.dtype)
        if squeeze:
            dh_seq = dh_seq[None, :, :]
        if dh_seq.shape != (B, T, H):
            raise ShapeError(f"{self.name}: upstream gradient shape {dh_seq.shape}")

        daz = np.empty((B, T, H), dtype=x.dtype)
        dar = np.empty((B, T, H), dtype=x.dtype)
        dah = np.empty((B, T, H), dtype=x.dtype)
        dUz = np.zeros_like(p["Uz"])
        dUr = np.zeros_like(p["Ur"])
        dUh = np.zeros_like(p["Uh"])

        dh = np.zeros((B, H), dtype=x.dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + dh_seq[:, t]
            h_prev = h_all[:, t]
            z, r, hc = z_all[:, t], r_all[:, t], hc_all[:, t]

            da_z = dh * (hc - h_prev) * z * (1.0 - z)
            da_h = dh * z * (1.0 - hc * hc)
            drh = da_h @ p["Uh"]
            da_r = drh * h_prev * r * (1.0 - r)

            dUz += da_z.T @ h_prev
            dUr += da_r.T @ h_prev
            dUh += da_h.T @ (r * h_prev)
            daz[:, t], dar[:, t], dah[:, t] = da_z, da_r, da_h

            dh = dh * (1.0 - z) + da_z @ p["Uz"] + da_r @ p["Ur"] + drh * r

        x2 = x.reshape(B * T, -1)
        daz2, dar2, dah2 = (a.reshape(B * T, H) for a in (daz, dar, dah))
        self.grads = {
            "Wz": daz2.T @ x2,
            "Wr": dar2.T @ x2,
            "Wh": dah2.T @ x2,
            "Uz": dUz,
            "Ur": dUr,
            "Uh": dUh,
            "bz": daz2.sum(axis=0),
            "br": dar2.sum(axis=0),
            "bh": dah2.sum(axis=0),
        }
        dx = (daz2 @ p["Wz"] + dar2 @ p["Wr"] + dah2 @ p["Wh"]).reshape(x.shape)
        dh0 = dh
        if squeeze:
            return dx[0], dh0[0]
        return dx, dh0


class Lstm(Layer):
    """Standard LSTM (input/forget/output gates, no peepholes)."""

    def __init__(self, input_dim, hidden_dim, rng, dtype=np.float32, name="lstm"):
        super().__init__(name)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        p = {}
        for gate in ("i", "f", "o", "g"):
            p["W" + gate] = glorot_uniform((hidden_dim, input_dim), rng, dtype)
            p["U" + gate] = orthogonal((hidden_dim, hidden_dim), rng, dtype)
            p["b" + gate] = np.zeros(hidden_dim, dtype=dtype)
        self.params = p

    def forward(self, x, h0=None, training=False, rng=None):
        x, squeeze = _as_batched(x, self.input_dim, self.name)
        p = self.params
        B, T, _ = x.shape
        H = self.hidden_dim
        h_prev = np.zeros((B, H), dtype=x.dtype) if h0 is None else h0.astype(x.dtype)
        c_prev = np.zeros((B, H), dtype=x.dtype)

        x2 = x.reshape(B * T, -1)
        xi = (x2 @ p["Wi"].T).reshape(B, T, H)
        xf = (x2 @ p["Wf"].T).reshape(B, T, H)
        xo = (x2 @ p["Wo"].T).reshape(B, T, H)
        xg = (x2 @ p["Wg"].T).reshape(B, T, H)

        gates = np.empty((4, B, T, H), dtype=x.dtype)  # i, f, o, g
        c_all = np.empty((B, T + 1, H), dtype=x.dtype)
        h_all = np.empty((B, T + 1, H), dtype=x.dtype)
        c_all[:, 0] = c_prev
        h_all[:, 0] = h_prev
        for t in range(T):
            h_prev = h_all[:, t]
            i = _sigmoid(xi[:, t] + h_prev @ p["Ui"].T + p["bi"])
            f = _sigmoid(xf[:, t] + h_prev @ p["Uf"].T + p["bf"])
            o = _sigmoid(xo[:, t] + h_prev @ p["Uo"].T + p["bo"])
            g = np.tanh(xg[:, t] + h_prev @ p["Ug"].T + p["bg"])
            c = f * c_all[:, t] + i * g
            gates[0, :, t], gates[1, :, t], gates[2, :, t], gates[3, :, t] = i, f, o, g
            c_all[:, t + 1] = c
            h_all[:, t + 1] = o * np.tanh(c)
        self._cache = (x, h_all, c_all, gates, squeeze)
        h_seq = h_all[:, 1:]
        return h_seq[0] if squeeze else h_seq

    def backward(self, dh_seq):
        x, h_all, c_all, gates, squeeze = self._take_cache()
        p = self.params
        _, B, T, H = gates.shape
        dh_seq = np.asarray(dh_seq, dtype=x.dtype)
        if squeeze:
            dh_seq = dh_seq[None, :, :]
        if dh_seq.shape != (B, T, H):
            raise ShapeError(f"{self.name}: upstream gradient shape {dh_seq.shape}")

        da = np.empty((4, B, T, H), dtype=x.dtype)
        dU = {k: np.zeros_like(p["U" + k]) for k in ("i", "f", "o", "g")}
        dh = np.zeros((B, H), dtype=x.dtype)
        dc = np.zeros((B, H), dtype=x.dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + dh_seq[:, t]
            i, f, o, g = gates[0, :, t], gates[1, :, t], gates[2, :, t], gates[3, :, t]
            c = c_all[:, t + 1]
            c_prev = c_all[:, t]
            h_prev = h_all[:, t]
            tc = np.tanh(c)

            da_o = dh * tc * o * (1.0 - o)
            dc = dc + dh * o * (1.0 - tc * tc)
            da_i = dc * g * i * (1.0 - i)
            da_f = dc * c_prev * f * (1.0 - f)
            da_g = dc * i * (1.0 - g * g)

            for k, a in zip("ifog", (da_i, da_f, da_o, da_g)):
                dU[k] += a.T @ h_prev
            da[0, :, t], da[1, :, t], da[2, :, t], da[3, :, t] = da_i, da_f, da_o, da_g

            dh = da_i @ p["Ui"] + da_f @ p["Uf"] + da_o @ p["Uo"] + da_g @ p["Ug"]
            dc = dc * f

        x2 = x.reshape(B * T, -1)
        grads = {}
        dx2 = np.zeros((B * T, self.input_dim), dtype=x.dtype)
        for idx, k in enumerate("ifog"):
            a2 = da[idx].reshape(B * T, H)
            grads["W" + k] = a2.T @ x2
            grads["U" + k] = dU[k]
            grads["b" + k] = a2.sum(axis=0)
            dx2 += a2 @ p["W" + k]
        self.grads = grads
        dx = dx2.reshape(x.shape)
        if squeeze:
            return dx[0], dh[0]
        return dx, dh
