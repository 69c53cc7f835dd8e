"""Minimal numerical substrate for the intent classifier.

Dense float64 arrays (numpy) with hand-written forward/backward passes
for the five layer kinds of the baseline, per-class binary cross-entropy,
and Adam. No autodiff: every backward is exact and is validated against
central finite differences in the test suite.

Layers cache activations on forward(train=True); a model instance is
therefore single-threaded while training. Inference stores nothing.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7


class Parameter:
    """Trainable array with its gradient and Adam moment buffers."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape


def init_uniform(rs: np.random.RandomState, shape, fan_in: int) -> Parameter:
    """uniform(-a, a) with a = 1/sqrt(fan_in)."""
    a = 1.0 / np.sqrt(fan_in)
    return Parameter(rs.uniform(-a, a, size=shape))


def adam_step(p: Parameter, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
              grad_scale=1.0) -> None:
    """One bias-corrected Adam update; zeroes the gradient afterwards.

    grad_scale rescales the accumulated gradient first (mean over an
    accumulation batch) without an extra pass over the array.
    """
    p.step_count += 1
    t = p.step_count
    g = p.grad
    # in-place updates (g doubles as scratch) keep memory traffic down
    p.adam_m *= beta1
    p.adam_m += ((1.0 - beta1) * grad_scale) * g
    p.adam_v *= beta2
    np.square(g, out=g)
    g *= (1.0 - beta2) * grad_scale * grad_scale
    p.adam_v += g
    np.divide(p.adam_v, 1.0 - beta2**t, out=g)  # g = v_hat
    np.sqrt(g, out=g)
    g += eps
    np.divide(p.adam_m, g, out=g)  # g = adam_m / (sqrt(v_hat) + eps)
    g *= lr / (1.0 - beta1**t)
    p.value -= g
    g[:] = 0.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    # clip keeps exp in range; sigmoid(+-60) is 1/0 to within float64 anyway
    out = np.clip(x, -60.0, 60.0)
    np.exp(np.negative(out, out=out), out=out)
    out += 1.0
    return np.divide(1.0, out, out=out)


class Embedding:
    """Lookup table mapping phone ids to dense rows."""

    def __init__(self, rs: np.random.RandomState, vocab_size: int, dim: int):
        self.table = init_uniform(rs, (vocab_size, dim), dim)
        self._ids = None

    def forward(self, ids: np.ndarray, train: bool = False) -> np.ndarray:
        if ids.size and (ids.min() < 0 or ids.max() >= self.table.shape[0]):
            raise IndexError(f"phone id out of range for vocab {self.table.shape[0]}")
        if train:
            self._ids = ids
        return self.table.value[ids]

    def backward(self, d_out: np.ndarray) -> None:
        np.add.at(self.table.grad, self._ids, d_out)

    def parameters(self):
        return [self.table]


class Conv1d:
    """Same-padded 1-D cross-correlation over time; output length = input length."""

    def __init__(self, rs: np.random.RandomState, c_in: int, c_out: int, kernel: int):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        # stored pre-flattened for the im2col matmul: rows blocked by tap then channel
        self.weight = init_uniform(rs, (kernel * c_in, c_out), kernel * c_in)
        self.bias = Parameter(np.zeros(c_out))
        self._cols = None

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        t = x.shape[0]
        pad = self.kernel // 2
        xp = np.zeros((t + 2 * pad, self.c_in))
        xp[pad : pad + t] = x
        return np.concatenate([xp[k : k + t] for k in range(self.kernel)], axis=1)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.c_in:
            raise ValueError(f"expected (T, {self.c_in}) input, got {x.shape}")
        cols = self._im2col(x)
        if train:
            self._cols = cols
        return cols @ self.weight.value + self.bias.value

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        t = d_out.shape[0]
        pad = self.kernel // 2
        self.weight.grad += self._cols.T @ d_out
        self.bias.grad += d_out.sum(axis=0)
        d_cols = d_out @ self.weight.value.T
        d_xp = np.zeros((t + 2 * pad, self.c_in))
        for k in range(self.kernel):
            d_xp[k : k + t] += d_cols[:, k * self.c_in : (k + 1) * self.c_in]
        return d_xp[pad : pad + t]

    def parameters(self):
        return [self.weight, self.bias]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        return d_out * self._mask

    def parameters(self):
        return []


class _LstmLayer:
    """One uni-directional LSTM layer.

    Gates are packed [i, f, o, g] so a single sigmoid covers z[:3H] and a
    single tanh covers z[3H:]. Recurrence: c_t = f*c_{t-1} + i*g,
    h_t = o*tanh(c_t), zero initial states.
    """

    def __init__(self, rs: np.random.RandomState, input_size: int, hidden: int):
        self.hidden = hidden
        self.w_x = init_uniform(rs, (4 * hidden, input_size), input_size)
        self.w_h = init_uniform(rs, (4 * hidden, hidden), hidden)
        self.bias = init_uniform(rs, (4 * hidden,), hidden)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False):
        t_len, h = x.shape[0], self.hidden
        pre = x @ self.w_x.value.T
        pre += self.bias.value  # (T, 4H)
        gates = np.empty((t_len, 4 * h))
        h_prev_all = np.zeros((t_len, h))  # row t holds h_{t-1}
        c_all = np.empty((t_len, h))  # row t holds c_t
        tanh_c = np.empty((t_len, h))
        out = np.empty((t_len, h))

        c_prev = np.zeros(h)
        scratch = np.empty(h)
        w_h = self.w_h.value
        for t in range(t_len):
            z = gates[t]
            if t == 0:
                z[:] = pre[0]
            else:
                np.matmul(w_h, out[t - 1], out=z)
                z += pre[t]
            # activations in place: sigmoid over [i, f, o], tanh over g
            zs = z[: 3 * h]
            np.clip(zs, -60.0, 60.0, out=zs)
            np.exp(np.negative(zs, out=zs), out=zs)
            zs += 1.0
            np.divide(1.0, zs, out=zs)
            np.tanh(z[3 * h :], out=z[3 * h :])

            c_t = c_all[t]
            np.multiply(z[h : 2 * h], c_prev, out=c_t)
            np.multiply(z[:h], z[3 * h :], out=scratch)
            c_t += scratch
            np.tanh(c_t, out=tanh_c[t])
            np.multiply(z[2 * h : 3 * h], tanh_c[t], out=out[t])
            c_prev = c_t
        if t_len > 1:
            h_prev_all[1:] = out[:-1]
        if train:
            self._cache = (x, gates, h_prev_all, c_all, tanh_c)
        return out, (out[-1].copy(), c_all[-1].copy())

    def backward(self, d_out: np.ndarray, d_h_last: np.ndarray, d_c_last: np.ndarray):
        x, gates, h_prev_all, c_all, tanh_c = self._cache
        t_len, h = x.shape[0], self.hidden
        w_h = self.w_h.value
        dz_all = np.empty((t_len, 4 * h))
        dh = d_h_last.copy()
        dc_next = d_c_last.copy()
        dc = np.empty(h)
        scratch = np.empty(h)
        for t in range(t_len - 1, -1, -1):
            gi = gates[t, :h]
            gf = gates[t, h : 2 * h]
            go = gates[t, 2 * h : 3 * h]
            gg = gates[t, 3 * h :]
            tc = tanh_c[t]
            dh += d_out[t]
            # dc = dh * o * (1 - tanh(c)^2) + dc_next
            np.multiply(tc, tc, out=dc)
            np.subtract(1.0, dc, out=dc)
            dc *= go
            dc *= dh
            dc += dc_next
            dz = dz_all[t]
            # dz_i = dc * g * i * (1 - i)
            np.subtract(1.0, gi, out=scratch)
            scratch *= gi
            scratch *= gg
            np.multiply(dc, scratch, out=dz[:h])
            # dz_f = dc * c_{t-1} * f * (1 - f)
            np.subtract(1.0, gf, out=scratch)
            scratch *= gf
            if t > 0:
                scratch *= c_all[t - 1]
                np.multiply(dc, scratch, out=dz[h : 2 * h])
            else:
                dz[h : 2 * h] = 0.0  # c_{-1} = 0
            # dz_o = dh * tanh(c) * o * (1 - o)
            np.subtract(1.0, go, out=scratch)
            scratch *= go
            scratch *= tc
            np.multiply(dh, scratch, out=dz[2 * h : 3 * h])
            # dz_g = dc * i * (1 - g^2)
            np.multiply(gg, gg, out=scratch)
            np.subtract(1.0, scratch, out=scratch)
            scratch *= gi
            np.multiply(dc, scratch, out=dz[3 * h :])
            np.matmul(w_h.T, dz, out=dh)
            np.multiply(dc, gf, out=dc_next)
        self.w_x.grad += dz_all.T @ x
        self.w_h.grad += dz_all.T @ h_prev_all
        self.bias.grad += dz_all.sum(axis=0)
        return dz_all @ self.w_x.value, dh, dc_next

    def parameters(self):
        return [self.w_x, self.w_h, self.bias]


class LSTM:
    """Stack of 1 or 2 uni-directional LSTM layers, no dropout."""

    def __init__(self, rs: np.random.RandomState, input_size: int, hidden: int, layers: int):
        if layers not in (1, 2):
            raise ValueError(f"lstm layers must be 1 or 2, got {layers}")
        sizes = [input_size] + [hidden] * layers
        self.layers = [_LstmLayer(rs, sizes[i], hidden) for i in range(layers)]

    def forward(self, x: np.ndarray, train: bool = False):
        final = None
        for layer in self.layers:
            x, final = layer.forward(x, train=train)
        return x, final

    def backward(self, d_out: np.ndarray, d_h_last: np.ndarray, d_c_last: np.ndarray):
        h = self.layers[0].hidden
        for depth, layer in enumerate(reversed(self.layers)):
            d_out, _, _ = layer.backward(d_out, d_h_last, d_c_last)
            if depth == 0:  # only the top layer receives the final-state gradient
                d_h_last = np.zeros(h)
                d_c_last = np.zeros(h)
        return d_out

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class Linear:
    def __init__(self, rs: np.random.RandomState, in_dim: int, out_dim: int):
        self.weight = init_uniform(rs, (out_dim, in_dim), in_dim)
        self.bias = init_uniform(rs, (out_dim,), in_dim)
        self._x = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            self._x = x
        return self.weight.value @ x + self.bias.value

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        self.weight.grad += np.outer(d_out, self._x)
        self.bias.grad += d_out
        return self.weight.value.T @ d_out

    def parameters(self):
        return [self.weight, self.bias]


def bce_loss(probs: np.ndarray, target: np.ndarray):
    """Mean per-class binary cross-entropy against a one-hot target.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the returned gradient
    is exact for the clamped function (zero where the clamp is active).

    Returns (loss, d_probs).
    """
    p = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    inside = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    grad = np.where(inside, (p - target) / (p * (1.0 - p) * probs.shape[0]), 0.0)
    return float(loss), grad


def check_finite(parameters) -> None:
    for p in parameters:
        assert np.isfinite(p.value).all(), "non-finite parameter value"
