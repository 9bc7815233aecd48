"""Minimal differentiable-network core: dense layers, recurrent cells, output
heads, losses, optimizers, and a finite-difference gradient checker.

Everything is plain numpy with hand-written backward passes; there is no
autograd framework underneath. Batches are row-major: inputs are (B, D) or a
single (D,) vector, sequences are (B, L, D).

Loss conventions: losses average over the batch dimension and over vector
components (so ``mse_loss([0,0], [1,0])`` is 0.5). Gaussian negative
log-likelihood sums over action dimensions and averages over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import STREAM_INIT, counter_rng


class DivergenceError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


#: Default cap on the global gradient norm applied by every training step.
GRAD_CLIP_NORM = 5.0


class Param:
    """A trainable array with an accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _act_forward(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_backward(kind: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # all supported activations have derivatives expressible via the output y
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "relu":
        return dy * (y > 0.0)
    if kind == "identity":
        return dy
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}")


ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid")


# ---------------------------------------------------------------------------
# Feedforward
# ---------------------------------------------------------------------------


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, activation: str, rng, bias: bool = True):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.W = Param(_init_uniform(rng, (out_dim, in_dim), in_dim))
        self.b = Param(np.zeros(out_dim)) if bias else None

    def forward(self, x: np.ndarray):
        z = x @ self.W.value.T
        if self.b is not None:
            z = z + self.b.value
        y = _act_forward(self.activation, z)
        return y, (x, y)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x, y = cache
        dz = _act_backward(self.activation, y, dy)
        self.W.grad += dz.T @ x
        if self.b is not None:
            self.b.grad += dz.sum(axis=0)
        return dz @ self.W.value

    def params(self) -> list[Param]:
        return [self.W] + ([self.b] if self.b is not None else [])


class FeedforwardNet:
    """Stack of dense layers. ``dims`` chains input through hiddens to output;
    the last layer is linear by default so an output head can shape it."""

    def __init__(self, dims: list[int], activations: list[str] | None = None,
                 seed: int = 0, bias: bool = True):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if activations is None:
            activations = ["tanh"] * (len(dims) - 2) + ["identity"]
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        rng = counter_rng(seed, STREAM_INIT)
        self.dims = list(dims)
        self.layers = [
            DenseLayer(dims[i], dims[i + 1], activations[i], rng, bias=bias)
            for i in range(len(dims) - 1)
        ]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(np.asarray(x, dtype=np.float64))
        return y

    def forward_cached(self, x: np.ndarray):
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"input width {x.shape[1]} != {self.input_dim}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return (x[0] if single else x), caches

    def backward(self, dz: np.ndarray, caches) -> None:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dz = layer.backward(dz, cache)

    def clone(self) -> "FeedforwardNet":
        import copy

        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# Recurrent cells
# ---------------------------------------------------------------------------


class ElmanCell:
    def __init__(self, in_dim: int, hidden_dim: int, rng):
        self.hidden_dim = hidden_dim
        self.Wx = Param(_init_uniform(rng, (hidden_dim, in_dim), in_dim))
        self.Wh = Param(_init_uniform(rng, (hidden_dim, hidden_dim), hidden_dim))
        self.b = Param(np.zeros(hidden_dim))

    def initial_state(self, batch: int):
        return np.zeros((batch, self.hidden_dim))

    def step(self, x, state):
        h = state
        h_new = np.tanh(x @ self.Wx.value.T + h @ self.Wh.value.T + self.b.value)
        return h_new, h_new, (x, h, h_new)

    def backward_step(self, dh_new, dstate_future, cache):
        x, h, h_new = cache
        dh_total = dh_new + dstate_future
        dz = dh_total * (1.0 - h_new * h_new)
        self.Wx.grad += dz.T @ x
        self.Wh.grad += dz.T @ h
        self.b.grad += dz.sum(axis=0)
        return dz @ self.Wx.value, dz @ self.Wh.value

    def params(self):
        return [self.Wx, self.Wh, self.b]


class LSTMCell:
    """LSTM with input, forget, and output gates. Forget bias starts at 1 so
    early training does not erase the cell state."""

    def __init__(self, in_dim: int, hidden_dim: int, rng):
        self.hidden_dim = hidden_dim
        H = hidden_dim
        self.Wx = Param(_init_uniform(rng, (4 * H, in_dim), in_dim))
        self.Wh = Param(_init_uniform(rng, (4 * H, H), H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        self.b = Param(b)

    def initial_state(self, batch: int):
        H = self.hidden_dim
        return (np.zeros((batch, H)), np.zeros((batch, H)))

    def step(self, x, state):
        h, c = state
        H = self.hidden_dim
        z = x @ self.Wx.value.T + h @ self.Wh.value.T + self.b.value
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        o = sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, (h_new, c_new), (x, h, c, i, f, o, g, tc)

    def backward_step(self, dh_new, dstate_future, cache):
        x, h, c, i, f, o, g, tc = cache
        dh_fut, dc_fut = dstate_future if dstate_future is not None else (0.0, 0.0)
        dh_total = dh_new + dh_fut
        do = dh_total * tc
        dc_total = dc_fut + dh_total * o * (1.0 - tc * tc)
        di = dc_total * g
        df = dc_total * c
        dg = dc_total * i
        dc_prev = dc_total * f
        dzi = di * i * (1.0 - i)
        dzf = df * f * (1.0 - f)
        dzo = do * o * (1.0 - o)
        dzg = dg * (1.0 - g * g)
        dz = np.concatenate([dzi, dzf, dzo, dzg], axis=1)
        self.Wx.grad += dz.T @ x
        self.Wh.grad += dz.T @ h
        self.b.grad += dz.sum(axis=0)
        dx = dz @ self.Wx.value
        dh_prev = dz @ self.Wh.value
        return dx, (dh_prev, dc_prev)

    def params(self):
        return [self.Wx, self.Wh, self.b]


class RecurrentNet:
    """Recurrent network: a cell (elman or lstm) plus a linear output
    projection. The initial hidden state is zeros."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 cell: str = "lstm", seed: int = 0):
        rng = counter_rng(seed, STREAM_INIT)
        if cell == "lstm":
            self.cell = LSTMCell(in_dim, hidden_dim, rng)
        elif cell == "elman":
            self.cell = ElmanCell(in_dim, hidden_dim, rng)
        else:
            raise ValueError(f"unknown cell {cell!r}")
        self.cell_kind = cell
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.W_out = Param(_init_uniform(rng, (out_dim, hidden_dim), hidden_dim))
        self.b_out = Param(np.zeros(out_dim))

    @property
    def input_dim(self) -> int:
        return self.in_dim

    @property
    def output_dim(self) -> int:
        return self.out_dim

    def params(self) -> list[Param]:
        return self.cell.params() + [self.W_out, self.b_out]

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()

    def initial_state(self, batch: int = 1):
        return self.cell.initial_state(batch)

    def step(self, x: np.ndarray, state):
        """One recurrent step on a (B, I) input; returns (y, new_state)."""
        h, state, _ = self.cell.step(x, state)
        y = h @ self.W_out.value.T + self.b_out.value
        return y, state

    def unroll(self, xs: np.ndarray, state=None):
        """Run the net over a sequence. xs is (L, I) or (B, L, I); returns
        outputs of matching shape plus the final state."""
        ys, state, _ = self._unroll_cached(xs, state)
        return ys, state

    def _unroll_cached(self, xs: np.ndarray, state=None):
        xs = np.asarray(xs, dtype=np.float64)
        single = xs.ndim == 2
        if single:
            xs = xs[None, :, :]
        B, L, I = xs.shape
        if I != self.in_dim:
            raise ValueError(f"input width {I} != {self.in_dim}")
        if state is None:
            state = self.cell.initial_state(B)
        hs = np.empty((B, L, self.cell.hidden_dim))
        caches = []
        for t in range(L):
            h, state, cache = self.cell.step(xs[:, t, :], state)
            hs[:, t, :] = h
            caches.append(cache)
        ys = hs @ self.W_out.value.T + self.b_out.value
        return (ys[0] if single else ys), state, (hs, caches)

    def backward_through_time(self, dys: np.ndarray, cache) -> None:
        """Accumulate gradients given per-step output gradients (B, L, O)."""
        hs, caches = cache
        B, L, H = hs.shape
        dhs = dys @ self.W_out.value
        self.W_out.grad += np.einsum("blo,blh->oh", dys, hs)
        self.b_out.grad += dys.sum(axis=(0, 1))
        dstate = None
        for t in range(L - 1, -1, -1):
            if dstate is None:
                dstate = (
                    (np.zeros((B, H)), np.zeros((B, H)))
                    if isinstance(self.cell, LSTMCell)
                    else np.zeros((B, H))
                )
            _, dstate = self._cell_backward(dhs[:, t, :], dstate, caches[t])

    def _cell_backward(self, dh, dstate, cache):
        return self.cell.backward_step(dh, dstate, cache)

    def clone(self) -> "RecurrentNet":
        import copy

        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# Output heads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutputHead:
    """Shapes raw network output into an action distribution.

    softmax: probabilities over discrete actions, sampled as one-hot.
    sigmoid: independent per-component probabilities (multi-binary actions).
    gaussian: first half means, second half log-variances of a diagonal
        Gaussian over continuous actions.
    identity: raw output passthrough (plumbing for regression tests).
    """

    kind: str = "softmax"

    def __post_init__(self):
        if self.kind not in ("softmax", "sigmoid", "gaussian", "identity"):
            raise ValueError(f"unknown head kind {self.kind!r}")

    def transform(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "softmax":
            return softmax(z)
        if self.kind == "sigmoid":
            return sigmoid(z)
        return np.asarray(z, dtype=np.float64)

    def mean_and_var(self, z: np.ndarray):
        if self.kind != "gaussian":
            raise ValueError("mean_and_var applies to gaussian heads only")
        half = z.shape[-1] // 2
        return z[..., :half], np.exp(z[..., half:])

    def sample(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if not np.all(np.isfinite(z)):
            raise DivergenceError("non-finite network output")
        if self.kind == "softmax":
            p = softmax(z)
            idx = rng.choice(len(p), p=p)
            out = np.zeros_like(p)
            out[idx] = 1.0
            return out
        if self.kind == "sigmoid":
            p = sigmoid(z)
            return (rng.random(p.shape) < p).astype(np.float64)
        if self.kind == "gaussian":
            mu, var = self.mean_and_var(z)
            return mu + np.sqrt(var) * rng.standard_normal(mu.shape)
        return np.asarray(z, dtype=np.float64)

    def greedy(self, z: np.ndarray) -> np.ndarray:
        """Deterministic choice; ties break to the lowest index."""
        if not np.all(np.isfinite(z)):
            raise DivergenceError("non-finite network output")
        if self.kind == "softmax":
            out = np.zeros_like(z)
            out[int(np.argmax(z))] = 1.0
            return out
        if self.kind == "sigmoid":
            return (sigmoid(z) >= 0.5).astype(np.float64)
        if self.kind == "gaussian":
            mu, _ = self.mean_and_var(z)
            return mu.copy()
        return np.asarray(z, dtype=np.float64)


# ---------------------------------------------------------------------------
# Losses (scalar loss + gradient w.r.t. the prediction argument)
# ---------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("pred/target shape mismatch")
    e = pred - target
    loss = float(np.mean(e * e))
    return loss, 2.0 * e / e.size


def crossentropy_loss(probs: np.ndarray, target: np.ndarray):
    """Cross-entropy against a probability vector (rows sum to 1). Gradient is
    w.r.t. the probabilities; chain through softmax separately."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(probs, 1e-12, None)
    batch = 1 if probs.ndim == 1 else probs.shape[0]
    loss = float(-np.sum(target * np.log(p)) / batch)
    return loss, -target / p / batch


def gaussian_nll(pred: np.ndarray, target: np.ndarray):
    """Negative log-likelihood of target under the diagonal Gaussian encoded
    by pred = [means..., log-variances...]. Sums over dims, averages over the
    batch; the irreducible floor at a perfect unit-variance fit is
    0.5*ln(2*pi) per dimension."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    half = pred.shape[-1] // 2
    if pred.shape[-1] != 2 * half or target.shape[-1] != half:
        raise ValueError("pred must hold [means, log_vars], target the means' dims")
    mu = pred[..., :half]
    logvar = pred[..., half:]
    var = np.exp(logvar)
    batch = 1 if pred.ndim == 1 else pred.shape[0]
    per = 0.5 * (np.log(2.0 * np.pi) + logvar + (target - mu) ** 2 / var)
    loss = float(np.sum(per) / batch)
    dmu = (mu - target) / var / batch
    dlogvar = 0.5 * (1.0 - (target - mu) ** 2 / var) / batch
    return loss, np.concatenate([dmu, dlogvar], axis=-1)


def head_loss_rows(head: OutputHead, loss_kind: str, z: np.ndarray, target: np.ndarray):
    """Per-row loss and per-row gradient w.r.t. raw outputs z, rows = (N, K).

    Row losses follow the same conventions as the scalar loss functions
    (mean over components for mse, sum for crossentropy/bce/nll).
    """
    K = z.shape[-1]
    if head.kind == "softmax":
        p = softmax(z)
        if loss_kind == "mse":
            e = p - target
            rows = np.mean(e * e, axis=-1)
            dp = 2.0 * e / K
            dz = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
            return rows, dz
        if loss_kind == "crossentropy":
            pc = np.clip(p, 1e-12, None)
            rows = -np.sum(target * np.log(pc), axis=-1)
            return rows, p - target
    elif head.kind == "sigmoid":
        p = sigmoid(z)
        if loss_kind == "mse":
            e = p - target
            rows = np.mean(e * e, axis=-1)
            return rows, (2.0 * e / K) * p * (1.0 - p)
        if loss_kind == "bce":
            pc = np.clip(p, 1e-12, 1.0 - 1e-12)
            rows = -np.sum(target * np.log(pc) + (1 - target) * np.log(1 - pc), axis=-1)
            return rows, p - target
    elif head.kind == "gaussian":
        if loss_kind == "nll":
            half = K // 2
            mu, logvar = z[..., :half], z[..., half:]
            var = np.exp(logvar)
            rows = 0.5 * np.sum(np.log(2.0 * np.pi) + logvar + (target - mu) ** 2 / var, axis=-1)
            dmu = (mu - target) / var
            dlogvar = 0.5 * (1.0 - (target - mu) ** 2 / var)
            return rows, np.concatenate([dmu, dlogvar], axis=-1)
    elif head.kind == "identity":
        if loss_kind == "mse":
            e = z - target
            return np.mean(e * e, axis=-1), 2.0 * e / K
    raise ValueError(f"unsupported head/loss pair ({head.kind}, {loss_kind})")


def head_loss(head: OutputHead, loss_kind: str, z: np.ndarray, target: np.ndarray):
    """Batch-mean loss and gradient w.r.t. the raw network output z.

    Supported pairs: softmax+mse (default for one-hot discrete targets),
    softmax+crossentropy, sigmoid+mse, sigmoid+bce, gaussian+nll,
    identity+mse.
    """
    z = np.asarray(z, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    t2 = np.atleast_2d(target)
    rows, dz = head_loss_rows(head, loss_kind, z2, t2)
    n = z2.shape[0]
    loss = float(np.mean(rows))
    dz = dz / n
    return loss, (dz[0] if single else dz)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, params: list[Param], lr: float = 0.1, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.value -= self.lr * v
            p.zero_grad()


class Adam:
    def __init__(self, params: list[Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.zero_grad()


def make_optimizer(params: list[Param], kind: str = "adam", lr: float | None = None,
                   momentum: float = 0.9) -> SGD | Adam:
    if kind == "adam":
        return Adam(params, lr=1e-3 if lr is None else lr)
    if kind == "sgd":
        return SGD(params, lr=0.1 if lr is None else lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r}")


def clip_global_norm(params: list[Param], max_norm: float = GRAD_CLIP_NORM) -> float:
    total = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# Training steps
# ---------------------------------------------------------------------------


def train_step(net: FeedforwardNet, head: OutputHead, inputs: np.ndarray,
               targets: np.ndarray, loss_kind: str, opt) -> float:
    """One gradient step on a batch; returns the pre-update loss."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    net.zero_grads()
    z, caches = net.forward_cached(inputs)
    loss, dz = head_loss(head, loss_kind, z, targets)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    net.backward(dz, caches)
    clip_global_norm(net.params())
    opt.step()
    return loss


def sequence_loss(head: OutputHead, loss_kind: str, ys: np.ndarray,
                  targets: np.ndarray, mask: np.ndarray):
    """Masked mean per-step loss over (B, L, ...) outputs, plus d(loss)/d(ys).

    Steps with mask 0 contribute nothing, to the loss or to the gradient.
    """
    B, L, K = ys.shape
    total_w = float(mask.sum())
    if total_w == 0.0:
        return 0.0, np.zeros_like(ys)
    rows, dz = head_loss_rows(head, loss_kind, ys.reshape(B * L, K),
                              targets.reshape(B * L, targets.shape[-1]))
    w = mask.reshape(B * L)
    loss = float(np.sum(w * rows) / total_w)
    dys = (dz * (w / total_w)[:, None]).reshape(B, L, K)
    return loss, dys


def bptt_step(rnet: RecurrentNet, head: OutputHead, xs: np.ndarray,
              targets: np.ndarray, mask: np.ndarray, loss_kind: str, opt) -> float:
    """Backpropagation through time on a padded batch of sequences.

    xs: (B, L, I); targets: (B, L, K); mask: (B, L) per-step loss weights.
    Gradients flow through every unrolled step; masked-out steps contribute
    zero loss. Returns the pre-update loss.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[None]
        targets = np.asarray(targets)[None]
        mask = np.asarray(mask)[None]
    mask = np.asarray(mask, dtype=np.float64)
    rnet.zero_grads()
    ys, _, cache = rnet._unroll_cached(xs)
    loss, dys = sequence_loss(head, loss_kind, ys, np.asarray(targets, dtype=np.float64), mask)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    if float(mask.sum()) > 0.0:
        rnet.backward_through_time(dys, cache)
        clip_global_norm(rnet.params())
        opt.step()
    return loss


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def _model_loss(model, head: OutputHead, inputs, targets, loss_kind: str, mask=None) -> float:
    if isinstance(model, RecurrentNet):
        ys, _ = model.unroll(inputs)
        if mask is None:
            mask = np.ones(ys.shape[:-1] if ys.ndim == 3 else (ys.shape[0],))
        ys3 = ys if ys.ndim == 3 else ys[None]
        t3 = np.asarray(targets, dtype=np.float64)
        t3 = t3 if t3.ndim == 3 else t3[None]
        m2 = np.asarray(mask, dtype=np.float64)
        m2 = m2 if m2.ndim == 2 else m2[None]
        loss, _ = sequence_loss(head, loss_kind, ys3, t3, m2)
        return loss
    z = model.forward(np.asarray(inputs, dtype=np.float64))
    loss, _ = head_loss(head, loss_kind, z, np.asarray(targets, dtype=np.float64))
    return loss


def _model_grads(model, head, inputs, targets, loss_kind, mask=None) -> None:
    model.zero_grads()
    if isinstance(model, RecurrentNet):
        xs = np.asarray(inputs, dtype=np.float64)
        xs3 = xs if xs.ndim == 3 else xs[None]
        t3 = np.asarray(targets, dtype=np.float64)
        t3 = t3 if t3.ndim == 3 else t3[None]
        if mask is None:
            mask = np.ones(xs3.shape[:2])
        m2 = np.asarray(mask, dtype=np.float64)
        m2 = m2 if m2.ndim == 2 else m2[None]
        ys, _, cache = model._unroll_cached(xs3)
        _, dys = sequence_loss(head, loss_kind, ys, t3, m2)
        model.backward_through_time(dys, cache)
    else:
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        z, caches = model.forward_cached(x)
        _, dz = head_loss(head, loss_kind, z, t)
        model.backward(dz, caches)


def grad_check(model, head: OutputHead, inputs, targets, loss_kind: str = "mse",
               eps: float = 1e-5, mask=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter element is |a - n| / max(1e-8, |a| + |n|);
    the analytic path must agree with the numeric one to ~1e-4 at eps=1e-5
    for every architecture in this module.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps out of the supported range [1e-7, 1e-3]")
    _model_grads(model, head, inputs, targets, loss_kind, mask)
    worst = 0.0
    for p in model.params():
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        num = np.zeros(flat.size)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = _model_loss(model, head, inputs, targets, loss_kind, mask)
            flat[idx] = orig - eps
            down = _model_loss(model, head, inputs, targets, loss_kind, mask)
            flat[idx] = orig
            num[idx] = (up - down) / (2.0 * eps)
        a = analytic.reshape(-1)
        rel = np.abs(a - num) / np.maximum(1e-8, np.abs(a) + np.abs(num))
        worst = max(worst, float(rel.max()))
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CMDRLCK\x00"
CHECKPOINT_VERSION = 1
FLAG_COMMAND_FREE = 1

_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}
_CELL_CODES = {"elman": 0, "lstm": 1}
_HEAD_CODES = {"softmax": 0, "sigmoid": 1, "gaussian": 2, "identity": 3}


def save_arrays(path, named: dict[str, np.ndarray], flags: int = 0) -> None:
    """Flat binary checkpoint: magic, version, flags, then a table of named
    float64 arrays (name, shape, little-endian data)."""
    import struct

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, flags))
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path):
    """Inverse of :func:`save_arrays`; returns (named arrays, flags)."""
    import struct

    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, flags = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        named: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            named[name] = data.astype(np.float64)
        return named, flags


def net_to_entries(net) -> dict[str, np.ndarray]:
    """Serialize a network's architecture and parameters to named arrays."""
    if isinstance(net, FeedforwardNet):
        entries = {
            "arch/type": np.array([0.0]),
            "arch/dims": np.array(net.dims, dtype=np.float64),
            "arch/acts": np.array([_ACT_CODES[l.activation] for l in net.layers], dtype=np.float64),
            "arch/bias": np.array([1.0 if net.layers[0].b is not None else 0.0]),
        }
        for i, layer in enumerate(net.layers):
            entries[f"layer{i}/W"] = layer.W.value
            if layer.b is not None:
                entries[f"layer{i}/b"] = layer.b.value
        return entries
    if isinstance(net, RecurrentNet):
        entries = {
            "arch/type": np.array([1.0]),
            "arch/dims": np.array([net.in_dim, net.hidden_dim, net.out_dim], dtype=np.float64),
            "arch/cell": np.array([_CELL_CODES[net.cell_kind]], dtype=np.float64),
            "cell/Wx": net.cell.Wx.value,
            "cell/Wh": net.cell.Wh.value,
            "cell/b": net.cell.b.value,
            "out/W": net.W_out.value,
            "out/b": net.b_out.value,
        }
        return entries
    raise TypeError(f"cannot serialize {type(net)!r}")


def net_from_entries(entries: dict[str, np.ndarray]):
    kind = int(entries["arch/type"][0])
    if kind == 0:
        dims = [int(d) for d in entries["arch/dims"]]
        acts = [ACTIVATIONS[int(c)] for c in entries["arch/acts"]]
        bias = bool(entries["arch/bias"][0])
        net = FeedforwardNet(dims, acts, seed=0, bias=bias)
        for i, layer in enumerate(net.layers):
            layer.W.value = entries[f"layer{i}/W"].copy()
            if layer.b is not None:
                layer.b.value = entries[f"layer{i}/b"].copy()
        return net
    if kind == 1:
        in_dim, hidden, out_dim = (int(d) for d in entries["arch/dims"])
        cell = {v: k for k, v in _CELL_CODES.items()}[int(entries["arch/cell"][0])]
        net = RecurrentNet(in_dim, hidden, out_dim, cell=cell, seed=0)
        net.cell.Wx.value = entries["cell/Wx"].copy()
        net.cell.Wh.value = entries["cell/Wh"].copy()
        net.cell.b.value = entries["cell/b"].copy()
        net.W_out.value = entries["out/W"].copy()
        net.b_out.value = entries["out/b"].copy()
        return net
    raise ValueError(f"unknown network type code {kind}")


def head_to_code(head: OutputHead) -> float:
    return float(_HEAD_CODES[head.kind])


def head_from_code(code: float) -> OutputHead:
    return OutputHead({v: k for k, v in _HEAD_CODES.items()}[int(code)])
