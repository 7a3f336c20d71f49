"""A small dense network stack with hand-written backpropagation.

Only what the GANs need: linear, batch-norm and ReLU layers composed into
an :class:`Mlp`, RMSProp/Adam, weight clipping, a finite-difference
gradient checker and a flat binary checkpoint format. All arithmetic is
float64.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FeganError, NoCachedForward, NonFiniteActivation, ShapeMismatch


class Parameter:
    """A trainable array together with its gradient buffer."""

    def __init__(self, value, name=""):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Linear:
    """``y = x @ W.T + b`` with ``W`` stored out x in."""

    kind = 0

    def __init__(self, in_dim, out_dim, rng=None, bias=True):
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        rng = np.random.default_rng() if rng is None else rng
        bound = np.sqrt(6.0 / self.in_dim)  # Kaiming uniform for ReLU stacks
        self.weight = Parameter(rng.uniform(-bound, bound, (self.out_dim, self.in_dim)), "weight")
        self.bias = Parameter(np.zeros(self.out_dim), "bias") if bias else None
        self._x = None

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x, train=True):
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"linear layer expects {self.in_dim} inputs, got {x.shape[1]}")
        self._x = x
        out = x @ self.weight.value.T
        if self.bias is not None:
            out = out + self.bias.value
        return out

    def backward(self, dout):
        if self._x is None:
            raise NoCachedForward("linear backward called before forward")
        self.weight.grad += dout.T @ self._x
        if self.bias is not None:
            self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value


class BatchNorm:
    """Per-feature batch normalisation.

    Training mode normalises with the biased batch variance and updates the
    running statistics (unbiased variance) with ``momentum``; evaluation
    mode normalises with the running statistics only.
    """

    kind = 1

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.dim = int(dim)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.gamma = Parameter(np.ones(self.dim), "gamma")
        self.beta = Parameter(np.zeros(self.dim), "beta")
        self.running_mean = np.zeros(self.dim)
        self.running_var = np.ones(self.dim)
        self._cache = None

    @property
    def in_dim(self):
        return self.dim

    out_dim = in_dim

    def parameters(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=True):
        if x.shape[1] != self.dim:
            raise ShapeMismatch(f"batch norm expects {self.dim} features, got {x.shape[1]}")
        if train:
            n = x.shape[0]
            mean = x.sum(axis=0) / n
            centred = x - mean
            var = np.einsum("ij,ij->j", centred, centred) / n
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_var = (1 - m) * self.running_var + m * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train)
        return xhat * self.gamma.value + self.beta.value

    def backward(self, dout):
        if self._cache is None:
            raise NoCachedForward("batch norm backward called before forward")
        xhat, inv_std, train = self._cache
        self.gamma.grad += (dout * xhat).sum(axis=0)
        self.beta.grad += dout.sum(axis=0)
        dxhat = dout * self.gamma.value
        if not train:
            return dxhat * inv_std
        n = dout.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class ReLU:
    kind = 2

    def __init__(self, dim):
        self.dim = int(dim)
        self._mask = None

    @property
    def in_dim(self):
        return self.dim

    out_dim = in_dim

    def parameters(self):
        return []

    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            raise NoCachedForward("relu backward called before forward")
        return dout * self._mask


class Mlp:
    """Layers applied in order; ``forward`` caches what ``backward`` needs."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeMismatch(f"layer output {a.out_dim} does not feed input {b.in_dim}")
        self._forwarded = False

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"network expects (batch, {self.in_dim}) input, got {x.shape}")
        for i, layer in enumerate(self.layers):
            with np.errstate(over="ignore", invalid="ignore"):
                x = layer.forward(x, train)
            if not np.all(np.isfinite(x)):
                raise NonFiniteActivation(f"non-finite activation after layer {i}")
        self._forwarded = True
        return x

    __call__ = forward

    def backward(self, dout):
        """Accumulate parameter gradients and return the input gradient."""
        if not self._forwarded:
            raise NoCachedForward("backward called before forward")
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def mlp(in_dim, width, n_blocks, out_dim=None, rng=None, batchnorm=True):
    """``n_blocks`` of linear -> batch norm -> ReLU, then an optional affine head.

    With ``out_dim=None`` the network ends after the last block (used for
    the feature preprocessing stack).
    """
    rng = np.random.default_rng() if rng is None else rng
    layers = []
    d = in_dim
    for _ in range(n_blocks):
        # bias is redundant in front of batch norm
        layers.append(Linear(d, width, rng, bias=not batchnorm))
        if batchnorm:
            layers.append(BatchNorm(width))
        layers.append(ReLU(width))
        d = width
    if out_dim is not None:
        layers.append(Linear(d, out_dim, rng))
    return Mlp(layers)


# ---------------------------------------------------------------------------
# optimisers
# ---------------------------------------------------------------------------

class RMSProp:
    def __init__(self, params, lr=5e-5, rho=0.9, eps=1e-16):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.acc = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        for p, acc in zip(self.params, self.acc):
            if p.grad.shape != p.value.shape:
                raise ShapeMismatch(f"gradient shape {p.grad.shape} != {p.value.shape}")
            acc *= self.rho
            acc += (1 - self.rho) * p.grad ** 2
            p.value -= self.lr * p.grad / np.sqrt(acc + self.eps)


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad.shape != p.value.shape:
                raise ShapeMismatch(f"gradient shape {p.grad.shape} != {p.value.shape}")
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind, params, lr=None):
    if kind == "rmsprop":
        return RMSProp(params, lr=5e-5 if lr is None else lr)
    if kind == "adam":
        return Adam(params, lr=1e-4 if lr is None else lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def clip_weights(net, c):
    """Clamp every trainable parameter of ``net`` into ``[-c, c]`` in place."""
    if c <= 0:
        raise ValueError("clip value must be positive")
    for p in net.parameters():
        np.clip(p.value, -c, c, out=p.value)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(net, x, loss_fn, h=1e-5, train=True):
    """Worst relative error between backprop and central differences.

    ``loss_fn(out)`` must return ``(loss, dloss/dout)``. Every parameter
    entry and every input entry is perturbed by ``+-h``.
    """
    x = np.array(x, dtype=float)

    def loss_at(inp):
        return loss_fn(net.forward(inp, train))[0]

    net.zero_grad()
    _, dout = loss_fn(net.forward(x, train))
    dx = net.backward(dout)
    worst = 0.0
    for p in net.parameters():
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_at(x)
            flat[i] = old - h
            down = loss_at(x)
            flat[i] = old
            numeric[i] = (up - down) / (2 * h)
        worst = max(worst, float(rel_error(analytic.reshape(-1), numeric).max()))
    flat = x.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_at(x)
        flat[i] = old - h
        down = loss_at(x)
        flat[i] = old
        numeric[i] = (up - down) / (2 * h)
    worst = max(worst, float(rel_error(dx.reshape(-1), numeric).max()))
    return worst


# (in_dim, width, blocks, out_dim) of the small nets used by the suite
CHECK_ARCHITECTURES = ((5, 16, 1, 3), (6, 32, 2, 1), (4, 8, 3, 2))


def grad_check_suite(seeds=5, batch=7, architectures=CHECK_ARCHITECTURES):
    """Worst :func:`grad_check` error over seeds x architectures.

    Each net is linear -> batch norm -> ReLU blocks with an affine head,
    trained in batch mode on a squared loss against random targets.
    """
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        for in_dim, width, blocks, out_dim in architectures:
            net = mlp(in_dim, width, blocks, out_dim, rng=rng)
            x = rng.standard_normal((batch, in_dim))
            y = rng.standard_normal((batch, out_dim))

            def loss_fn(out, y=y):
                r = out - y
                return 0.5 * float(np.sum(r * r)), r

            worst = max(worst, grad_check(net, x, loss_fn))
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# Layout (all little endian):
#   8 bytes   magic b"FEGANNN1"
#   uint32    number of networks
#   per network:
#     uint32  number of layers
#     per layer: uint8 kind (0 linear, 1 batchnorm, 2 relu), uint8 has_bias,
#                uint32 in_dim, uint32 out_dim
#     per layer, in order, float64 row-major payload:
#       linear     weight (out x in), then bias (out) if has_bias
#       batchnorm  gamma, beta, running_mean, running_var (dim each),
#                  then momentum, eps
#       relu       nothing

MAGIC = b"FEGANNN1"


def save_checkpoint(nets, path):
    nets = [nets] if isinstance(nets, Mlp) else list(nets)
    chunks = [MAGIC, struct.pack("<I", len(nets))]
    for net in nets:
        chunks.append(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            has_bias = int(isinstance(layer, Linear) and layer.bias is not None)
            chunks.append(struct.pack("<BBII", layer.kind, has_bias, layer.in_dim, layer.out_dim))
        for layer in net.layers:
            if isinstance(layer, Linear):
                chunks.append(layer.weight.value.astype("<f8").tobytes())
                if layer.bias is not None:
                    chunks.append(layer.bias.value.astype("<f8").tobytes())
            elif isinstance(layer, BatchNorm):
                arr = np.concatenate([layer.gamma.value, layer.beta.value,
                                      layer.running_mean, layer.running_var,
                                      [layer.momentum, layer.eps]])
                chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns a list of :class:`Mlp`."""
    buf = memoryview(Path(path).read_bytes())
    if bytes(buf[:8]) != MAGIC:
        raise FeganError(f"{path} is not a fegan checkpoint")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    def floats(count):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
        return arr

    (n_nets,) = take("<I")
    nets = []
    for _ in range(n_nets):
        (n_layers,) = take("<I")
        table = [take("<BBII") for _ in range(n_layers)]
        layers = []
        for kind, has_bias, d_in, d_out in table:
            if kind == 0:
                layer = Linear(d_in, d_out, bias=bool(has_bias))
                layer.weight.value[...] = floats(d_in * d_out).reshape(d_out, d_in)
                if has_bias:
                    layer.bias.value[...] = floats(d_out)
            elif kind == 1:
                layer = BatchNorm(d_in)
                layer.gamma.value[...] = floats(d_in)
                layer.beta.value[...] = floats(d_in)
                layer.running_mean = floats(d_in)
                layer.running_var = floats(d_in)
                layer.momentum, layer.eps = (float(v) for v in floats(2))
            elif kind == 2:
                layer = ReLU(d_in)
            else:
                raise FeganError(f"unknown layer kind {kind}")
            layers.append(layer)
        nets.append(Mlp(layers))
    return nets
