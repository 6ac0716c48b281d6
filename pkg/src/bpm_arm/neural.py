"""Dense tanh networks over flat parameter vectors, with hand-written backprop.

Parameters for every layer live in one contiguous float64 array; layer
weights and biases are reshaped views into it, so optimizers, soft updates,
ensembles and Thompson sampling all operate on plain vectors.

Layout per layer: weight matrix of shape (fan_in, fan_out) in row-major
order, followed by the bias of length fan_out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidInput(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


_OUTPUT_ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    output_activation: str = "linear"
    hidden_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise InvalidInput("need at least input and output widths")
        if min(self.layer_sizes) < 1:
            raise InvalidInput(f"layer widths must be >= 1, got {self.layer_sizes}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise InvalidInput(f"unknown output activation {self.output_activation!r}")
        if self.hidden_activation != "tanh":
            raise InvalidInput("only tanh hidden layers are supported")

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def slices(self) -> list[tuple[slice, tuple[int, int], slice]]:
        """(weight slice, weight shape, bias slice) for each layer."""
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, (fan_in, fan_out), b))
        return out


@dataclass
class ParamVector:
    values: np.ndarray
    spec: MlpSpec

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise InvalidInput(
                f"expected {self.spec.n_params} parameters for {self.spec.layer_sizes}, "
                f"got shape {self.values.shape}"
            )

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Weight/bias views into ``values`` (writes go through)."""
        return [
            (self.values[w].reshape(shape), self.values[b])
            for w, shape, b in self.spec.slices()
        ]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.spec)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.spec)


def flatten(layers: list[tuple[np.ndarray, np.ndarray]], spec: MlpSpec) -> ParamVector:
    parts = []
    for (w, b), (_, shape, _) in zip(layers, spec.slices()):
        if w.shape != shape or b.shape != (shape[1],):
            raise InvalidInput("layer shapes do not match spec")
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    return ParamVector(np.concatenate(parts), spec)


def unflatten(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(w.copy(), b.copy()) for w, b in params.layers()]


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 0.01) -> ParamVector:
    """Uniform fan-in initialization; the last layer is shrunk by ``final_scale``."""
    values = np.empty(spec.n_params)
    slices = spec.slices()
    for k, (w, (fan_in, fan_out), b) in enumerate(slices):
        bound = 1.0 / np.sqrt(fan_in)
        if k == len(slices) - 1:
            bound *= final_scale
        values[w] = rng.uniform(-bound, bound, size=fan_in * fan_out)
        values[b] = rng.uniform(-bound, bound, size=fan_out)
    return ParamVector(values, spec)


def _as_batch(params: ParamVector, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.n_in:
        raise InvalidInput(f"input shape {x.shape} does not match width {params.spec.n_in}")
    return x, single


def forward_trace(params: ParamVector, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer for a (batch, n_in) input, input first."""
    acts = [x]
    layers = params.layers()
    last = len(layers) - 1
    h = x
    for k, (w, b) in enumerate(layers):
        z = h @ w
        z += b
        if k < last or params.spec.output_activation == "tanh":
            np.tanh(z, out=z)
        acts.append(z)
        h = z
    return acts


def backward_trace(
    params: ParamVector, acts: list[np.ndarray], output_grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse pass for a trace from :func:`forward_trace`.

    Returns the flat parameter gradient of ``sum(output * output_grad)`` and
    the gradient with respect to the input batch.
    """
    grad = np.empty(params.spec.n_params)
    slices = params.spec.slices()
    layers = params.layers()
    last = len(layers) - 1
    delta = np.asarray(output_grad, dtype=np.float64)
    for k in range(last, -1, -1):
        w, _ = layers[k]
        out = acts[k + 1]
        if k < last or params.spec.output_activation == "tanh":
            delta = delta * (1.0 - out * out)
        ws, shape, bs = slices[k]
        grad[ws] = (acts[k].T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        delta = delta @ w.T
    return grad, delta


def forward(params: ParamVector, x) -> np.ndarray:
    xb, single = _as_batch(params, x)
    out = forward_trace(params, xb)[-1]
    return out[0] if single else out


def backward(params: ParamVector, x, output_grad) -> tuple["Gradient", np.ndarray]:
    """Gradient of ``sum(forward(params, x) * output_grad)``.

    Works for a single input vector or a batch; parameter gradients are summed
    over the batch. Returns ``(Gradient, input_grad)``.
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (xb.shape[0], params.spec.n_out):
        raise InvalidInput(f"output_grad shape {g.shape} does not match output")
    grad, dx = backward_trace(params, forward_trace(params, xb), g)
    return Gradient(grad), (dx[0] if single else dx)


@dataclass
class Gradient:
    values: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def adam_step(
    params: ParamVector,
    grad: Gradient | np.ndarray,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamVector, AdamState]:
    """One Adam descent step. Inputs are not modified."""
    g = grad.values if isinstance(grad, Gradient) else np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape or state.m.shape != g.shape:
        raise InvalidInput("gradient / optimizer state length mismatch")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NonFiniteGradient(
            f"{bad.size} non-finite gradient entries (first at index {bad[0]}); update rejected"
        )
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return ParamVector(new, params.spec), AdamState(m, v, t)


# -- on-disk snapshots --------------------------------------------------------

def dumps(params: ParamVector) -> bytes:
    sizes = ",".join(str(n) for n in params.spec.layer_sizes)
    header = f"mlp {sizes} {params.spec.output_activation}\n".encode("ascii")
    return header + params.values.astype("<f8").tobytes()


def loads(blob: bytes) -> ParamVector:
    newline = blob.index(b"\n")
    tag, sizes, act = blob[:newline].decode("ascii").split()
    if tag != "mlp":
        raise InvalidInput(f"not a parameter blob (header tag {tag!r})")
    spec = MlpSpec(tuple(int(s) for s in sizes.split(",")), output_activation=act)
    values = np.frombuffer(blob[newline + 1:], dtype="<f8").astype(np.float64)
    return ParamVector(values, spec)


def save(params: ParamVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(params))


def load(path) -> ParamVector:
    with open(path, "rb") as fh:
        return loads(fh.read())
