"""Dense feed-forward networks with exact backprop, RMSProp and a gradient checker.

A :class:`Network` is a flat, ordered list of dense layers.  Each layer carries a
``stream`` tag: 0 for the shared trunk, 1 and 2 for the two parallel streams of
a two-stream head.  Single-head networks only use stream 0.

Head layouts
------------
``single``
    trunk only; the last layer emits one value per action.
``dueling``
    trunk -> stream 1 (state value, width 1) and stream 2 (advantages).
    The network output is ``Q = V + A - mean(A)``.
``actor_critic``
    trunk -> stream 1 (policy logits) and stream 2 (state value, width 1).
    The network output is the concatenation ``[logits..., V]``.

Every public function accepts a single feature vector or a 2-D batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class Head(str, Enum):
    SINGLE = "single"
    DUELING = "dueling"
    ACTOR_CRITIC = "actor_critic"


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"


class NetworkError(ValueError):
    """Raised for malformed layer tables."""


class DimensionError(ValueError):
    """Raised when an input or gradient has the wrong shape."""


class NonFiniteError(FloatingPointError):
    """Raised when an optimizer step would introduce NaN or Inf."""


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: Activation = Activation.RELU
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.input_width < 1 or self.output_width < 1:
            raise NetworkError(f"layer widths must be >= 1, got {self}")
        if self.stream not in (0, 1, 2):
            raise NetworkError(f"stream tag must be 0, 1 or 2, got {self.stream}")


@dataclass
class Network:
    specs: tuple[LayerSpec, ...]
    head: Head
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]

    def __post_init__(self):
        self.head = Head(self.head)
        self.specs = tuple(self.specs)
        validate_specs(self.specs, self.head)
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            if w.shape != (spec.output_width, spec.input_width) or b.shape != (spec.output_width,):
                raise DimensionError(f"parameter shapes do not match {spec}")

    @property
    def input_width(self) -> int:
        return self.specs[0].input_width

    @property
    def n_actions(self) -> int:
        if self.head is Head.SINGLE:
            return self.specs[-1].output_width
        if self.head is Head.DUELING:
            return _stream_specs(self.specs, 2)[-1].output_width
        return _stream_specs(self.specs, 1)[-1].output_width

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        """Parameters in layer-major order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self, dtype=None) -> "Network":
        dtype = dtype or self.dtype
        return Network(
            self.specs,
            self.head,
            [w.astype(dtype, copy=True) for w in self.weights],
            [b.astype(dtype, copy=True) for b in self.biases],
        )

    def load_(self, other: "Network") -> None:
        """Copy ``other``'s parameters into this network in place."""
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def equal(self, other: "Network") -> bool:
        return (
            self.specs == other.specs
            and self.head == other.head
            and all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


def _stream_specs(specs: Sequence[LayerSpec], stream: int) -> list[LayerSpec]:
    return [s for s in specs if s.stream == stream]


def validate_specs(specs: Sequence[LayerSpec], head: Head) -> None:
    head = Head(head)
    if not specs:
        raise NetworkError("a network needs at least one layer")
    tags = [s.stream for s in specs]
    if tags != sorted(tags):
        raise NetworkError("layers must be ordered trunk, stream 1, stream 2")
    trunk = _stream_specs(specs, 0)
    if not trunk:
        raise NetworkError("the trunk must contain at least one layer")

    def chain(layers, width_in):
        for spec in layers:
            if spec.input_width != width_in:
                raise NetworkError(
                    f"layer expects width {spec.input_width} but receives {width_in}"
                )
            width_in = spec.output_width
        if layers[-1].activation is not Activation.IDENTITY:
            raise NetworkError("the final layer of every output path must be identity")

    if head is Head.SINGLE:
        if any(t != 0 for t in tags):
            raise NetworkError("single-head networks have no streams")
        chain(trunk, trunk[0].input_width)
        return

    # Two-stream heads: the trunk is a hidden stack, each stream ends in a linear output.
    width = trunk[0].input_width
    for spec in trunk:
        if spec.input_width != width:
            raise NetworkError(f"layer expects width {spec.input_width} but receives {width}")
        width = spec.output_width
    s1, s2 = _stream_specs(specs, 1), _stream_specs(specs, 2)
    if not s1 or not s2:
        raise NetworkError(f"{head.value} head needs two non-empty streams")
    chain(s1, width)
    chain(s2, width)
    value_stream = s1 if head is Head.DUELING else s2
    action_stream = s2 if head is Head.DUELING else s1
    if value_stream[-1].output_width != 1:
        raise NetworkError("the value stream must end in a single unit")
    if action_stream[-1].output_width < 1:
        raise NetworkError("the action stream needs at least one output")


def mlp_specs(n_in: int, hidden: Sequence[int], n_out: int) -> list[LayerSpec]:
    """Relu stack with a linear output layer (``hidden`` may be empty)."""
    widths = [n_in, *hidden]
    specs = [LayerSpec(a, b, Activation.RELU) for a, b in zip(widths[:-1], widths[1:])]
    specs.append(LayerSpec(widths[-1], n_out, Activation.IDENTITY))
    return specs


def two_stream_specs(
    n_in: int,
    n_actions: int,
    head: Head,
    shared: Sequence[int] = (128,),
    stream: Sequence[int] = (512,),
) -> list[LayerSpec]:
    """Shared relu trunk followed by two relu streams with linear outputs."""
    head = Head(head)
    if head is Head.SINGLE:
        raise NetworkError("two_stream_specs needs a dueling or actor_critic head")
    widths = [n_in, *shared]
    specs = [LayerSpec(a, b, Activation.RELU) for a, b in zip(widths[:-1], widths[1:])]
    outs = (1, n_actions) if head is Head.DUELING else (n_actions, 1)
    for tag, n_out in zip((1, 2), outs):
        w = [widths[-1], *stream]
        specs += [LayerSpec(a, b, Activation.RELU, tag) for a, b in zip(w[:-1], w[1:])]
        specs.append(LayerSpec(w[-1], n_out, Activation.IDENTITY, tag))
    return specs


def init_network(specs: Sequence[LayerSpec], head: Head | str = Head.SINGLE, seed: int = 0,
                 dtype=np.float32) -> Network:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    specs = tuple(specs)
    validate_specs(specs, Head(head))
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        bound = np.sqrt(6.0 / spec.input_width)
        w = rng.uniform(-bound, bound, size=(spec.output_width, spec.input_width))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(spec.output_width, dtype=dtype))
    return Network(specs, Head(head), weights, biases)


@dataclass
class Activations:
    """Everything ``backward`` needs, plus the decoded head outputs.

    ``inputs[i]`` is what layer ``i`` consumed and ``pre[i]`` its affine output.
    ``output`` is the flat head output: Q for single/dueling heads, and
    ``[logits..., V]`` for the actor-critic head.
    """

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    output: np.ndarray
    batched: bool
    value: np.ndarray | None = None
    advantage: np.ndarray | None = None
    logits: np.ndarray | None = None

    @property
    def q(self) -> np.ndarray:
        return self.output


def _relu(z):
    return np.maximum(z, 0)


def _run_path(net: Network, idx: Sequence[int], x: np.ndarray, inputs, pre) -> np.ndarray:
    for i in idx:
        inputs[i] = x
        z = x @ net.weights[i].T + net.biases[i]
        pre[i] = z
        x = _relu(z) if net.specs[i].activation is Activation.RELU else z
    return x


def dueling_combine(value: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """Batched ``Q = V + A - mean(A)``; ``value`` has shape (B,), ``advantage`` (B, A)."""
    return value[:, None] + advantage - advantage.mean(axis=1, keepdims=True)


def forward(net: Network, x) -> Activations:
    x = np.asarray(x, dtype=net.dtype)
    batched = x.ndim == 2
    if not batched:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise DimensionError(f"expected input width {net.input_width}, got shape {x.shape}")
    n = len(net.specs)
    inputs: list = [None] * n
    pre: list = [None] * n
    groups = [[i for i, s in enumerate(net.specs) if s.stream == t] for t in (0, 1, 2)]
    h = _run_path(net, groups[0], x, inputs, pre)

    if net.head is Head.SINGLE:
        out = h
        acts = Activations(inputs, pre, out, batched)
    else:
        o1 = _run_path(net, groups[1], h, inputs, pre)
        o2 = _run_path(net, groups[2], h, inputs, pre)
        if net.head is Head.DUELING:
            value, adv = o1[:, 0], o2
            out = dueling_combine(value, adv)
            acts = Activations(inputs, pre, out, batched, value=value, advantage=adv)
        else:
            logits, value = o1, o2[:, 0]
            out = np.concatenate([logits, o2], axis=1)
            acts = Activations(inputs, pre, out, batched, value=value, logits=logits)

    if not batched:
        acts.output = acts.output[0]
        for name in ("value", "advantage", "logits"):
            v = getattr(acts, name)
            if v is not None:
                setattr(acts, name, v[0])
    return acts


def predict(net: Network, x) -> np.ndarray:
    return forward(net, x).output


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.params())


def _back_path(net, idx, grad, acts, gw, gb):
    for i in reversed(idx):
        if net.specs[i].activation is Activation.RELU:
            grad = grad * (acts.pre[i] > 0)
        gw[i] = grad.T @ acts.inputs[i]
        gb[i] = grad.sum(axis=0)
        grad = grad @ net.weights[i]
    return grad


def backward(net: Network, acts: Activations, output_gradient) -> Gradients:
    """Reverse-mode gradients of a scalar loss given d(loss)/d(output).

    For batched activations the gradients are summed over the batch.
    """
    g = np.asarray(output_gradient, dtype=net.dtype)
    if not acts.batched:
        g = g[None, :]
    expected = acts.output.shape if acts.batched else (1,) + acts.output.shape
    if g.shape != expected:
        raise DimensionError(f"output gradient shape {g.shape} != {expected}")
    n = len(net.specs)
    gw: list = [None] * n
    gb: list = [None] * n
    groups = [[i for i, s in enumerate(net.specs) if s.stream == t] for t in (0, 1, 2)]

    if net.head is Head.SINGLE:
        _back_path(net, groups[0], g, acts, gw, gb)
        return Gradients(gw, gb)

    if net.head is Head.DUELING:
        g1 = g.sum(axis=1, keepdims=True)  # dV
        g2 = g - g.mean(axis=1, keepdims=True)  # dA
    else:
        g1, g2 = g[:, :-1], g[:, -1:]
    dh = _back_path(net, groups[1], g1, acts, gw, gb)
    dh = dh + _back_path(net, groups[2], g2, acts, gw, gb)
    _back_path(net, groups[0], dh, acts, gw, gb)
    return Gradients(gw, gb)


@dataclass
class OptState:
    """RMSProp squared-gradient accumulators, one per parameter array."""

    accumulators: list[np.ndarray]
    decay: float = 0.95
    eps: float = 1e-6

    @classmethod
    def for_network(cls, net: Network, decay: float = 0.95, eps: float = 1e-6) -> "OptState":
        return cls([np.zeros_like(p) for p in net.params()], decay, eps)

    def copy(self) -> "OptState":
        return OptState([a.copy() for a in self.accumulators], self.decay, self.eps)


def rmsprop_step(net: Network, grads: Gradients, opt: OptState, lr: float,
                 inplace: bool = False) -> tuple[Network, OptState]:
    """``acc <- decay*acc + (1-decay)*g^2``; ``p <- p - lr*g/sqrt(acc+eps)``.

    Raises NonFiniteError (leaving everything untouched) if the gradients or
    the resulting parameters are not finite.
    """
    gparams = grads.params()
    if len(gparams) != len(opt.accumulators):
        raise DimensionError("gradient structure does not match optimizer state")
    for g, a in zip(gparams, opt.accumulators):
        if g.shape != a.shape:
            raise DimensionError(f"gradient shape {g.shape} != {a.shape}")
    if not grads.all_finite():
        raise NonFiniteError("non-finite gradient, step rejected")

    dt = net.dtype
    new_acc, new_params = [], []
    for p, g, a in zip(net.params(), gparams, opt.accumulators):
        g = g.astype(dt, copy=False)
        acc = opt.decay * a + (1.0 - opt.decay) * g * g
        step = lr * g / np.sqrt(acc + opt.eps)
        new_acc.append(acc.astype(dt, copy=False))
        new_params.append((p - step).astype(dt, copy=False))
    if not all(np.isfinite(p).all() for p in new_params):
        raise NonFiniteError("optimizer step produced non-finite parameters")

    if inplace:
        for dst, src in zip(net.params(), new_params):
            dst[...] = src
        for dst, src in zip(opt.accumulators, new_acc):
            dst[...] = src
        return net, opt
    out = Network(net.specs, net.head, new_params[0::2], new_params[1::2])
    return out, OptState(new_acc, opt.decay, opt.eps)


# --- gradient checking -------------------------------------------------------

def _check_objective(net: Network, acts: Activations, action: int) -> tuple[np.ndarray, np.ndarray]:
    """Terms of the scalar probed by :func:`gradient_check`, and its output cotangent.

    single / dueling: ``Q[action]``.  actor_critic: ``log pi(action) + V``,
    returned as the terms ``z_a, -max z, -log1p(...), V`` whose sum is the
    objective.  Differencing term by term keeps large terms that a
    perturbation leaves unchanged from swamping the small ones that move.
    """
    out = acts.output
    g = np.zeros_like(out)
    if net.head is Head.ACTOR_CRITIC:
        logits = out[:-1]
        top = int(np.argmax(logits))
        e = np.exp(logits - logits[top])
        lse = np.log1p(e.sum() - e[top])
        probs = e / (1.0 + (e.sum() - e[top]))
        g[:-1] = -probs
        g[action] += 1.0
        g[-1] = 1.0
        return np.array([logits[action], -logits[top], -lse, out[-1]]), g
    g[action] = 1.0
    return np.array([out[action]]), g


GRADCHECK_FLOOR = 1e-8


def _relu_pattern(net: Network, acts: Activations) -> list[np.ndarray]:
    return [z > 0 for z, s in zip(acts.pre, net.specs) if s.activation is Activation.RELU]


def gradient_check(net: Network, x, action_index: int, h: float = 1e-3) -> float:
    """Max relative error between backprop and central finite differences.

    Both sides run on a float64 copy.  The numeric derivative combines central
    differences at ``h`` and ``h/2`` (one Richardson step) so smooth heads are
    not limited by the O(h^2) truncation term.  If a perturbation flips a relu
    on or off, the quotient would straddle a kink; for that entry the step is
    shrunk until the activation pattern is the same on both sides.
    """
    shadow = net.copy(np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= action_index < shadow.n_actions:
        raise IndexError(f"action index {action_index} out of range")
    acts = forward(shadow, x)
    _, cot = _check_objective(shadow, acts, action_index)
    analytic = backward(shadow, acts, cot).params()
    base = _relu_pattern(shadow, acts)

    def probe(p, k, value):
        p[k] = value
        a = forward(shadow, x)
        stable = all(np.array_equal(u, v) for u, v in zip(_relu_pattern(shadow, a), base))
        return _check_objective(shadow, a, action_index)[0], stable

    worst = 0.0
    for p, ga in zip(shadow.params(), analytic):
        flat, gflat = p.reshape(-1), ga.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            step = h
            for _ in range(8):
                quotients, ok = [], True
                for s in (step, step / 2):
                    fp, sp = probe(flat, k, orig + s)
                    fm, sm = probe(flat, k, orig - s)
                    ok = ok and sp and sm
                    quotients.append(float(np.sum(fp - fm)) / (2 * s))
                flat[k] = orig
                if ok:
                    break
                step *= 0.05
            numeric = (4 * quotients[1] - quotients[0]) / 3
            a = gflat[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), GRADCHECK_FLOOR)
            worst = max(worst, err)
    return worst


def random_small_network(rng: np.random.Generator, head: Head) -> tuple[Network, np.ndarray, int]:
    """A random network (widths <= 16, depth <= 3), input vector and action index."""
    head = Head(head)
    n_in = int(rng.integers(1, 17))
    n_actions = int(rng.integers(1 if head is Head.SINGLE else 2, 17))
    seed = int(rng.integers(2**63))
    if head is Head.SINGLE:
        hidden = [int(w) for w in rng.integers(1, 17, size=int(rng.integers(0, 3)))]
        specs = mlp_specs(n_in, hidden, n_actions)
    else:
        shared = [int(w) for w in rng.integers(1, 17, size=int(rng.integers(1, 3)))]
        stream = [int(w) for w in rng.integers(1, 17, size=int(rng.integers(0, 2)))]
        specs = two_stream_specs(n_in, n_actions, head, shared, stream)
    net = init_network(specs, head, seed)
    for b in net.biases:  # nonzero biases exercise the bias gradients
        b[...] = rng.normal(0.0, 0.5, size=b.shape)
    x = rng.normal(size=n_in)
    return net, x, int(rng.integers(n_actions))


def gradient_check_suite(seed: int = 0, per_head: int = 34) -> dict[str, float]:
    """Worst :func:`gradient_check` error per head over random small networks."""
    rng = np.random.default_rng(seed)
    out = {}
    for head in Head:
        worst = 0.0
        for _ in range(per_head):
            net, x, action = random_small_network(rng, head)
            worst = max(worst, gradient_check(net, x, action))
        out[head.value] = worst
    return out


def param_hash(net: Network) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in net.params():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


__all__ = [
    "Activation",
    "Activations",
    "DimensionError",
    "Gradients",
    "Head",
    "LayerSpec",
    "Network",
    "NetworkError",
    "NonFiniteError",
    "OptState",
    "backward",
    "dueling_combine",
    "forward",
    "gradient_check",
    "gradient_check_suite",
    "init_network",
    "mlp_specs",
    "param_hash",
    "predict",
    "rmsprop_step",
    "two_stream_specs",
]
