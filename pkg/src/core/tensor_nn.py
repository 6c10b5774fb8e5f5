"""
Dense-network math for the learners
Forward/backward passes, Adam, Polyak averaging, clipped Gaussian noise and
Gumbel-Softmax relaxation, all in float64 numpy
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.models.network import (
    AdamState, DenseNet, ForwardCache, OutputActivation, ParamGrads,
)
from src.models.types import OutputKind
from src.utils.rng import SeededRng
from src.utils.validation import (
    DimensionMismatchError, StaleCacheError, TopologyMismatchError,
    ValidationError, ValidationUtils,
)

GUMBEL_U_MIN = 1e-12
GUMBEL_U_MAX = 1.0 - 1e-12


def init_dense_net(layer_sizes: Sequence[int], rng: Optional[SeededRng],
                   output_activation: Optional[OutputActivation] = None,
                   zero: bool = False) -> DenseNet:
    """
    New network with weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    With zero=True (or no rng) all parameters start at 0.
    """
    sizes = [int(s) for s in layer_sizes]
    if any(s < 1 for s in sizes):
        raise ValidationError(f"layer sizes must be positive: {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero or rng is None:
            weights.append(np.zeros((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
    return DenseNet(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        output_activation=output_activation or OutputActivation.identity(),
    )


def sigmoid_scaled(z: np.ndarray, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    lo + (hi - lo) * sigmoid(z), strictly inside (lo, hi).
    Returns (output, d output / dz).
    """
    s = expit(z)
    out = lo + (hi - lo) * s
    out = np.clip(out, np.nextafter(lo, hi), np.nextafter(hi, lo))
    return out, (hi - lo) * s * (1.0 - s)


def _output_transform(net: DenseNet, z: np.ndarray) -> np.ndarray:
    act = net.output_activation
    if act.kind is OutputKind.SIGMOID_SCALED:
        return sigmoid_scaled(z, act.lo, act.hi)[0]
    return z


def _output_derivative(net: DenseNet, z: np.ndarray) -> np.ndarray:
    act = net.output_activation
    if act.kind is OutputKind.SIGMOID_SCALED:
        return sigmoid_scaled(z, act.lo, act.hi)[1]
    return np.ones_like(z)


def forward(net: DenseNet, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on one input vector or a batch of row vectors.
    Returns the output (same rank as the input) and the cache backward needs.
    """
    x = np.asarray(inputs, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise DimensionMismatchError("network input", net.input_size, x.shape[-1] if x.ndim else 0)

    pre, post = [], []
    h = x
    last = net.n_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if k < last else _output_transform(net, z)
        pre.append(z)
        post.append(h)

    cache = ForwardCache(
        net_uid=net.uid, version=net.version, inputs=x,
        pre_activations=pre, post_activations=post, squeezed=squeezed,
    )
    out = h[0] if squeezed else h
    return out, cache


def backward(net: DenseNet, cache: ForwardCache,
             upstream_grad: np.ndarray) -> Tuple[ParamGrads, np.ndarray]:
    """
    Gradients of sum(upstream_grad * output) with respect to the parameters
    (summed over batch rows) and to the input.
    ReLU uses subgradient 0 at exactly 0.
    """
    if cache.net_uid != net.uid or cache.version != net.version:
        raise StaleCacheError(
            f"cache from net {cache.net_uid} v{cache.version} used with net {net.uid} v{net.version}"
        )
    if len(cache.pre_activations) != net.n_layers:
        raise StaleCacheError("cache layer count does not match the network")

    g = np.asarray(upstream_grad, dtype=np.float64)
    if cache.squeezed and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.post_activations[-1].shape:
        raise DimensionMismatchError("upstream gradient", cache.post_activations[-1].shape, g.shape)

    n = net.n_layers
    grad_w: List[np.ndarray] = [None] * n
    grad_b: List[np.ndarray] = [None] * n

    delta = g * _output_derivative(net, cache.pre_activations[-1])
    for k in range(n - 1, -1, -1):
        h_prev = cache.inputs if k == 0 else cache.post_activations[k - 1]
        grad_w[k] = delta.T @ h_prev
        grad_b[k] = delta.sum(axis=0)
        dh = delta @ net.weights[k]
        if k > 0:
            delta = dh * (cache.pre_activations[k - 1] > 0.0)
    input_grad = dh[0] if cache.squeezed else dh
    return ParamGrads(grad_w, grad_b), input_grad


def adam_update(params: List[np.ndarray], grads: List[np.ndarray],
                state: AdamState, lr: float) -> AdamState:
    """
    Standard bias-corrected Adam step applied in place to params.
    Nothing is written unless every gradient and every updated parameter is finite.
    """
    ValidationUtils.check_positive(lr, "learning rate")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatchError("adam parameter list", len(params), len(grads))
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise DimensionMismatchError(f"gradient {i}", params[i].shape, g.shape)
        ValidationUtils.check_finite(g, "gradient", param_index=i, step=state.t + 1)

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    staged = []
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (p, g, m, v) in enumerate(zip(params, grads, state.m, state.v)):
            m_new = b1 * m + (1.0 - b1) * g
            v_new = b2 * v + (1.0 - b2) * (g * g)
            p_new = p - lr * (m_new / correction1) / (np.sqrt(v_new / correction2) + state.eps_adam)
            ValidationUtils.check_finite(p_new, "updated parameter", param_index=i, step=t)
            staged.append((m_new, v_new, p_new))

    for p, m, v, (m_new, v_new, p_new) in zip(params, state.m, state.v, staged):
        np.copyto(m, m_new)
        np.copyto(v, v_new)
        np.copyto(p, p_new)
    state.t = t
    return state


def adam_step(net: DenseNet, grads: ParamGrads, state: AdamState,
              lr: float) -> Tuple[DenseNet, AdamState]:
    """One Adam descent step on a network"""
    adam_update(net.parameters(), grads.arrays(), state, lr)
    net.version += 1
    return net, state


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> DenseNet:
    """Polyak averaging: target <- tau * source + (1 - tau) * target"""
    if not target.same_topology(source):
        raise TopologyMismatchError(source.layer_sizes, target.layer_sizes)
    if not 0.0 < tau <= 1.0:
        raise ValidationError(f"tau must be in (0, 1], got {tau}")
    for t_param, s_param in zip(target.parameters(), source.parameters()):
        if tau == 1.0:
            np.copyto(t_param, s_param)
        else:
            t_param *= (1.0 - tau)
            t_param += tau * s_param
    target.version += 1
    return target


def clipped_gaussian(sigma: float, c: float, rng: SeededRng,
                     size: Union[int, Tuple[int, ...]] = 1) -> np.ndarray:
    """clip(N(0, sigma), -c, c) with the given shape"""
    if sigma < 0:
        raise ValidationError(f"sigma must be non-negative, got {sigma}")
    if c < 0:
        raise ValidationError(f"clip c must be non-negative, got {c}")
    if sigma == 0.0 or c == 0.0:
        return np.zeros(size)
    return np.clip(rng.normal(0.0, sigma, size), -c, c)


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax along the last axis"""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, upstream: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Gradient w.r.t. logits of sum(upstream * softmax(logits / T))"""
    inner = np.sum(upstream * probs, axis=-1, keepdims=True)
    return probs * (upstream - inner) / temperature


def gumbel_noise(shape, rng: SeededRng) -> np.ndarray:
    """Standard Gumbel samples -log(-log(u)), u clamped away from 0 and 1"""
    u = np.clip(rng.uniform(0.0, 1.0, shape), GUMBEL_U_MIN, GUMBEL_U_MAX)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: np.ndarray, temperature: float, rng: SeededRng) -> np.ndarray:
    """
    Relaxed one-hot sample softmax((logits + g) / T).
    The backward path is softmax_backward on the returned sample.
    """
    if not temperature > 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    ValidationUtils.check_finite(logits, "gumbel_softmax logits")
    return softmax(logits + gumbel_noise(logits.shape, rng), temperature)
