"""Minimal feedforward network with exact reverse-mode gradients.

Networks are plain data: per-layer weight matrices and bias vectors in
float64, ReLU hidden activations, and either an identity output or a
bounded `tau * tanh(z / tau)` output.  Forward passes cache every
intermediate so the backward pass can return exact gradients with respect
to all parameters and to the inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

IDENTITY = "identity"
SCALED_TANH = "scaled_tanh"


@dataclass
class Mlp:
    """Fully-connected net: dims[0] inputs, ReLU hidden layers, dims[-1] outputs."""

    dims: tuple
    weights: list  # weights[l] has shape (dims[l], dims[l+1])
    biases: list   # biases[l] has shape (dims[l+1],)
    output_activation: str = IDENTITY
    tau: float = 0.0  # output bound, only used with SCALED_TANH

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by mlp_backward."""

    inputs: np.ndarray
    pre_activations: list = field(default_factory=list)
    activations: list = field(default_factory=list)  # post-activation, per layer


def mlp_init(dims, rng, output_activation: str = IDENTITY, tau: float = 0.0) -> Mlp:
    """Create a network with uniform Glorot weights and zero biases.

    `dims` must list at least input, one hidden, and output widths.  With
    `scaled_tanh` every output is confined to [-tau, tau].
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3 or any(d <= 0 for d in dims):
        raise ConfigError(f"layer dims need >= 3 positive entries, got {dims}")
    if output_activation not in (IDENTITY, SCALED_TANH):
        raise ConfigError(f"unknown output activation {output_activation!r}")
    if output_activation == SCALED_TANH and not tau > 0:
        raise ConfigError("scaled_tanh output requires tau > 0")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims=dims, weights=weights, biases=biases,
               output_activation=output_activation, tau=float(tau))


def mlp_forward(net: Mlp, inputs: np.ndarray):
    """Run a batch through the net. Returns (outputs, cache)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.dims[0]:
        raise ShapeError(f"inputs {x.shape} incompatible with input width {net.dims[0]}")
    cache = ForwardCache(inputs=x)
    a = x
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        if l < last:
            a = np.maximum(z, 0.0)
        elif net.output_activation == IDENTITY:
            a = z
        else:
            a = net.tau * np.tanh(z / net.tau)
        cache.pre_activations.append(z)
        cache.activations.append(a)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite network outputs")
    return a, cache


def mlp_backward(net: Mlp, cache: ForwardCache, output_grad: np.ndarray):
    """Exact gradients of <output_grad, outputs> w.r.t. parameters and inputs.

    Returns (param_grads, input_grads) where param_grads is a list of
    (dW, db) per layer.  The ReLU subgradient at exactly 0 is taken as 0.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    out = cache.activations[-1]
    if g.shape != out.shape:
        raise ShapeError(f"output_grad {g.shape} does not match outputs {out.shape}")
    if net.output_activation == SCALED_TANH:
        dz = g * (1.0 - (out / net.tau) ** 2)
    else:
        dz = g
    param_grads = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        a_prev = cache.activations[l - 1] if l > 0 else cache.inputs
        param_grads[l] = (a_prev.T @ dz, dz.sum(axis=0))
        da_prev = dz @ net.weights[l].T
        if l > 0:
            dz = da_prev * (cache.pre_activations[l - 1] > 0.0)
        else:
            input_grads = da_prev
    return param_grads, input_grads


def params_to_vector(net: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def vector_to_params(net: Mlp, vec: np.ndarray) -> None:
    """Write a flat parameter vector back into the net, in place."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != net.n_params:
        raise ShapeError(f"vector length {vec.size} != parameter count {net.n_params}")
    k = 0
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        net.weights[l] = vec[k:k + w.size].reshape(w.shape).copy()
        k += w.size
        net.biases[l] = vec[k:k + b.size].copy()
        k += b.size


def grads_to_vector(param_grads) -> np.ndarray:
    parts = []
    for dw, db in param_grads:
        parts.append(dw.ravel())
        parts.append(db)
    return np.concatenate(parts)


def gradient_check(net: Mlp, loss_fn, inputs, h: float = 1e-5,
                   rng=None, max_checks: int = 200) -> float:
    """Compare analytic parameter gradients to central finite differences.

    `loss_fn(outputs) -> (loss, dloss_doutputs)` defines the objective.
    Checks a random subsample of parameters (all of them when the net is
    small) and returns the largest relative error observed.
    """
    if not h > 0:
        raise ConfigError("finite-difference step h must be positive")
    outputs, cache = mlp_forward(net, inputs)
    _, dout = loss_fn(outputs)
    analytic = grads_to_vector(mlp_backward(net, cache, dout)[0])

    base = params_to_vector(net)
    n = base.size
    if n <= max_checks:
        idx = np.arange(n)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        idx = rng.choice(n, size=max_checks, replace=False)

    probe = Mlp(dims=net.dims, weights=list(net.weights), biases=list(net.biases),
                output_activation=net.output_activation, tau=net.tau)
    max_err = 0.0
    for i in idx:
        for sign in (+1.0, -1.0):
            vec = base.copy()
            vec[i] += sign * h
            vector_to_params(probe, vec)
            out, _ = mlp_forward(probe, inputs)
            loss, _ = loss_fn(out)
            if sign > 0:
                f_plus = loss
            else:
                f_minus = loss
        numeric = (f_plus - f_minus) / (2.0 * h)
        diff = abs(analytic[i] - numeric)
        if diff > 1e-10:  # absolute floor: both effectively zero
            max_err = max(max_err, diff / max(abs(analytic[i]), abs(numeric), 1e-8))
    return max_err
