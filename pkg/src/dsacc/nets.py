"""Small ReLU MLPs with hand-written backprop, Adam, and target copies.

Parameters live in one flat float64 vector laid out layer by layer as
``W_0, b_0, W_1, b_1, ...`` where ``W_k`` has shape ``(fan_in, fan_out)``.
The per-layer arrays are views into that vector, so optimizers and target
updates can work on the flat vector directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, UsageError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_layers: tuple = (512, 512)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise UsageError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation.lower() != "relu":
            raise UsageError(f"unsupported activation {self.activation!r}")

    @property
    def dims(self) -> tuple:
        return (int(self.input_dim), *self.hidden_layers, int(self.output_dim))

    def param_count(self) -> int:
        d = self.dims
        return sum((d[i] + 1) * d[i + 1] for i in range(len(d) - 1))

    def to_dict(self) -> dict:
        return {
            "input_dim": int(self.input_dim),
            "output_dim": int(self.output_dim),
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=d["input_dim"],
            output_dim=d["output_dim"],
            hidden_layers=tuple(d["hidden_layers"]),
            activation=d.get("activation", "relu"),
            seed=d.get("seed", 0),
        )


class Network:
    """Feedforward ReLU network with a flat parameter vector.

    Args:
        spec: layer sizes and init seed.
        params: optional flat parameter vector; if omitted the network is
            initialised with He-uniform weights and zero biases.
    """

    def __init__(self, spec: NetworkSpec, params=None):
        self.spec = spec
        n = spec.param_count()
        if params is None:
            self.params = self._init_params(spec)
        else:
            params = np.array(params, dtype=np.float64).reshape(-1)
            if params.size != n:
                raise UsageError(f"expected {n} parameters, got {params.size}")
            self.params = params
        self._bind_views()

    @staticmethod
    def _init_params(spec: NetworkSpec) -> np.ndarray:
        rng = np.random.default_rng(spec.seed)
        d = spec.dims
        chunks = []
        for fan_in, fan_out in zip(d[:-1], d[1:]):
            bound = np.sqrt(6.0 / fan_in)
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    def _bind_views(self):
        d = self.spec.dims
        self._layout = []
        pos = 0
        for fan_in, fan_out in zip(d[:-1], d[1:]):
            self._layout.append((pos, pos + fan_in * fan_out, pos + fan_in * fan_out + fan_out,
                                 (fan_in, fan_out)))
            pos += (fan_in + 1) * fan_out
        self.weights, self.biases = self._grad_views(self.params)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Network":
        return Network(self.spec, self.params.copy())

    def set_params(self, params):
        """Overwrite parameters in place (views stay valid)."""
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        if params.shape != self.params.shape:
            raise UsageError("parameter length mismatch")
        self.params[:] = params

    def _as_batch(self, obs):
        x = np.asarray(obs, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise UsageError(
                f"observation shape {np.shape(obs)} does not match input_dim {self.spec.input_dim}"
            )
        return x, single

    def forward(self, obs, return_cache: bool = False, check: bool = True):
        """Evaluate the network on one observation or a batch of rows.

        Returns the outputs, and with ``return_cache`` also the list of layer
        inputs needed by :meth:`backward`. ``check=False`` skips the
        finiteness scan for inputs already validated upstream.
        """
        x, single = self._as_batch(obs)
        if check and not np.all(np.isfinite(x)):
            raise UsageError("observation contains non-finite values")
        acts = [x]
        h = x
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if return_cache else out

    def backward(self, obs, output_grad, cache=None) -> np.ndarray:
        """Gradient of ``sum(output * output_grad)`` with respect to the parameters."""
        x, single = self._as_batch(obs)
        g = np.asarray(output_grad, dtype=np.float64)
        if single:
            g = g[None, :] if g.ndim == 1 else g
        if g.shape != (x.shape[0], self.spec.output_dim):
            raise UsageError(f"output_grad shape {np.shape(output_grad)} does not match outputs")
        if cache is None:
            _, cache = self.forward(x, return_cache=True)
        elif len(cache) != self.n_layers + 1 or cache[0].shape != x.shape:
            raise UsageError("cache does not belong to this observation batch")
        grad = np.empty_like(self.params)
        gw, gb = self._grad_views(grad)
        for k in range(self.n_layers - 1, -1, -1):
            gw[k][...] = cache[k].T @ g
            gb[k][...] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.weights[k].T) * (cache[k] > 0)
        return grad

    def _grad_views(self, flat):
        gw = [flat[a:b].reshape(shape) for a, b, _, shape in self._layout]
        gb = [flat[b:c] for _, b, c, _ in self._layout]
        return gw, gb

    def __call__(self, obs):
        return self.forward(obs)


@dataclass
class Adam:
    """Bias-corrected Adam state for one parameter vector."""

    size: int
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")
        self.m = np.zeros(self.size) if self.m is None else np.asarray(self.m, dtype=np.float64)
        self.v = np.zeros(self.size) if self.v is None else np.asarray(self.v, dtype=np.float64)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise UsageError("moment accumulators must match the parameter length")

    def step(self, params: np.ndarray, grad) -> None:
        """Apply one update to ``params`` in place."""
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != params.shape or params.shape != (self.size,):
            raise UsageError("gradient length does not match the parameters")
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient, update refused", {"step": self.step_count})
        t = self.step_count + 1
        m = self.beta1 * self.m + (1 - self.beta1) * grad
        v = self.beta2 * self.v + (1 - self.beta2) * (grad * grad)
        # lr * m_hat / (sqrt(v_hat) + eps), bias corrections folded into scalars
        denom = np.sqrt(v)
        denom *= 1.0 / np.sqrt(1 - self.beta2**t)
        denom += self.eps
        step = m / denom
        step *= self.learning_rate / (1 - self.beta1**t)
        new = params - step
        if not np.all(np.isfinite(new)):
            raise NumericalError("update produced non-finite parameters", {"step": self.step_count})
        params[:] = new
        self.m, self.v, self.step_count = m, v, t

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Adam":
        return cls(**d)


def adam_step(net: Network, opt: Adam, grad) -> None:
    opt.step(net.params, grad)


def target_update(online: Network, target: Network, tau: float) -> Network:
    """Polyak update ``target <- tau * online + (1 - tau) * target`` in place."""
    if online.spec.dims != target.spec.dims:
        raise UsageError("online and target networks have different architectures")
    if not 0.0 <= tau <= 1.0:
        raise UsageError(f"tau must be in [0, 1], got {tau}")
    if tau == 1.0:
        target.params[:] = online.params
    elif tau > 0.0:
        target.params[:] = tau * online.params + (1.0 - tau) * target.params
    return target


def save_checkpoint(path, networks: dict, optimizers: dict | None = None, extra: dict | None = None):
    """Write networks (and optional optimizer state) to a JSON file.

    Floats are serialised with ``repr`` precision, so loading is exact.
    """
    record = {
        "format_version": CHECKPOINT_VERSION,
        "networks": {
            name: {"spec": net.spec.to_dict(), "params": net.params.tolist()}
            for name, net in networks.items()
        },
        "optimizers": {name: opt.to_dict() for name, opt in (optimizers or {}).items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record))
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(networks, optimizers, extra)``."""
    record = json.loads(Path(path).read_text())
    version = record.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint format_version {version!r}")
    nets = {
        name: Network(NetworkSpec.from_dict(d["spec"]), d["params"])
        for name, d in record["networks"].items()
    }
    opts = {name: Adam.from_dict(d) for name, d in record.get("optimizers", {}).items()}
    return nets, opts, record.get("extra", {})
