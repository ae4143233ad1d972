"""Dense feature extractor -> quantum layer -> dense classifier, trained with Adam."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuits import QuantumLayerSpec, evaluate_batch, sample_expectations
from .errors import ConfigError, NumericalError
from .grad import vjp_batch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_CLAMP = 1e-12


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.features) != len(self.labels):
            raise ValueError("feature/label count mismatch")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("weights and bias disagree on output width")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    loss: str = "cross_entropy"
    seed: int = 42

    def __post_init__(self):
        if self.loss not in ("cross_entropy", "mse"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be positive, patience non-negative")

    @property
    def task(self) -> str:
        return "classification" if self.loss == "cross_entropy" else "regression"


@dataclass
class HybridModel:
    extractor: list[DenseLayer]
    quantum: QuantumLayerSpec | None
    quantum_params: np.ndarray
    head: list[DenseLayer]

    def __post_init__(self):
        width = self.extractor[-1].weights.shape[0] if self.extractor else None
        if self.quantum is not None:
            if width != self.quantum.n_inputs:
                raise ValueError(f"extractor emits {width} features, quantum layer takes {self.quantum.n_inputs}")
            if self.quantum_params.shape != (self.quantum.n_params,):
                raise ValueError("quantum parameter vector has the wrong length")
            width = self.quantum.n_qubits
        if self.head[0].weights.shape[1] != width:
            raise ValueError("head input width does not match the upstream output")
        for chain in (self.extractor, self.head):
            for a, b in zip(chain, chain[1:]):
                if b.weights.shape[1] != a.weights.shape[0]:
                    raise ValueError("dense layer widths do not chain")

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layers in (("extractor", self.extractor), ("head", self.head)):
            for i, layer in enumerate(layers):
                out[f"{prefix}.{i}.weights"] = layer.weights
                out[f"{prefix}.{i}.bias"] = layer.bias
        if self.quantum is not None:
            out["quantum"] = self.quantum_params
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for prefix, layers in (("extractor", self.extractor), ("head", self.head)):
            for i, layer in enumerate(layers):
                layer.weights = params[f"{prefix}.{i}.weights"]
                layer.bias = params[f"{prefix}.{i}.bias"]
        if self.quantum is not None:
            self.quantum_params = params["quantum"]

    def n_trainable(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    @property
    def input_dim(self) -> int:
        return self.extractor[0].weights.shape[1] if self.extractor else self.head[0].weights.shape[1]


# ---------------------------------------------------------------------------
# initialisation


def xavier_bound(n_in: int, n_out: int) -> float:
    return math.sqrt(6.0 / (n_in + n_out))


def _dense(rng, n_in, n_out, activation) -> DenseLayer:
    bound = xavier_bound(n_in, n_out)
    return DenseLayer(rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out), activation)


def quantum_width(quantum: QuantumLayerSpec | None, n_qubits: int) -> int:
    """Number of features the extractor must emit."""
    return n_qubits if quantum is None else quantum.n_inputs


def init_model(
    input_dim: int,
    n_outputs: int,
    quantum: QuantumLayerSpec | None,
    seed: int,
    *,
    n_qubits: int | None = None,
    extractor_hidden: tuple[int, ...] = (32,),
    head_hidden: int = 128,
) -> HybridModel:
    """Xavier-uniform dense layers, zero biases, quantum angles ~ U(0, 2 pi).

    Without a quantum layer the extractor emits ``n_qubits`` features straight
    into the head so the classical baseline keeps the same bottleneck width.
    """
    if quantum is None and n_qubits is None:
        raise ValueError("classical baseline needs n_qubits for its bottleneck width")
    n_qubits = quantum.n_qubits if quantum is not None else n_qubits
    rng = np.random.default_rng(seed)
    widths = [input_dim, *extractor_hidden, quantum_width(quantum, n_qubits)]
    extractor = [
        _dense(rng, a, b, "relu" if i < len(widths) - 2 else "none") for i, (a, b) in enumerate(zip(widths, widths[1:]))
    ]
    q_params = rng.uniform(0.0, 2.0 * np.pi, size=quantum.n_params) if quantum is not None else np.zeros(0)
    head = [_dense(rng, n_qubits, head_hidden, "relu"), _dense(rng, head_hidden, n_outputs, "none")]
    return HybridModel(extractor, quantum, q_params, head)


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardResult:
    outputs: np.ndarray
    success_prob: np.ndarray | None
    degenerate: int = 0
    cache: dict = field(default_factory=dict, repr=False)


def _dense_forward(layers, x, acts):
    for layer in layers:
        acts.append(x)
        x = x @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            x = np.maximum(x, 0.0)
    return x


def _dense_backward(layers, acts, grad, grads, prefix):
    """Backprop ``grad`` (dL/d output) through ``layers``; returns dL/d input."""
    out = None
    for i in reversed(range(len(layers))):
        layer = layers[i]
        x_in = acts[i]
        pre = x_in @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            grad = grad * (pre > 0)
        grads[f"{prefix}.{i}.weights"] = grad.T @ x_in
        grads[f"{prefix}.{i}.bias"] = grad.sum(axis=0)
        grad = grad @ layer.weights
        out = grad
    return out


def forward(model: HybridModel, features: np.ndarray, *, shots: int | None = None, rng=None) -> ForwardResult:
    """Batch forward pass; ``shots`` switches the quantum layer to sampled estimates."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    ext_acts: list = []
    z = _dense_forward(model.extractor, x, ext_acts)
    success = None
    degenerate = 0
    if model.quantum is not None:
        q_in = z
        if shots:
            z, success = sample_expectations(model.quantum, model.quantum_params, q_in, shots, rng or np.random.default_rng())
        else:
            z, success = evaluate_batch(model.quantum, model.quantum_params, q_in, strict=False)
        degenerate = int(np.sum(success < 1e-12))
        if degenerate:
            log.warning("%d sample(s) hit degenerate post-selection; using zero expectations", degenerate)
    head_acts: list = []
    out = _dense_forward(model.head, z, head_acts)
    return ForwardResult(out, success, degenerate, {"ext": ext_acts, "head": head_acts})


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_value(outputs: np.ndarray, labels: np.ndarray, loss_kind: str) -> tuple[float, np.ndarray]:
    """Mean-reduced loss and its gradient with respect to the outputs."""
    b = outputs.shape[0]
    if loss_kind == "cross_entropy":
        logp = log_softmax(outputs)
        labels = np.asarray(labels, dtype=np.int64)
        picked = logp[np.arange(b), labels]
        floor = math.log(LOG_CLAMP)
        loss = -np.mean(np.maximum(picked, floor))
        grad = np.exp(logp)
        grad[np.arange(b), labels] -= 1.0
        # the clamp flattens the loss on confident mispredictions
        grad[picked < floor] = 0.0
        return float(loss), grad / b
    if loss_kind == "mse":
        target = np.asarray(labels, dtype=np.float64).reshape(outputs.shape)
        diff = outputs - target
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    raise ConfigError(f"unknown loss {loss_kind!r}")


def loss_and_grad(model: HybridModel, features, labels, loss_kind: str = "cross_entropy"):
    """Return ``(loss, grads, forward_result)``; grads keyed like ``model.parameters()``."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    ext_acts: list = []
    z = _dense_forward(model.extractor, x, ext_acts)
    q_in = z
    success = None
    degenerate = 0
    if model.quantum is not None:
        # probe the quantum outputs first; the backward sweep below reuses them
        z, success = evaluate_batch(model.quantum, model.quantum_params, q_in, strict=False)
        degenerate = int(np.sum(success < 1e-12))
    head_acts: list = []
    out = _dense_forward(model.head, z, head_acts)
    loss, g_out = loss_value(out, labels, loss_kind)
    if not math.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}; {int(np.sum(~np.isfinite(out)))} of {out.size} outputs non-finite")
    grads: dict[str, np.ndarray] = {}
    g_z = _dense_backward(model.head, head_acts, g_out, grads, "head")
    if model.quantum is not None:
        _, _, g_theta, g_qin, bad = vjp_batch(model.quantum, model.quantum_params, q_in, g_z)
        if bad.any():
            log.warning("%d sample(s) hit degenerate post-selection; zero gradient substituted", int(bad.sum()))
        grads["quantum"] = g_theta
        g_z = g_qin
    if model.extractor:
        _dense_backward(model.extractor, ext_acts, g_z, grads, "extractor")
    return loss, grads, ForwardResult(out, success, degenerate)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(state: AdamState, params: dict, grads: dict, config: TrainConfig) -> dict:
    """One bias-corrected Adam update; returns new arrays and advances ``state``."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return out


# ---------------------------------------------------------------------------
# training


def evaluate(model: HybridModel, data: Dataset, loss_kind: str, batch_size: int = 256, *, shots=None, rng=None) -> dict:
    """Loss, task metric, and mean acceptance probability over ``data``."""
    outs, succ = [], []
    for start in range(0, len(data), batch_size):
        res = forward(model, data.features[start : start + batch_size], shots=shots, rng=rng)
        outs.append(res.outputs)
        if res.success_prob is not None:
            succ.append(res.success_prob)
    outputs = np.concatenate(outs)
    loss, _ = loss_value(outputs, data.labels, loss_kind)
    result = {"loss": loss, "mean_success_prob": float(np.mean(np.concatenate(succ))) if succ else None}
    if loss_kind == "cross_entropy":
        result["accuracy"] = float(np.mean(outputs.argmax(axis=1) == data.labels) * 100.0)
        result["metric"] = result["accuracy"]
    else:
        result["mae"] = float(np.mean(np.abs(outputs.reshape(-1) - data.labels.reshape(-1))))
        result["metric"] = result["mae"]
    return result


class EarlyStopping:
    """Track the best validation metric; signal a stop after ``patience`` idle epochs."""

    def __init__(self, patience: int, mode: str = "max"):
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.best_epoch = -1
        self.idle = 0

    def improved(self, value: float) -> bool:
        if self.best is None:
            return True
        return value > self.best if self.mode == "max" else value < self.best

    def update(self, value: float, epoch: int) -> bool:
        """Record ``value``; return True when training should stop."""
        if self.improved(value):
            self.best, self.best_epoch, self.idle = value, epoch, 0
            return False
        self.idle += 1
        return self.idle > self.patience


def _digest(order: np.ndarray) -> str:
    return hashlib.sha256(order.astype(np.int64).tobytes()).hexdigest()[:16]


def train(model: HybridModel, train_set: Dataset, val_set: Dataset, config: TrainConfig):
    """Minibatch Adam with early stopping; returns ``(best_model, history)``.

    Classification monitors validation accuracy, regression validation loss.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    model = copy.deepcopy(model)
    rng = np.random.default_rng(config.seed)
    opt = AdamState()
    monitor_acc = config.loss == "cross_entropy"
    stopper = EarlyStopping(config.patience, "max" if monitor_acc else "min")
    best = copy.deepcopy(model)
    history: list[dict] = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_set))
        losses, weights, succ = [], [], []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads, res = loss_and_grad(model, train_set.features[idx], train_set.labels[idx], config.loss)
            model.set_parameters(adam_step(opt, model.parameters(), grads, config))
            losses.append(loss)
            weights.append(len(idx))
            if res.success_prob is not None:
                succ.append(res.success_prob)
        val = evaluate(model, val_set, config.loss)
        monitored = val["accuracy"] if monitor_acc else val["loss"]
        improved = stopper.improved(monitored)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.average(losses, weights=weights)),
                "val_loss": val["loss"],
                "val_metric": val["metric"],
                "train_success_prob": float(np.mean(np.concatenate(succ))) if succ else None,
                "batch_order": _digest(order),
            }
        )
        if improved:
            best = copy.deepcopy(model)
        if stopper.update(monitored, epoch):
            break
    return best, {"epochs": history, "best_epoch": stopper.best_epoch, "best_val": stopper.best}


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: HybridModel) -> dict:
    return {
        "extractor": [_layer_dict(l) for l in model.extractor],
        "quantum": model.quantum.to_dict() if model.quantum is not None else None,
        "quantum_params": model.quantum_params.tolist(),
        "head": [_layer_dict(l) for l in model.head],
    }


def _layer_dict(layer: DenseLayer) -> dict:
    return {"weights": layer.weights.tolist(), "bias": layer.bias.tolist(), "activation": layer.activation}


def model_from_dict(d: dict) -> HybridModel:
    def layers(items):
        return [DenseLayer(np.array(i["weights"], dtype=np.float64), np.array(i["bias"], dtype=np.float64), i["activation"]) for i in items]

    quantum = QuantumLayerSpec.from_dict(d["quantum"]) if d.get("quantum") else None
    return HybridModel(layers(d["extractor"]), quantum, np.array(d["quantum_params"], dtype=np.float64), layers(d["head"]))


def save_checkpoint(path, model: HybridModel, *, seed: int, epoch: int, initial: HybridModel | None = None, extra: dict | None = None) -> None:
    doc = {
        "format": "lcuqml-checkpoint",
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "epoch": epoch,
        "model": model_to_dict(model),
        "initial_model": model_to_dict(initial) if initial is not None else None,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lcuqml-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    if doc.get("version", 0) > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {doc['version']} is newer than supported {CHECKPOINT_VERSION}")
    doc["model"] = model_from_dict(doc["model"])
    if doc.get("initial_model"):
        doc["initial_model"] = model_from_dict(doc["initial_model"])
    return doc

