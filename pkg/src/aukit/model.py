"""Desk-scale dual-head network over precomputed features.

A small multilayer perceptron (affine + ReLU hidden layers) feeds two linear
heads: a 7-way expression head and an 18-way AU head. Gradients are written
out by hand so they can be verified against finite differences, and the
AdamW-style optimizer keeps training bit-reproducible.
"""

import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .domain import ContractError, NUM_AUS, NUM_EXPRESSIONS, NumericFailure

CHECKPOINT_MAGIC = b"AUKITCKPT"
CHECKPOINT_VERSION = 1

DEFAULT_FEATURE_DIM = 1024
DEFAULT_HIDDEN = (128,)


@dataclass
class ModelParams:
    """All trainable arrays plus the layout they were built with."""

    feature_dim: int
    hidden: tuple
    hidden_weights: list  # [out x in] per hidden layer
    hidden_biases: list
    expr_weight: np.ndarray  # 7 x F'
    expr_bias: np.ndarray
    au_weight: np.ndarray  # 18 x F'
    au_bias: np.ndarray
    seed: int = 0

    @property
    def embedding_dim(self):
        return self.hidden[-1] if self.hidden else self.feature_dim

    def as_dict(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            out[f"hidden.{i}.w"] = w
            out[f"hidden.{i}.b"] = b
        out["expr.w"] = self.expr_weight
        out["expr.b"] = self.expr_bias
        out["au.w"] = self.au_weight
        out["au.b"] = self.au_bias
        return out


@dataclass
class OptimizerState:
    """Moment accumulators and hyperparameters for the adaptive update."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _glorot(rng, shape):
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(seed, feature_dim=DEFAULT_FEATURE_DIM, hidden=DEFAULT_HIDDEN):
    """Seeded uniform fan-based init; biases start at zero."""
    if feature_dim < 1:
        raise ContractError("feature_dim must be >= 1")
    hidden = tuple(int(h) for h in hidden)
    if any(h < 1 for h in hidden):
        raise ContractError("hidden sizes must be >= 1")
    rng = np.random.default_rng(seed)
    widths = [feature_dim] + list(hidden)
    hidden_weights = []
    hidden_biases = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        hidden_weights.append(_glorot(rng, (fan_out, fan_in)))
        hidden_biases.append(np.zeros(fan_out))
    last = widths[-1]
    return ModelParams(
        feature_dim=feature_dim,
        hidden=hidden,
        hidden_weights=hidden_weights,
        hidden_biases=hidden_biases,
        expr_weight=_glorot(rng, (NUM_EXPRESSIONS, last)),
        expr_bias=np.zeros(NUM_EXPRESSIONS),
        au_weight=_glorot(rng, (NUM_AUS, last)),
        au_bias=np.zeros(NUM_AUS),
        seed=seed,
    )


def forward(params, features, return_hidden=False):
    """Run the shared pathway and both heads.

    Returns (expr_logits Nx7, au_logits Nx18, embeddings NxF'); with
    return_hidden=True also returns the per-layer activations for backprop.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.feature_dim:
        raise ContractError(
            f"features must be Nx{params.feature_dim}, got {features.shape}"
        )
    activations = [features]
    h = features
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        h = np.maximum(h @ w.T + b, 0.0)
        activations.append(h)
    expr_logits = h @ params.expr_weight.T + params.expr_bias
    au_logits = h @ params.au_weight.T + params.au_bias
    if return_hidden:
        return expr_logits, au_logits, h, activations
    return expr_logits, au_logits, h


def backward(params, features, d_expr, d_au, activations=None):
    """Exact gradients of the combined loss wrt every parameter.

    d_expr and d_au are the loss gradients at the two heads; both flow back
    into the shared hidden pathway. Returns a name -> array dict matching
    params.as_dict().
    """
    features = np.asarray(features, dtype=np.float64)
    d_expr = np.asarray(d_expr, dtype=np.float64)
    d_au = np.asarray(d_au, dtype=np.float64)
    n = features.shape[0]
    if d_expr.shape != (n, NUM_EXPRESSIONS) or d_au.shape != (n, NUM_AUS):
        raise ContractError("head gradient shapes inconsistent with the batch")
    if activations is None:
        _, _, _, activations = forward(params, features, return_hidden=True)

    h = activations[-1]
    grads = {
        "expr.w": d_expr.T @ h,
        "expr.b": d_expr.sum(axis=0),
        "au.w": d_au.T @ h,
        "au.b": d_au.sum(axis=0),
    }
    dh = d_expr @ params.expr_weight + d_au @ params.au_weight
    for i in reversed(range(len(params.hidden_weights))):
        dz = dh * (activations[i + 1] > 0.0)
        grads[f"hidden.{i}.w"] = dz.T @ activations[i]
        grads[f"hidden.{i}.b"] = dz.sum(axis=0)
        dh = dz @ params.hidden_weights[i]
    return grads


def optimizer_step(params, grads, state):
    """One bias-corrected adaptive update with decoupled weight decay (in place)."""
    tensors = params.as_dict()
    if set(grads) != set(tensors):
        raise ContractError("gradient keys do not match parameter keys")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    lr = state.learning_rate
    for name, p in tensors.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= lr * state.weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def _params_arrays(params):
    arrays = dict(params.as_dict())
    return arrays


def _serialize_arrays(arrays):
    # deliberately not np.savez: zip entries carry timestamps, which would
    # break bit-identical checkpoints across reruns
    out = io.BytesIO()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        out.write(len(encoded).to_bytes(4, "little"))
        out.write(encoded)
        out.write(arr.ndim.to_bytes(1, "little"))
        for dim in arr.shape:
            out.write(int(dim).to_bytes(8, "little"))
        data = arr.tobytes(order="C")
        out.write(len(data).to_bytes(8, "little"))
        out.write(data)
    return out.getvalue()


def _deserialize_arrays(payload):
    arrays = {}
    view = memoryview(payload)
    offset = 0
    try:
        while offset < len(view):
            name_len = int.from_bytes(view[offset:offset + 4], "little")
            offset += 4
            name = bytes(view[offset:offset + name_len]).decode("utf-8")
            offset += name_len
            ndim = view[offset]
            offset += 1
            shape = []
            for _ in range(ndim):
                shape.append(int.from_bytes(view[offset:offset + 8], "little"))
                offset += 8
            data_len = int.from_bytes(view[offset:offset + 8], "little")
            offset += 8
            if offset + data_len > len(view):
                raise ContractError("corrupt checkpoint: truncated array")
            arrays[name] = np.frombuffer(
                view[offset:offset + data_len], dtype=np.float64
            ).reshape(shape).copy()
            offset += data_len
    except (IndexError, ValueError) as exc:
        raise ContractError(f"corrupt checkpoint: {exc}") from exc
    return arrays


def save_checkpoint(params, state, path):
    """Versioned binary checkpoint with a SHA-256 integrity trailer."""
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "feature_dim": params.feature_dim,
        "hidden": list(params.hidden),
        "optimizer": None,
    }
    arrays = _params_arrays(params)
    if state is not None:
        header["optimizer"] = {
            "learning_rate": state.learning_rate,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "weight_decay": state.weight_decay,
            "step": state.step,
        }
        for name, arr in state.m.items():
            arrays[f"opt.m.{name}"] = arr
        for name, arr in state.v.items():
            arrays[f"opt.v.{name}"] = arr

    payload = _serialize_arrays(arrays)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (
        CHECKPOINT_MAGIC
        + len(header_bytes).to_bytes(8, "little")
        + header_bytes
        + len(payload).to_bytes(8, "little")
        + payload
    )
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path):
    """Inverse of save_checkpoint; rejects truncated or tampered files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 + 32:
        raise ContractError("corrupt checkpoint: truncated")
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ContractError("corrupt checkpoint: bad magic")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContractError("corrupt checkpoint: checksum mismatch")
    offset = len(CHECKPOINT_MAGIC)
    header_len = int.from_bytes(body[offset:offset + 8], "little")
    offset += 8
    header = json.loads(body[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    if header.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"checkpoint version mismatch: {header.get('version')}")
    payload_len = int.from_bytes(body[offset:offset + 8], "little")
    offset += 8
    payload = body[offset:offset + payload_len]
    if len(payload) != payload_len:
        raise ContractError("corrupt checkpoint: truncated payload")
    arrays = _deserialize_arrays(payload)

    hidden = tuple(header["hidden"])
    params = ModelParams(
        feature_dim=header["feature_dim"],
        hidden=hidden,
        hidden_weights=[arrays[f"hidden.{i}.w"] for i in range(len(hidden))],
        hidden_biases=[arrays[f"hidden.{i}.b"] for i in range(len(hidden))],
        expr_weight=arrays["expr.w"],
        expr_bias=arrays["expr.b"],
        au_weight=arrays["au.w"],
        au_bias=arrays["au.b"],
        seed=header["seed"],
    )
    state = None
    if header.get("optimizer") is not None:
        opt = header["optimizer"]
        state = OptimizerState(
            learning_rate=opt["learning_rate"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            eps=opt["eps"],
            weight_decay=opt["weight_decay"],
            step=opt["step"],
            m={
                k[len("opt.m."):]: v for k, v in arrays.items()
                if k.startswith("opt.m.")
            },
            v={
                k[len("opt.v."):]: v for k, v in arrays.items()
                if k.startswith("opt.v.")
            },
        )
    return params, state


def save_features(features, path):
    """Binary matrix container: magic, N, F, float64 payload (CSV if *.csv)."""
    features = np.asarray(features, dtype=np.float64)
    if str(path).endswith(".csv"):
        np.savetxt(path, features, delimiter=",")
        return
    n, f = features.shape
    with open(path, "wb") as fh:
        fh.write(b"AUKITFEAT1")
        fh.write(n.to_bytes(8, "little"))
        fh.write(f.to_bytes(8, "little"))
        fh.write(b"f8")
        fh.write(features.tobytes(order="C"))


def load_features(path):
    if str(path).endswith(".csv"):
        data = np.loadtxt(path, delimiter=",", dtype=np.float64)
        return np.atleast_2d(data)
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"AUKITFEAT1"):
        raise ContractError("corrupt feature file: bad magic")
    n = int.from_bytes(blob[10:18], "little")
    f = int.from_bytes(blob[18:26], "little")
    if blob[26:28] != b"f8":
        raise ContractError("corrupt feature file: unknown dtype tag")
    expected = n * f * 8
    payload = blob[28:]
    if len(payload) != expected:
        raise ContractError("corrupt feature file: truncated payload")
    return np.frombuffer(payload, dtype=np.float64).reshape(n, f).copy()
