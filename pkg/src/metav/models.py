"""Feed-forward models, training loops, and the model file format."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .rng import derive_seed, make_rng
from .textio import FormatError, dumps, loads

TASK_KINDS = ("classifier", "regressor", "generator")
ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax")
MODEL_FORMAT = "metav-model/1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_width: int = 0
    out_width: int = 0

    def to_dict(self) -> dict:
        if self.kind == "dense":
            return {"kind": "dense", "in": self.in_width, "out": self.out_width}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        if d["kind"] == "dense":
            return cls("dense", int(d["in"]), int(d["out"]))
        return cls(d["kind"])


def dense(in_width: int, out_width: int) -> LayerSpec:
    return LayerSpec("dense", in_width, out_width)


def mlp_spec(widths: Sequence[int], head: str | None = None, hidden: str = "relu") -> list[LayerSpec]:
    """Dense chain through ``widths`` with ``hidden`` between layers and an optional head."""
    spec = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        spec.append(dense(a, b))
        if i < len(widths) - 2:
            spec.append(LayerSpec(hidden))
    if head is not None:
        spec.append(LayerSpec(head))
    return spec


def validate_spec(spec: Sequence[LayerSpec]) -> tuple[int, int]:
    """Check width chaining and return ``(d_in, d_out)``."""
    width = None
    d_in = None
    for i, layer in enumerate(spec):
        if layer.kind == "dense":
            if layer.in_width < 1 or layer.out_width < 1:
                raise ValueError(f"layer {i}: dense widths must be positive")
            if width is not None and layer.in_width != width:
                raise ValueError(f"layer {i}: in-width {layer.in_width} does not chain from width {width}")
            if d_in is None:
                d_in = layer.in_width
            width = layer.out_width
        elif layer.kind not in ACTIVATIONS:
            raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
        elif width is None:
            raise ValueError(f"layer {i}: activation before any dense layer")
    if d_in is None:
        raise ValueError("spec has no dense layer")
    return d_in, width


def param_count(spec: Sequence[LayerSpec]) -> int:
    return sum(l.in_width * l.out_width + l.out_width for l in spec if l.kind == "dense")


def _np_activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return x * (x > 0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return T.softmax_array(x)


_GRAPH_ACT = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid, "softmax": T.softmax}


@dataclass
class SequentialModel:
    layers: list[LayerSpec]
    params: list[list[np.ndarray]]  # [W (in, out), b (out,)] per dense layer
    task_kind: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        self.d_in, self.d_out = validate_spec(self.layers)
        n_dense = sum(1 for l in self.layers if l.kind == "dense")
        if len(self.params) != n_dense:
            raise ValueError(f"expected {n_dense} parameter pairs, got {len(self.params)}")

    @property
    def dense_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "dense"]

    def copy(self) -> "SequentialModel":
        return SequentialModel(list(self.layers), [[w.copy(), b.copy()] for w, b in self.params],
                               self.task_kind, copy.deepcopy(self.provenance))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in self.params for a in pair])

    @property
    def head(self) -> str | None:
        last = self.layers[-1]
        return last.kind if last.kind in ("softmax", "sigmoid") else None

    def predict(self, batch) -> np.ndarray:
        """Pure forward pass on a ``[B, d_in]`` batch."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise T.ShapeError(f"predict: expected batch of width {self.d_in}, got shape {x.shape}")
        k = 0
        for layer in self.layers:
            if layer.kind == "dense":
                w, b = self.params[k]
                x = x @ w + b
                k += 1
            else:
                x = _np_activation(layer.kind, x)
        return x

    def graph(self, x: T.Tensor, ptensors=None, logits: bool = False) -> T.Tensor:
        """Differentiable forward pass.

        ``ptensors`` optionally supplies Tensor wrappers for the parameters
        (as returned by :meth:`param_tensors`); otherwise the parameters
        enter as constants. With ``logits=True`` a final softmax/sigmoid head
        is skipped.
        """
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"model: expected input width {self.d_in}, got {x.shape}")
        if ptensors is None:
            ptensors = [[T.Tensor(w), T.Tensor(b)] for w, b in self.params]
        layers = self.layers[:-1] if logits and self.head else self.layers
        k = 0
        for layer in layers:
            if layer.kind == "dense":
                w, b = ptensors[k]
                x = T.add(T.matmul(x, w), b)
                k += 1
            else:
                x = _GRAPH_ACT[layer.kind](x)
        return x

    def param_tensors(self, trainable: Sequence[int] | None = None) -> list[list[T.Tensor]]:
        """Wrap parameters as leaves; only dense-layer indices in ``trainable`` get gradients."""
        idx = range(len(self.params)) if trainable is None else set(trainable)
        return [[T.Tensor(w, requires_grad=i in idx), T.Tensor(b, requires_grad=i in idx)]
                for i, (w, b) in enumerate(self.params)]


def init_model(spec: Sequence[LayerSpec], seed: int, task_kind: str = "classifier",
               provenance: dict | None = None) -> SequentialModel:
    """Kaiming-uniform weights scaled by fan-in, zero biases."""
    validate_spec(spec)
    params = []
    k = 0
    for layer in spec:
        if layer.kind != "dense":
            continue
        rng = make_rng(seed, "init", k)
        bound = np.sqrt(6.0 / layer.in_width)
        params.append([rng.uniform(-bound, bound, size=(layer.in_width, layer.out_width)),
                       np.zeros(layer.out_width)])
        k += 1
    prov = {"seed": int(seed), "recipe": "init"}
    prov.update(provenance or {})
    return SequentialModel(list(spec), params, task_kind, prov)


def reinit_layer(model: SequentialModel, index: int, seed: int) -> SequentialModel:
    """Copy of ``model`` with dense layer ``index`` freshly initialized."""
    out = model.copy()
    w, b = out.params[index]
    rng = make_rng(seed, "reinit", index)
    bound = np.sqrt(6.0 / w.shape[0])
    out.params[index] = [rng.uniform(-bound, bound, size=w.shape), np.zeros_like(b)]
    return out


# --- losses ----------------------------------------------------------------

def cross_entropy(logits: T.Tensor, onehot: np.ndarray) -> T.Tensor:
    logp = T.log(T.softmax(logits))
    per_row = T.reduce_sum(T.mul(logp, T.Tensor(onehot)), axis=1)
    return T.scale(T.mean(per_row), -1.0)


def task_loss(model: SequentialModel, x: np.ndarray, y: np.ndarray, loss_kind: str) -> float:
    """Loss of ``model`` on ``(x, y)`` without building a graph."""
    out = model.predict(x)
    if loss_kind == "cross-entropy":
        return float(-np.mean(np.sum(y * np.log(np.maximum(out, T.LOG_FLOOR)), axis=1)))
    return float(np.mean((out - y) ** 2))


def _check_finite(loss: float, where: str):
    if not np.isfinite(loss):
        raise T.NonFiniteError(f"{where}: non-finite loss")


def train_supervised(model: SequentialModel, dataset, epochs: int, lr: float,
                     loss_kind: str, seed: int, batch_size: int = 32,
                     trainable: Sequence[int] | None = None, temperature: float = 1.0):
    """Mini-batch Adam training; returns ``(trained copy, per-epoch loss trace)``.

    ``trainable`` restricts updates to the listed dense-layer indices, which
    is how last-layer fine-tuning freezes the rest of the network. For
    cross-entropy the labels may be soft, and logits are divided by
    ``temperature`` before the softmax.
    """
    x = np.asarray(dataset.features, dtype=np.float64)
    y = np.asarray(dataset.labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise T.ShapeError(f"train: feature width {x.shape} does not match d_in={model.d_in}")
    if y.ndim != 2 or y.shape[1] != model.d_out or len(y) != len(x):
        raise T.ShapeError(f"train: label shape {y.shape} does not match d_out={model.d_out}")
    if loss_kind not in ("cross-entropy", "mse"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    out = model.copy()
    if epochs <= 0:
        return out, []
    layers = list(range(len(out.params))) if trainable is None else sorted(trainable)
    arrays = [a for i in layers for a in out.params[i]]
    opt = T.Adam(arrays, lr=lr)
    rng = make_rng(seed, "train-batches")
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            pts = out.param_tensors(layers)
            xb = T.Tensor(x[idx])
            if loss_kind == "cross-entropy":
                logits = out.graph(xb, pts, logits=True)
                if temperature != 1.0:
                    logits = T.scale(logits, 1.0 / temperature)
                loss = cross_entropy(logits, y[idx])
            else:
                loss = T.mse(out.graph(xb, pts), T.Tensor(y[idx]))
            leaves = [t for i in layers for t in pts[i]]
            grads = T.backward(loss, leaves)
            _check_finite(loss.data[0], f"train epoch {epoch}")
            opt.step(arrays, [grads[t] for t in leaves])
            total += loss.data[0] * len(idx)
        trace.append(total / len(x))
    return out, trace


def sample_latent(n: int, d: int, seed: int, *tags) -> np.ndarray:
    return make_rng(seed, "latent", *tags).uniform(-1.0, 1.0, size=(n, d))


def train_gan(gen_spec, disc_spec, dataset, epochs: int, lr: float, seed: int,
              batch_size: int = 64, generator: SequentialModel | None = None,
              trainable: Sequence[int] | None = None):
    """Alternating non-saturating GAN updates.

    Latents are uniform on ``[-1, 1]^latent``. Passing ``generator`` resumes
    training from it against a freshly initialized discriminator; only the
    dense layers in ``trainable`` move. Returns ``(generator, discriminator)``.
    """
    data = np.asarray(dataset.features, dtype=np.float64)
    if generator is None:
        generator = init_model(gen_spec, seed, "generator", {"recipe": "gan"})
    gen = generator.copy()
    disc = init_model(disc_spec, derive_seed(seed, "disc"), "classifier", {"recipe": "gan-disc"})
    if gen.d_out != data.shape[1]:
        raise T.ShapeError(f"gan: generator output {gen.d_out} != data dim {data.shape[1]}")
    if disc.d_in != data.shape[1] or disc.d_out != 1:
        raise T.ShapeError(f"gan: discriminator must map {data.shape[1]} -> 1")
    if epochs <= 0:
        return gen, disc
    g_layers = list(range(len(gen.params))) if trainable is None else sorted(trainable)
    g_arrays = [a for i in g_layers for a in gen.params[i]]
    d_arrays = [a for pair in disc.params for a in pair]
    g_opt = T.Adam(g_arrays, lr=lr, beta1=0.5)
    d_opt = T.Adam(d_arrays, lr=lr, beta1=0.5)
    rng = make_rng(seed, "gan-batches")
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            real = data[order[start:start + batch_size]]
            z = sample_latent(len(real), gen.d_in, seed, "gan", step)
            step += 1
            fake = gen.predict(z)
            dp = disc.param_tensors()
            d_loss = T.add(T.bce_logits(disc.graph(T.Tensor(real), dp, logits=True), 1.0),
                           T.bce_logits(disc.graph(T.Tensor(fake), dp, logits=True), 0.0))
            leaves = [t for pair in dp for t in pair]
            grads = T.backward(d_loss, leaves)
            d_opt.step(d_arrays, [grads[t] for t in leaves])

            gp = gen.param_tensors(g_layers)
            g_out = gen.graph(T.Tensor(z), gp)
            g_loss = T.bce_logits(disc.graph(g_out, logits=True), 1.0)
            leaves = [t for i in g_layers for t in gp[i]]
            grads = T.backward(g_loss, leaves)
            _check_finite(g_loss.data[0] + d_loss.data[0], f"gan epoch {epoch}")
            g_opt.step(g_arrays, [grads[t] for t in leaves])
    return gen, disc


def predict(model: SequentialModel, batch) -> np.ndarray:
    return model.predict(batch)


# --- file format -----------------------------------------------------------

def model_to_dict(model: SequentialModel) -> dict:
    return {
        "version": MODEL_FORMAT,
        "task_kind": model.task_kind,
        "layers": [l.to_dict() for l in model.layers],
        "params": [[w.ravel(), b] for w, b in model.params],
        "provenance": model.provenance,
    }


def model_from_dict(d: dict) -> SequentialModel:
    if not isinstance(d, dict):
        raise FormatError("model file: top level must be an object")
    if d.get("version") != MODEL_FORMAT:
        raise FormatError(f"model file: unsupported version {d.get('version')!r}")
    try:
        layers = [LayerSpec.from_dict(l) for l in d["layers"]]
        dl = [l for l in layers if l.kind == "dense"]
        if len(d["params"]) != len(dl):
            raise FormatError("model file: parameter arrays do not match layers")
        params = []
        for l, (w, b) in zip(dl, d["params"]):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.size != l.in_width * l.out_width or b.size != l.out_width:
                raise FormatError(f"model file: array length mismatch for dense {l.in_width}x{l.out_width}")
            params.append([w.reshape(l.in_width, l.out_width), b])
        return SequentialModel(layers, params, d["task_kind"], dict(d.get("provenance", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"model file: {exc}") from None


def save_model(model: SequentialModel, path) -> None:
    Path(path).write_text(dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> SequentialModel:
    return model_from_dict(loads(Path(path).read_text(encoding="utf-8"), f"model file {path}"))
