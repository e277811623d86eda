"""Joint optimization of the adaptive fingerprint and the meta-verifier.

The fingerprint is ``N`` points ``x_i = tanh(w_i)`` in the open box
``(-1, 1)^d_in``. A suspect model is summarized by its outputs on those
points, concatenated row by row, and the meta-verifier (one ReLU hidden
layer, softmax head) maps that vector to ``(p_minus, p_plus)``.

Each construction step samples one negative, the target, and one positive,
and ascends::

    log p_plus(M+) + log p_plus(F) + log p_minus(M-)

with separate Adam optimizers for the fingerprint variables and the
verifier weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .forge import EnsembleSplit
from .models import SequentialModel, init_model, mlp_spec, model_from_dict, model_to_dict
from .rng import derive_seed, make_rng
from .textio import FormatError, dumps, fmt_float, loads

PAIR_FORMAT = "metav-pair/1"
STD_FLOOR = 1e-8


@dataclass
class AdaptiveFingerprint:
    w: np.ndarray  # (N, d_in), unconstrained

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def d_in(self) -> int:
        return self.w.shape[1]

    @property
    def x(self) -> np.ndarray:
        return np.tanh(self.w)


def init_fingerprint(n: int, d_in: int, seed: int, scale: float = 0.5) -> AdaptiveFingerprint:
    """Draw ``w`` i.i.d. from Normal(0, scale^2)."""
    if n < 1 or d_in < 1:
        raise ValueError("fingerprint needs N >= 1 and d_in >= 1")
    return AdaptiveFingerprint(make_rng(seed, "fingerprint-init").normal(0.0, scale, size=(n, d_in)))


def init_verifier(input_width: int, seed: int, hidden: int = 100) -> SequentialModel:
    return init_model(mlp_spec([input_width, hidden, 2], "softmax"), seed, "classifier",
                      {"recipe": "meta-verifier"})


@dataclass
class FingerprintPair:
    fingerprint: AdaptiveFingerprint
    verifier: SequentialModel
    d_out: int
    meta: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)
    standardize: tuple | None = None  # (mean, std) per output dim

    @property
    def n(self) -> int:
        return self.fingerprint.n

    @property
    def d_in(self) -> int:
        return self.fingerprint.d_in

    @property
    def inputs(self) -> np.ndarray:
        return self.fingerprint.x

    def score_outputs(self, outputs) -> tuple[float, float]:
        return verifier_score(self.verifier, outputs, self.standardize)

    def to_dict(self) -> dict:
        d = {
            "version": PAIR_FORMAT,
            "n": self.n,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "w": self.fingerprint.w.ravel(),
            "verifier": model_to_dict(self.verifier),
            "meta": self.meta,
            "standardize": None if self.standardize is None else
            {"mean": self.standardize[0], "std": self.standardize[1]},
            "loss_trace": ",".join(fmt_float(v) for v in self.loss_trace),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FingerprintPair":
        if not isinstance(d, dict) or d.get("version") != PAIR_FORMAT:
            raise FormatError(f"pair file: unsupported version {d.get('version') if isinstance(d, dict) else d!r}")
        try:
            n, d_in, d_out = int(d["n"]), int(d["d_in"]), int(d["d_out"])
            w = np.array(d["w"], dtype=np.float64)
            if w.size != n * d_in:
                raise FormatError(f"pair file: w has {w.size} values, expected {n * d_in}")
            verifier = model_from_dict(d["verifier"])
            if verifier.d_in != n * d_out or verifier.d_out != 2:
                raise FormatError("pair file: verifier shape does not match n * d_out -> 2")
            std = d.get("standardize")
            std = None if std is None else (np.array(std["mean"], dtype=np.float64),
                                            np.array(std["std"], dtype=np.float64))
            trace = [float(v) for v in d["loss_trace"].split(",")] if d["loss_trace"] else []
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"pair file: {exc}") from None
        return cls(AdaptiveFingerprint(w.reshape(n, d_in)), verifier, d_out, dict(d.get("meta", {})),
                   trace, std)

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FingerprintPair":
        return cls.from_dict(loads(Path(path).read_text(encoding="utf-8"), f"pair file {path}"))


def _standardized(outputs: np.ndarray, standardize) -> np.ndarray:
    if standardize is None:
        return outputs
    mean, std = standardize
    return (outputs - mean) / std


def verifier_score(verifier: SequentialModel, outputs, standardize=None) -> tuple[float, float]:
    """``(p_minus, p_plus)`` for a suspect's ``[N, d_out]`` outputs on the fingerprint.

    Row ``i`` must be the output on fingerprint point ``i``; rows are
    concatenated in that order.
    """
    out = np.asarray(outputs, dtype=np.float64)
    if out.ndim != 2 or out.size != verifier.d_in:
        raise T.ShapeError(f"verifier expects {verifier.d_in} concatenated outputs, got shape {out.shape}")
    p = verifier.predict(_standardized(out, standardize).reshape(1, -1))[0]
    return float(p[0]), float(p[1])


def _row(model: SequentialModel, x: T.Tensor, standardize) -> T.Tensor:
    out = model.graph(x)
    if standardize is not None:
        mean, std = standardize
        out = T.mul(T.add(out, T.Tensor(-mean)), T.Tensor(1.0 / std))
    return T.reshape(out, (1, -1))


# rows are (M-, F, M+); pick log p_minus for the first, log p_plus for the others
_PICK = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])


def objective(w: T.Tensor, theta: list, verifier: SequentialModel, negative: SequentialModel,
              target: SequentialModel, positive: SequentialModel, standardize=None) -> T.Tensor:
    """Single-tuple objective ``log p+(M+) + log p+(F) + log p-(M-)`` as a graph."""
    x = T.tanh(w)
    rows = T.concat([_row(m, x, standardize) for m in (negative, target, positive)], axis=0)
    logp = T.log(verifier.graph(rows, theta))
    return T.reduce_sum(T.mul(logp, T.Tensor(_PICK)))


def target_standardization(target: SequentialModel, x: np.ndarray):
    out = target.predict(x)
    return out.mean(axis=0), np.maximum(out.std(axis=0), STD_FLOOR)


def construct_fingerprint(split: EnsembleSplit, n: int = 100, iters: int = 1000, lr: float = 1e-3,
                          seed: int = 0, hidden: int = 100, standardize: bool = False,
                          log_every: int = 0, logger=None) -> FingerprintPair:
    """Run the stochastic joint ascent for ``iters`` steps and return the pair."""
    if not split.positives or not split.negatives:
        raise ValueError("construction split needs at least one positive and one negative suspect")
    for m in (*split.positives, *split.negatives):
        if (m.d_in, m.d_out) != (split.d_in, split.d_out):
            raise T.ShapeError(f"suspect dims ({m.d_in}, {m.d_out}) differ from target "
                               f"({split.d_in}, {split.d_out})")
    fp = init_fingerprint(n, split.d_in, derive_seed(seed, "w0"))
    verifier = init_verifier(n * split.d_out, derive_seed(seed, "theta0"), hidden)
    std = target_standardization(split.target, fp.x) if standardize else None
    theta_arrays = [a for pair in verifier.params for a in pair]
    opt_w = T.Adam([fp.w], lr=lr)
    opt_theta = T.Adam(theta_arrays, lr=lr)
    rng = make_rng(seed, "tuple-sampling")
    trace = []
    for t in range(iters):
        neg = split.negatives[rng.integers(len(split.negatives))]
        pos = split.positives[rng.integers(len(split.positives))]
        w = T.Tensor(fp.w, requires_grad=True)
        theta = verifier.param_tensors()
        try:
            ell = objective(w, theta, verifier, neg, split.target, pos, std)
            leaves = [w] + [p for pair in theta for p in pair]
            grads = T.backward(ell, leaves)
        except T.NonFiniteError as exc:
            raise T.NonFiniteError(f"construction iteration {t}: {exc}") from None
        # ascent: hand Adam the negated gradient
        opt_w.step([fp.w], [-grads[w]])
        opt_theta.step(theta_arrays, [-grads[p] for pair in theta for p in pair])
        trace.append(float(ell.data[0]))
        if logger is not None and log_every and (t + 1) % log_every == 0:
            logger.info("iter %d  loss %.4f", t + 1, np.mean(trace[-log_every:]))
    meta = {"seed": int(seed), "iters": int(iters), "lr": float(lr), "n": int(n), "hidden": int(hidden)}
    return FingerprintPair(fp, verifier, split.d_out, meta, trace, std)


def smoothed(trace: Sequence[float], window: int = 50) -> np.ndarray:
    """Trailing moving average; entry ``i`` averages ``trace[i-window+1 : i+1]``."""
    a = np.asarray(trace, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(a)])
    idx = np.arange(len(a))
    lo = np.maximum(idx - window + 1, 0)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)
