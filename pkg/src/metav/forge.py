"""Ownership-obfuscation toolbox and suspect-ensemble assembly."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .models import (
    SequentialModel, init_model, load_model, reinit_layer, sample_latent, save_model, task_loss,
    train_gan, train_supervised,
)
from .rng import derive_seed, make_rng
from .scenarios import Scenario, fit_and_check
from .tasks import Dataset, TaskData
from .textio import FormatError, dumps, loads

log = logging.getLogger(__name__)

KINDS = ("weight-prune", "neuron-prune", "ftll", "ftal", "rtll", "rtal", "distill")
ENSEMBLE_FORMAT = "metav-ensemble/1"


@dataclass
class ObfuscationSpec:
    kind: str
    ratio: float = 0.0
    epochs: int = 0
    student: str = ""
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown obfuscation kind {self.kind!r}")


# --- pruning ------------------------------------------------------------------

def prune_weights(model: SequentialModel, ratio: float) -> SequentialModel:
    """Zero the ``floor(ratio * W_total)`` smallest-magnitude weights, ranked globally.

    Biases are never touched.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"prune ratio must lie in [0, 1), got {ratio}")
    out = model.copy()
    weights = [w for w, _ in out.params]
    flat = np.concatenate([np.abs(w).ravel() for w in weights])
    k = int(Fraction(ratio).limit_denominator(10**6) * len(flat))
    if k == 0:
        return out
    drop = np.zeros(len(flat), dtype=bool)
    drop[np.argsort(flat, kind="stable")[:k]] = True
    start = 0
    for w in weights:
        n = w.size
        w.ravel()[drop[start:start + n]] = 0.0
        start += n
    return out


def prune_neurons(model: SequentialModel, ratio: float) -> SequentialModel:
    """Zero the weakest hidden neurons of every hidden layer.

    Per hidden layer, the ``floor(ratio * width)`` neurons with the smallest
    L1 norm of incoming weights lose their incoming weights, bias and
    outgoing weights. Shapes are preserved.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"prune ratio must lie in [0, 1), got {ratio}")
    if len(model.params) < 2:
        raise ValueError("neuron pruning needs at least one hidden dense layer")
    out = model.copy()
    frac = Fraction(ratio).limit_denominator(10**6)
    for k in range(len(out.params) - 1):
        w, b = out.params[k]
        n = int(frac * w.shape[1])
        if n == 0:
            continue
        idx = np.argsort(np.abs(w).sum(axis=0), kind="stable")[:n]
        w[:, idx] = 0.0
        b[idx] = 0.0
        out.params[k + 1][0][idx, :] = 0.0
    return out


# --- fine-tuning, retraining, distillation --------------------------------------

def _last_scope(model: SequentialModel, scope: str):
    if scope == "last-layer":
        return [len(model.params) - 1]
    if scope == "all-layers":
        return None
    raise ValueError(f"unknown scope {scope!r}")


def _resume(model: SequentialModel, dataset: Dataset, scope: str, epochs: int, lr: float, seed: int,
            scenario: Scenario | None) -> SequentialModel:
    trainable = _last_scope(model, scope)
    if model.d_in != dataset.features.shape[1] and model.task_kind != "generator":
        raise T.ShapeError(f"dataset width {dataset.features.shape[1]} != d_in {model.d_in}")
    if model.task_kind == "generator":
        if scenario is None:
            raise ValueError("generator fine-tuning needs a scenario for the discriminator spec")
        batch = scenario.batch_size
        out, _ = train_gan(None, scenario.disc_spec(), dataset, epochs, lr, seed, batch_size=batch,
                           generator=model, trainable=trainable)
        return out
    loss_kind = "cross-entropy" if model.task_kind == "classifier" else "mse"
    batch = scenario.batch_size if scenario else 32
    out, _ = train_supervised(model, dataset, epochs, lr, loss_kind, seed, batch_size=batch,
                              trainable=trainable)
    return out


def finetune(model: SequentialModel, dataset: Dataset, scope: str, epochs: int, lr: float, seed: int,
             scenario: Scenario | None = None) -> SequentialModel:
    """Resume training with only ``scope`` parameters free.

    Generators resume adversarial training against a fresh discriminator.
    """
    return _resume(model, dataset, scope, epochs, lr, seed, scenario)


def retrain(model: SequentialModel, dataset: Dataset, scope: str, epochs: int, lr: float, seed: int,
            scenario: Scenario | None = None) -> SequentialModel:
    fresh = reinit_layer(model, len(model.params) - 1, seed)
    return _resume(fresh, dataset, scope, epochs, lr, seed, scenario)


def soften(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Teacher probabilities raised to ``1/T`` and renormalized."""
    logp = np.log(np.maximum(probs, T.LOG_FLOOR)) / temperature
    return T.softmax_array(logp)


def distill(teacher: Callable[[np.ndarray], np.ndarray], student_spec, transfer: Dataset | None,
            epochs: int, temperature: float, seed: int, task_kind: str, lr: float = 5e-3,
            batch_size: int = 32, n_latent: int = 600) -> SequentialModel:
    """Train a student against black-box ``teacher`` outputs.

    Classifiers minimize KL to temperature-softened teacher probabilities;
    regressors and generators regress onto teacher outputs. Generators are
    queried on seeded latent samples shared by teacher and student.
    """
    student = init_model(student_spec, seed, task_kind, {"recipe": "distill"})
    if task_kind == "generator":
        x = sample_latent(n_latent, student.d_in, seed, "distill")
    else:
        x = transfer.features
        if x.shape[1] != student.d_in:
            raise T.ShapeError(f"transfer width {x.shape[1]} != student d_in {student.d_in}")
    y = np.asarray(teacher(x), dtype=np.float64)
    if y.shape != (len(x), student.d_out):
        raise T.ShapeError(f"teacher output {y.shape} does not match student d_out {student.d_out}")
    if task_kind == "classifier":
        data = Dataset(x, soften(y, temperature), "transfer")
        out, _ = train_supervised(student, data, epochs, lr, "cross-entropy", seed,
                                  batch_size=batch_size, temperature=temperature)
    else:
        out, _ = train_supervised(student, Dataset(x, y, "transfer"), epochs, lr, "mse", seed,
                                  batch_size=batch_size)
    return out


def distill_kl(teacher_probs: np.ndarray, student_logits: np.ndarray, temperature: float) -> float:
    """Mean KL(softened teacher || tempered student)."""
    p = soften(teacher_probs, temperature)
    q = T.softmax_array(student_logits / temperature)
    return float(np.mean(np.sum(p * (np.log(np.maximum(p, T.LOG_FLOOR)) - np.log(q)), axis=1)))


def apply_obfuscation(target: SequentialModel, spec: ObfuscationSpec, data: TaskData,
                      scenario: Scenario) -> SequentialModel:
    public = data.public
    if spec.kind == "weight-prune":
        return prune_weights(target, spec.ratio)
    if spec.kind == "neuron-prune":
        return prune_neurons(target, spec.ratio)
    if spec.kind in ("ftll", "ftal"):
        scope = "last-layer" if spec.kind == "ftll" else "all-layers"
        return finetune(target, public, scope, spec.epochs, scenario.ft_lr, spec.seed, scenario)
    if spec.kind in ("rtll", "rtal"):
        scope = "last-layer" if spec.kind == "rtll" else "all-layers"
        return retrain(target, public, scope, spec.epochs, scenario.rt_lr, spec.seed, scenario)
    return distill(target.predict, scenario.spec(spec.student), public, spec.epochs, spec.temperature,
                   spec.seed, target.task_kind, lr=scenario.distill_lr, batch_size=scenario.batch_size)


# --- utility -----------------------------------------------------------------------

def utility_loss(model: SequentialModel, data: TaskData, scenario: Scenario) -> float:
    """Task loss on the held-out part of the train split.

    For generators: mean squared distance from generated samples to their
    nearest held-out data point.
    """
    _, check = fit_and_check(data)
    if model.task_kind == "generator":
        samples = model.predict(sample_latent(400, model.d_in, 0, "utility"))
        d2 = ((samples[:, None, :] - check.features[None, :, :]) ** 2).sum(axis=2)
        return float(d2.min(axis=1).mean())
    return task_loss(model, check.features, check.labels, scenario.loss_kind)


# --- ensembles ---------------------------------------------------------------------

@dataclass
class Composition:
    ftll: int = 2
    ftal: int = 2
    rtll: int = 2
    rtal: int = 2
    wp_ratios: tuple = tuple(i / 10 for i in range(1, 10))
    fp_ratios: tuple = tuple(i / 16 for i in range(1, 16))
    distill_archs: tuple = ("S", "M", "L")
    distill_seeds: int = 2
    negatives: dict = field(default_factory=lambda: {"S": 5, "M": 5, "L": 5})
    irrelevant: int = 5

    def obfuscations(self, scenario: Scenario, seed: int) -> list[tuple[str, ObfuscationSpec]]:
        out = []
        for kind in ("ftll", "ftal", "rtll", "rtal"):
            for i in range(getattr(self, kind)):
                sid = f"{kind}-{i}"
                out.append((sid, ObfuscationSpec(kind, epochs=scenario.ft_epochs, seed=derive_seed(seed, sid))))
        for r in self.wp_ratios:
            out.append((f"wp-{r:.4f}", ObfuscationSpec("weight-prune", ratio=r)))
        for r in self.fp_ratios:
            out.append((f"fp-{r:.4f}", ObfuscationSpec("neuron-prune", ratio=r)))
        for arch in self.distill_archs:
            for i in range(self.distill_seeds):
                sid = f"distill-{arch}-{i}"
                out.append((sid, ObfuscationSpec("distill", epochs=scenario.distill_epochs, student=arch,
                                                 temperature=scenario.temperature,
                                                 seed=derive_seed(seed, sid))))
        return out

    def negative_plan(self, seed: int) -> list[tuple[str, str, str, int]]:
        """``(id, arch, split, seed)`` per negative; sizes alternate train/public data."""
        out = []
        for arch, count in self.negatives.items():
            for i in range(count):
                split = "train" if i % 2 == 0 else "public"
                sid = f"neg-{arch}-{split}-{i}"
                out.append((sid, arch, split, derive_seed(seed, sid)))
        archs = list(self.negatives)
        for i in range(self.irrelevant):
            sid = f"neg-irrelevant-{archs[i % len(archs)]}-{i}"
            out.append((sid, archs[i % len(archs)], "irrelevant", derive_seed(seed, sid)))
        return out


@dataclass
class Suspect:
    id: str
    model: SequentialModel
    label: str  # "+" or "-"
    origin: dict
    split: str = "construction"
    utility: float = float("nan")
    utility_ok: bool = True


@dataclass
class EnsembleSplit:
    """The models one construction run may see: F plus labeled suspects."""
    target: SequentialModel
    positives: list
    negatives: list

    @property
    def d_in(self) -> int:
        return self.target.d_in

    @property
    def d_out(self) -> int:
        return self.target.d_out


@dataclass
class ModelEnsemble:
    target: SequentialModel
    suspects: list
    seed: int = 0
    scenario: str = ""
    target_utility: float = float("nan")

    def check_dims(self) -> None:
        for s in self.suspects:
            if (s.model.d_in, s.model.d_out) != (self.target.d_in, self.target.d_out):
                raise T.ShapeError(f"suspect {s.id}: dims ({s.model.d_in}, {s.model.d_out}) differ from "
                                   f"target ({self.target.d_in}, {self.target.d_out})")

    def members(self, split: str, label: str | None = None) -> list:
        return [s for s in self.suspects if s.split == split and (label is None or s.label == label)]

    def construction(self) -> EnsembleSplit:
        return EnsembleSplit(self.target,
                             [s.model for s in self.members("construction", "+")],
                             [s.model for s in self.members("construction", "-")])

    def holdout(self) -> list:
        return self.members("holdout")

    def save(self, directory) -> None:
        d = Path(directory)
        (d / "members").mkdir(parents=True, exist_ok=True)
        save_model(self.target, d / "target.json")
        entries = []
        for s in self.suspects:
            fname = f"members/{s.id}.json"
            save_model(s.model, d / fname)
            entries.append({"id": s.id, "file": fname, "label": s.label, "split": s.split,
                            "origin": s.origin, "utility": s.utility, "utility_ok": s.utility_ok})
        manifest = {"version": ENSEMBLE_FORMAT, "scenario": self.scenario, "seed": self.seed,
                    "target": "target.json", "target_utility": self.target_utility, "members": entries}
        (d / "manifest.json").write_text(dumps(manifest) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ModelEnsemble":
        d = Path(directory)
        path = d / "manifest.json"
        if not path.exists():
            raise FormatError(f"{d}: no manifest.json")
        m = loads(path.read_text(encoding="utf-8"), f"manifest {path}")
        if m.get("version") != ENSEMBLE_FORMAT:
            raise FormatError(f"manifest: unsupported version {m.get('version')!r}")
        suspects = [Suspect(e["id"], load_model(d / e["file"]), e["label"], e["origin"], e["split"],
                            e["utility"], e["utility_ok"]) for e in m["members"]]
        ens = cls(load_model(d / m["target"]), suspects, m["seed"], m["scenario"], m["target_utility"])
        ens.check_dims()
        return ens


def suspect_group(s: Suspect) -> str:
    """Stratum for splitting: obfuscation kind, or negative architecture and data source."""
    o = s.origin
    if s.label == "+":
        return f"+{o['kind']}"
    return f"-{o.get('arch')}-{o.get('data')}"


def assign_splits(suspects: list, seed: int) -> None:
    """Random 1:1 construction/holdout split, stratified by suspect group.

    Odd-sized groups alternate which half receives the extra member so the
    overall split stays balanced.
    """
    rng = make_rng(seed, "split")
    groups: dict = {}
    for s in suspects:
        groups.setdefault(suspect_group(s), []).append(s)
    extra_to_construction = True
    for key in sorted(groups):
        group = groups[key]
        order = rng.permutation(len(group))
        half = len(group) // 2
        if len(group) % 2:
            half += int(extra_to_construction)
            extra_to_construction = not extra_to_construction
        for rank, i in enumerate(order):
            group[i].split = "construction" if rank < half else "holdout"


def forge_ensemble(target: SequentialModel, data: TaskData, scenario: Scenario, seed: int,
                   composition: Composition | None = None, utility_factor: float = 3.0) -> ModelEnsemble:
    """Build positives by obfuscating ``target`` and negatives by independent training."""
    comp = composition or Composition()
    target_util = utility_loss(target, data, scenario)
    suspects = []
    for sid, spec in comp.obfuscations(scenario, seed):
        model = apply_obfuscation(target, spec, data, scenario)
        model.provenance = dict(model.provenance, recipe=spec.kind, seed=spec.seed)
        util = utility_loss(model, data, scenario)
        ok = bool(util <= utility_factor * target_util)
        if not ok:
            log.warning("positive %s fails utility check: %.4g > %g x %.4g", sid, util, utility_factor,
                        target_util)
        suspects.append(Suspect(sid, model, "+", asdict(spec), utility=util, utility_ok=ok))
    for sid, arch, split, nseed in comp.negative_plan(seed):
        model = scenario.train_model(arch, data.split(split), nseed, {"seed": nseed})
        suspects.append(Suspect(sid, model, "-", {"kind": "independent", "arch": arch, "data": split,
                                                  "seed": nseed},
                                utility=utility_loss(model, data, scenario)))
    assign_splits(suspects, seed)
    ens = ModelEnsemble(target, suspects, seed, scenario.name, target_util)
    ens.check_dims()
    return ens
