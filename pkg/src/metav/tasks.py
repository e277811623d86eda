"""Synthetic desk-scale tasks and CSV ingestion.

Every feature matrix produced here lies in ``[-1, 1]^d_in``, the same box the
fingerprint lives in.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import make_rng

SPLITS = ("train", "public", "irrelevant")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.split)


@dataclass(frozen=True)
class TaskRecipe:
    task_kind: str
    d_in: int
    d_out: int
    n_classes: int = 0
    noise: float = 0.2
    shift: float = 0.1
    latent_dim: int = 4
    radius: float = 0.7
    function_seed: int = 0
    n_train: int = 600
    n_public: int = 600
    n_irrelevant: int = 600

    def __post_init__(self):
        if self.task_kind == "classifier":
            if self.n_classes < 2:
                raise ValueError("classification needs at least 2 classes")
            if self.d_out != self.n_classes:
                raise ValueError("classifier d_out must equal class count")
        elif self.task_kind == "regressor":
            if self.d_out != 1:
                raise ValueError("regressor d_out must be 1")
        elif self.task_kind == "generator":
            if self.d_in != self.latent_dim:
                raise ValueError("generator d_in must equal latent dim")
        else:
            raise ValueError(f"unknown task kind {self.task_kind!r}")


def classification_recipe(**kw) -> TaskRecipe:
    kw.setdefault("n_classes", 3)
    kw.setdefault("d_in", 8)
    return TaskRecipe("classifier", d_out=kw["n_classes"], **kw)


def regression_recipe(**kw) -> TaskRecipe:
    kw.setdefault("d_in", 31)
    kw.setdefault("noise", 0.4)
    return TaskRecipe("regressor", d_out=1, **kw)


def generative_recipe(**kw) -> TaskRecipe:
    kw.setdefault("latent_dim", 4)
    kw.setdefault("noise", 0.05)
    return TaskRecipe("generator", d_in=kw["latent_dim"], d_out=2, **kw)


@dataclass
class TaskData:
    recipe: TaskRecipe
    train: Dataset
    public: Dataset
    irrelevant: Dataset

    def split(self, name: str) -> Dataset:
        return getattr(self, name)


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _blobs(means: np.ndarray, n: int, noise: float, rng) -> tuple[np.ndarray, np.ndarray]:
    k = len(means)
    labels = rng.permutation(np.arange(n) % k)
    x = means[labels] + noise * rng.standard_normal((n, means.shape[1]))
    return np.clip(x, -1.0, 1.0), _onehot(labels, k)


def class_means(recipe: TaskRecipe) -> np.ndarray:
    return make_rng(recipe.function_seed, "class-means").uniform(
        -0.6, 0.6, size=(recipe.n_classes, recipe.d_in))


def shift_vector(recipe: TaskRecipe) -> np.ndarray:
    """Offset (norm ``recipe.shift``) between train and public-domain class means."""
    u = make_rng(recipe.function_seed, "shift").standard_normal(recipe.d_in)
    return recipe.shift * u / np.linalg.norm(u)


def make_classification(recipe: TaskRecipe, seed: int) -> TaskData:
    means = class_means(recipe)
    x, y = _blobs(means, recipe.n_train, recipe.noise, make_rng(seed, "train"))
    train = Dataset(x, y, "train")
    x, y = _blobs(means + shift_vector(recipe), recipe.n_public, recipe.noise, make_rng(seed, "public"))
    public = Dataset(x, y, "public")
    irr_means = make_rng(seed, "irrelevant-means").uniform(-0.8, 0.8, size=means.shape)
    x, y = _blobs(irr_means, recipe.n_irrelevant, 1.5 * recipe.noise, make_rng(seed, "irrelevant"))
    return TaskData(recipe, train, public, Dataset(x, y, "irrelevant"))


def dose_function(function_seed: int, d_in: int, n_terms: int = 6):
    """Random smooth map ``[-1,1]^d -> (0, 300]``: sines plus a linear term."""
    rng = make_rng(function_seed, "dose-function")
    freq = rng.standard_normal((n_terms, d_in)) * (1.5 / np.sqrt(d_in))
    phase = rng.uniform(0, 2 * np.pi, n_terms)
    amp = rng.uniform(15.0, 35.0, n_terms)
    lin = rng.standard_normal(d_in) * (60.0 / np.sqrt(d_in))

    def g(x):
        x = np.atleast_2d(x)
        y = 150.0 + np.sin(x @ freq.T + phase) @ amp + x @ lin
        return np.clip(y, 1e-3, 300.0)[:, None]

    return g


def _tabular(n: int, d: int, noise: float, center: np.ndarray, rng) -> np.ndarray:
    return np.clip(center + noise * rng.standard_normal((n, d)), -1.0, 1.0)


def make_regression(recipe: TaskRecipe, seed: int) -> TaskData:
    g = dose_function(recipe.function_seed, recipe.d_in)
    zero = np.zeros(recipe.d_in)
    x = _tabular(recipe.n_train, recipe.d_in, recipe.noise, zero, make_rng(seed, "train"))
    train = Dataset(x, g(x), "train")
    x = _tabular(recipe.n_public, recipe.d_in, recipe.noise, shift_vector(recipe), make_rng(seed, "public"))
    public = Dataset(x, g(x), "public")
    g_irr = dose_function(int(make_rng(seed, "irrelevant-fn").integers(2**31)), recipe.d_in)
    center = make_rng(seed, "irrelevant-center").uniform(-0.4, 0.4, recipe.d_in)
    x = _tabular(recipe.n_irrelevant, recipe.d_in, 1.5 * recipe.noise, center, make_rng(seed, "irrelevant"))
    return TaskData(recipe, train, public, Dataset(x, g_irr(x), "irrelevant"))


def ring_samples(n: int, radius: float, noise: float, rotation: float, rng, modes: int = 8) -> np.ndarray:
    k = rng.integers(0, modes, n)
    theta = rotation + 2 * np.pi * k / modes
    centers = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return np.clip(centers + noise * rng.standard_normal((n, 2)), -1.0, 1.0)


def grid_samples(n: int, noise: float, rng, spacing: float = 0.6) -> np.ndarray:
    ticks = np.array([-spacing, 0.0, spacing])
    centers = np.array([(a, b) for a in ticks for b in ticks])
    k = rng.integers(0, len(centers), n)
    return np.clip(centers[k] + noise * rng.standard_normal((n, 2)), -1.0, 1.0)


def make_generative(recipe: TaskRecipe, seed: int) -> TaskData:
    empty = lambda n: np.zeros((n, 0))  # noqa: E731
    x = ring_samples(recipe.n_train, recipe.radius, recipe.noise, 0.0, make_rng(seed, "train"))
    train = Dataset(x, empty(len(x)), "train")
    x = ring_samples(recipe.n_public, recipe.radius, recipe.noise, np.pi / 8, make_rng(seed, "public"))
    public = Dataset(x, empty(len(x)), "public")
    x = grid_samples(recipe.n_irrelevant, recipe.noise, make_rng(seed, "irrelevant"))
    return TaskData(recipe, train, public, Dataset(x, empty(len(x)), "irrelevant"))


def make_task(recipe: TaskRecipe, seed: int) -> TaskData:
    maker = {"classifier": make_classification, "regressor": make_regression,
             "generator": make_generative}[recipe.task_kind]
    return maker(recipe, seed)


# --- CSV ---------------------------------------------------------------------

class CSVError(ValueError):
    pass


@dataclass
class Scaling:
    columns: list[str]
    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, 2.0 * (x - self.mins) / safe - 1.0, 0.0)
        return np.clip(out, -1.0, 1.0)

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["column", "min", "max"])
            for c, lo, hi in zip(self.columns, self.mins, self.maxs):
                w.writerow([c, format(lo, ".17g"), format(hi, ".17g")])

    @classmethod
    def load(cls, path) -> "Scaling":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["column"] for r in rows], np.array([float(r["min"]) for r in rows]),
                   np.array([float(r["max"]) for r in rows]))


def _read_columns(path, names: Sequence[str]) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [n for n in names if n not in header]
        if missing:
            raise CSVError(f"{path}: missing columns {missing}")
        cols = [header.index(n) for n in names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for name, c in zip(names, cols):
                cell = row[c].strip() if c < len(row) else ""
                if cell == "":
                    raise CSVError(f"{path}: missing value at row {lineno}, column {name!r}")
                try:
                    v = float(cell)
                except ValueError:
                    v = float("nan")
                if not np.isfinite(v):
                    raise CSVError(f"{path}: cannot parse {cell!r} at row {lineno}, column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CSVError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(names))


def load_csv(path, feature_columns: Sequence[str], label_columns: Sequence[str] = (),
             scaling: Scaling | None = None, split: str = "train") -> tuple[Dataset, Scaling]:
    """Read selected columns and min-max scale features into ``[-1, 1]``.

    Pass a previously returned ``scaling`` to reuse it; constant columns
    map to 0.
    """
    feats = _read_columns(path, list(feature_columns))
    labels = _read_columns(path, list(label_columns)) if label_columns else np.zeros((len(feats), 0))
    if scaling is None:
        scaling = Scaling(list(feature_columns), feats.min(axis=0), feats.max(axis=0))
    return Dataset(scaling.apply(feats), labels, split), scaling
