"""Desk-scale scenario definitions: task recipe, architectures, training recipes.

Each scenario mirrors one of the three task archetypes at a size that trains
in seconds: blob classification, a 31-feature dose regressor, and a 2-D ring
GAN whose generator is the fingerprinted model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .models import SequentialModel, init_model, mlp_spec, train_gan, train_supervised
from .rng import derive_seed
from .tasks import TaskData, TaskRecipe, classification_recipe, generative_recipe, make_task, regression_recipe


@dataclass
class Scenario:
    name: str
    recipe: TaskRecipe
    target_arch: str
    archs: dict  # size tag -> width list
    head: str | None
    train_epochs: int
    train_lr: float
    ft_epochs: int = 10
    ft_lr: float = 1e-3
    rt_lr: float = 5e-3
    distill_epochs: int = 60
    distill_lr: float = 5e-3
    temperature: float = 2.0
    disc_widths: list = field(default_factory=list)
    batch_size: int = 32
    composition: dict = field(default_factory=dict)  # overrides of the default suspect mix
    # recommended construction settings; library and CLI defaults stay N=100, no standardization
    fingerprint_size: int = 100
    standardize: bool = False

    @property
    def task_kind(self) -> str:
        return self.recipe.task_kind

    @property
    def loss_kind(self) -> str:
        return "cross-entropy" if self.task_kind == "classifier" else "mse"

    def spec(self, arch: str):
        return mlp_spec(self.archs[arch], self.head)

    def disc_spec(self):
        return mlp_spec(self.disc_widths, "sigmoid")

    def train_model(self, arch: str, data, seed: int, provenance: dict | None = None) -> SequentialModel:
        """Train a fresh model of size ``arch`` on ``data`` from scratch."""
        prov = {"recipe": f"scratch-{arch}-{data.split}"}
        prov.update(provenance or {})
        if self.task_kind == "generator":
            gen = init_model(self.spec(arch), seed, "generator", prov)
            gen, _ = train_gan(None, self.disc_spec(), data, self.train_epochs, self.train_lr, seed,
                               generator=gen)
            gen.provenance = dict(gen.provenance, **prov)
            return gen
        model = init_model(self.spec(arch), seed, self.task_kind, prov)
        model, _ = train_supervised(model, data, self.train_epochs, self.train_lr, self.loss_kind,
                                    seed, batch_size=self.batch_size)
        return model


def classification_scenario(**kw) -> Scenario:
    kw.setdefault("n_train", 300)
    kw.setdefault("noise", 0.3)
    return Scenario(
        name="classification",
        recipe=classification_recipe(**kw),
        target_arch="M",
        archs={"S": [8, 16, 3], "M": [8, 32, 3], "L": [8, 32, 32, 3]},
        head="softmax",
        train_epochs=30,
        train_lr=1e-2,
        rt_lr=2e-3,
        distill_epochs=150,
        temperature=2.0,
    )


def regression_scenario(**kw) -> Scenario:
    kw.setdefault("n_train", 200)
    kw.setdefault("noise", 0.6)
    return Scenario(
        name="regression",
        recipe=regression_recipe(**kw),
        target_arch="S",
        archs={"S": [31, 100, 1], "M": [31, 100, 100, 1], "L": [31, 100, 100, 100, 1]},
        head=None,
        train_epochs=60,
        train_lr=1e-2,
        ft_lr=1e-3,
        rt_lr=1e-2,
        distill_epochs=300,
        distill_lr=1e-2,
        standardize=True,
    )


def generative_scenario(**kw) -> Scenario:
    # A wide latent keeps independently trained generators from agreeing by chance.
    kw.setdefault("latent_dim", 64)
    recipe = generative_recipe(**kw)
    z = recipe.latent_dim
    return Scenario(
        name="generative",
        recipe=recipe,
        target_arch="M",
        archs={"S": [z, 32, 2], "M": [z, 64, 64, 2], "L": [z, 128, 128, 2]},
        head="tanh",
        train_epochs=60,
        train_lr=2e-3,
        ft_lr=5e-4,
        rt_lr=2e-3,
        distill_epochs=60,
        distill_lr=5e-3,
        disc_widths=[2, 64, 64, 1],
        batch_size=64,
        standardize=True,
        fingerprint_size=16,
        # Independent generators scatter around the target instead of clustering,
        # so the verifier needs more negatives to generalize.
        composition={"negatives": {"S": 15, "M": 15, "L": 15}, "irrelevant": 15},
    )


SCENARIOS = {
    "classification": classification_scenario,
    "regression": regression_scenario,
    "generative": generative_scenario,
}


def build_task(name: str, seed: int) -> tuple[Scenario, TaskData]:
    scenario = SCENARIOS[name]()
    return scenario, make_task(scenario.recipe, derive_seed(seed, "data"))


def train_target(scenario: Scenario, data: TaskData, seed: int) -> SequentialModel:
    """The owner's model F, trained on the fitting part of the train split."""
    fit, _ = fit_and_check(data)
    return scenario.train_model(scenario.target_arch, fit, derive_seed(seed, "target"),
                                {"recipe": f"target-{scenario.target_arch}"})


def fit_and_check(data: TaskData):
    """Split train data into the fitting portion and a held-out utility-check portion."""
    n = len(data.train)
    cut = int(round(0.8 * n))
    return data.train.subset(slice(0, cut)), data.train.subset(slice(cut, n))
