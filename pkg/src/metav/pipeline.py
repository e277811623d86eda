"""End-to-end helpers: forge a scenario, construct pairs, sweep hyperparameters."""
from __future__ import annotations

from typing import Sequence

from .fingerprint import construct_fingerprint
from .forge import Composition, EnsembleSplit, ModelEnsemble, forge_ensemble
from .metrics import aruc, run_benchmark, score_suspects, split_scores, sweep
from .rng import derive_seed, make_rng
from .scenarios import build_task, train_target


def forge_scenario(name: str, seed: int, composition: Composition | None = None) -> ModelEnsemble:
    """Generate task data, train the target model, and forge its suspect ensemble."""
    scenario, data = build_task(name, seed)
    target = train_target(scenario, data, seed)
    if composition is None:
        composition = Composition(**scenario.composition)
    return forge_ensemble(target, data, scenario, derive_seed(seed, "forge"), composition)


def subsample(split: EnsembleSplit, fraction: float, seed: int) -> EnsembleSplit:
    """Keep ``round(fraction * size)`` members per side, at least one."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = make_rng(seed, "subsample", fraction)

    def pick(models):
        k = max(1, int(round(fraction * len(models))))
        return [models[i] for i in sorted(rng.choice(len(models), size=k, replace=False))]

    return EnsembleSplit(split.target, pick(split.positives), pick(split.negatives))


def holdout_pair(ensemble: ModelEnsemble, seed: int, n: int = 100, iters: int = 1000, lr: float = 1e-3,
                 fraction: float = 1.0, standardize: bool = False):
    """Construct on (a fraction of) the construction split; returns the pair and holdout scores."""
    split = ensemble.construction()
    if fraction < 1.0:
        split = subsample(split, fraction, seed)
    pair = construct_fingerprint(split, n=n, iters=iters, lr=lr, seed=seed, standardize=standardize)
    return pair, score_suspects(pair, ensemble.holdout())


def holdout_aruc(ensemble: ModelEnsemble, seed: int, **kw) -> float:
    _, scores = holdout_pair(ensemble, seed, **kw)
    return aruc(*split_scores(scores))


def benchmark(ensemble: ModelEnsemble, seeds: Sequence[int], n: int = 100, iters: int = 1000,
              lr: float = 1e-3, standardize: bool = False):
    split = ensemble.construction()
    return run_benchmark(
        lambda s: construct_fingerprint(split, n=n, iters=iters, lr=lr, seed=s, standardize=standardize),
        ensemble.holdout(), seeds)


def sweep_n(ensemble: ModelEnsemble, ns: Sequence[int], seeds: Sequence[int], **kw):
    return sweep(lambda n, s: holdout_aruc(ensemble, s, n=int(n), **kw), ns, seeds)


def sweep_ensemble(ensemble: ModelEnsemble, fractions: Sequence[float], seeds: Sequence[int], **kw):
    return sweep(lambda f, s: holdout_aruc(ensemble, s, fraction=f, **kw), fractions, seeds)
