"""Task-agnostic model fingerprinting: adaptive fingerprint plus meta-verifier.

The package is split along the forensic workflow: ``forge`` builds the
suspect ensemble, ``fingerprint`` jointly optimizes the fingerprint inputs
and verifier, and ``metrics`` verifies black-box suspects and scores the
pair with robustness/uniqueness curves.
"""
from .fingerprint import FingerprintPair, construct_fingerprint
from .forge import Composition, ModelEnsemble, forge_ensemble
from .metrics import aruc, robustness, run_benchmark, uniqueness, verify
from .models import SequentialModel, load_model, save_model
from .pipeline import forge_scenario

__version__ = "0.1.0"

__all__ = [
    "Composition", "FingerprintPair", "ModelEnsemble", "SequentialModel", "aruc", "construct_fingerprint",
    "forge_ensemble", "forge_scenario", "load_model", "robustness", "run_benchmark", "save_model",
    "uniqueness", "verify",
]
