"""Input validation helpers used by the estimators and module functions."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError

VALID_CLASSES = (1, 2, 3)


def check_square_symmetric(m, *, atol_scale: float = 1e-12, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a float array after checking it is square and symmetric.

    Symmetry is required within ``atol_scale`` relative to the largest
    absolute entry (absolute for matrices of unit scale or below).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
    if not np.all(np.abs(m - m.T) <= atol_scale * scale):
        raise ContractError(f"{name} is not symmetric within {atol_scale:g}")
    return m


def check_features(x, n_nodes: int) -> np.ndarray:
    """Return node features as a float (n_nodes, d) array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != n_nodes:
        raise ContractError(
            f"feature matrix must have shape ({n_nodes}, d), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ContractError("feature matrix contains non-finite entries")
    return x


def check_class_labels(y) -> np.ndarray:
    """Return labels as an int array after checking values are in {1, 2, 3}."""
    y = np.asarray(y)
    if y.size and not np.isin(y, VALID_CLASSES).all():
        bad = np.unique(y[~np.isin(y, VALID_CLASSES)])
        raise ParameterError(f"class labels must be in {VALID_CLASSES}, got {bad}")
    return y.astype(int)


def check_probability(value: float, name: str, *, inclusive_low: bool = True,
                      inclusive_high: bool = True) -> float:
    """Check a scalar lies in [0, 1] (bounds optionally exclusive)."""
    value = float(value)
    low_ok = value >= 0.0 if inclusive_low else value > 0.0
    high_ok = value <= 1.0 if inclusive_high else value < 1.0
    if not (low_ok and high_ok):
        raise ParameterError(f"{name} must lie in the unit interval, got {value}")
    return value


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0.0:
        raise ParameterError(f"{name} must be > 0, got {value}")
    return value


def as_seed_sequence(seed, *spawn_key: int) -> np.random.SeedSequence:
    """Build a reproducible SeedSequence from an integer seed and a spawn key."""
    if seed is None:
        seed = 0
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
