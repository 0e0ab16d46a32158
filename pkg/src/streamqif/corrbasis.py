"""0/1 basis matrices spanning the inverse working correlation."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import CorrStructure, as_corr


@dataclass(frozen=True)
class BasisSet:
    structure: CorrStructure
    m: int
    matrices: tuple

    @property
    def S(self) -> int:
        return len(self.matrices)


@lru_cache(maxsize=None)
def _basis(structure: CorrStructure, m: int) -> BasisSet:
    eye = np.eye(m)
    eye.flags.writeable = False
    if structure is CorrStructure.INDEPENDENCE or m == 1:
        return BasisSet(structure, m, (eye,))
    if structure is CorrStructure.COMPOUND_SYMMETRY:
        second = np.ones((m, m)) - eye
    else:
        second = np.eye(m, k=1) + np.eye(m, k=-1)
    second.flags.writeable = False
    return BasisSet(structure, m, (eye, second))


def basis_set(structure, m: int) -> BasisSet:
    """Basis matrices for a working structure and cluster size.

    Clusters of size 1 only carry the identity block whatever the structure.
    """
    if m < 1:
        raise ValueError(f"cluster size must be >= 1, got {m}")
    return _basis(as_corr(structure), int(m))


def working_correlation(structure, alpha: float, m: int) -> np.ndarray:
    """``R(alpha)`` for the supported structures."""
    structure = as_corr(structure)
    if structure is CorrStructure.INDEPENDENCE or m == 1:
        return np.eye(m)
    if structure is CorrStructure.COMPOUND_SYMMETRY:
        R = np.full((m, m), float(alpha))
        np.fill_diagonal(R, 1.0)
        return R
    lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    return float(alpha) ** lag
