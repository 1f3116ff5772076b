from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TabularMDP:
    kernel: np.ndarray  # [S, A, S]
    ergodic: bool = False

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    def chain(self, policy: np.ndarray) -> np.ndarray:
        """State-to-state matrix under ``policy[s, a]``."""
        return np.einsum("sap,sa->sp", self.kernel, policy)


def random_tabular(n_states: int, n_actions: int, seed, eps_erg: float = 0.01,
                   concentration: float = 1.0) -> TabularMDP:
    """Random ergodic kernel: every entry is at least ``eps_erg``.

    Rows are ``eps_erg + (1 - S*eps_erg) * Dirichlet(concentration)``.
    """
    if n_states < 2 or n_actions < 2:
        raise ValueError("need at least 2 states and 2 actions")
    if not 0.0 < eps_erg < 1.0 / n_states:
        raise ValueError(f"eps_erg must lie in (0, 1/S) = (0, {1.0 / n_states})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rows = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    kernel = eps_erg + (1.0 - n_states * eps_erg) * rows
    kernel /= kernel.sum(axis=-1, keepdims=True)
    return TabularMDP(kernel, ergodic=True)


def stationary_distribution(matrix: np.ndarray) -> np.ndarray:
    """Stationary law of a row-stochastic matrix via its leading left eigenvector."""
    vals, vecs = np.linalg.eig(matrix.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()
