"""Empirical-quadrature weights: weighted residuals and LP training.

The weighted reduced residuals replace full element sums by sparse
non-negatively weighted sums.  Weights come from an l1-minimizing
linear program whose constraints force non-negativity, accurate domain
volume, and accurate state/deformation optimality residuals at frozen
training solutions.  The optimality-residual constraints are split into
volume and face blocks: at a training parameter whose snapshot the
reduced model reproduces, total elemental contributions vanish while
the volume and face parts stay finite, so the split keeps the
constraints from becoming vacuous.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import get_geometry
from .lm import LmConfig, lm_solve
from .reduced import ReducedCoords, ReducedOperator, ReducedTrackingProblem
from .simplex import LpProblem, solve_lp

log = logging.getLogger(__name__)


class WeightVector:
    """Non-negative element weights with an explicit support list."""

    def __init__(self, rho):
        self.rho = np.asarray(rho, dtype=float)
        if np.any(self.rho < 0.0):
            raise ValueError("weights must be non-negative")
        self.active = np.flatnonzero(self.rho > 0.0)

    @classmethod
    def ones(cls, n_elements):
        return cls(np.ones(n_elements))

    @property
    def sparsity(self):
        """Fraction of elements carrying nonzero weight."""
        return len(self.active) / len(self.rho)

    def touched_elements(self, mesh):
        """Active elements plus the neighbors read through their traces."""
        nbr_elem, _, _, _ = mesh.neighbor_tables()
        nbrs = nbr_elem[self.active].ravel()
        return np.unique(np.concatenate([self.active, nbrs[nbrs >= 0]]))


@dataclass
class EqpTrainingConfig:
    delta: float
    xi: np.ndarray  # training parameters, shape (n, n_mu)

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if len(self.xi) == 0:
            raise ValueError("training set must be nonempty")


def weighted_residuals(law, mesh, maps, bases, weights, coords, mu, dist_config, stats=None):
    """Weighted optimality residuals, touching only active elements."""
    op = ReducedOperator(law, get_geometry(mesh, maps), bases, dist_config)
    out = op.residuals(coords, mu, rho=weights)
    if stats is not None:
        stats.update(op.stats)
        stats["elements_touched"] = len(weights.touched_elements(mesh))
    return out


def weighted_objective(law, mesh, maps, bases, weights, coords, mu, dist_config):
    """Weighted objective (half squared norm of the weighted residual)."""
    op = ReducedOperator(law, get_geometry(mesh, maps), bases, dist_config)
    return op.objective(coords, mu, rho=weights)


def build_lp(law, mesh, maps, bases, guess_weights, training_solutions, config, dist_config):
    """Assemble the weight-training LP at frozen training solutions.

    ``training_solutions`` maps each parameter in ``config.xi`` (by
    position) to the reduced coordinates of the EQP solve performed
    with the guess weights.  Columns of the constraint matrix are the
    per-element optimality-residual contributions, split into volume
    and face blocks; the right-hand sides are their all-ones sums, so
    the all-ones vector is always feasible.
    """
    geom = get_geometry(mesh, maps)
    op = ReducedOperator(law, geom, bases, dist_config)
    ne = mesh.num_elements
    rows, lo, hi, labels = [], [], [], []

    areas = geom.areas
    total = geom.total_area
    rows.append(areas)
    lo.append((1.0 - config.delta) * total)
    hi.append((1.0 + config.delta) * total)
    labels.append(("dv",))

    bound = config.delta / len(config.xi)
    for j, (mu, coords) in enumerate(zip(config.xi, training_solutions)):
        parts = op.elemental_contributions(coords, mu, split=True)
        for part, name in zip(parts, ("sr-vol", "sr-face", "dr-vol", "dr-face")):
            for comp in range(part.shape[1]):
                col = part[:, comp]
                center = float(np.sum(col))
                rows.append(col)
                lo.append(center - bound)
                hi.append(center + bound)
                labels.append((name, j, comp))
    lp = LpProblem(
        c=np.ones(ne),
        A=np.asarray(rows),
        lo_row=np.asarray(lo),
        hi_row=np.asarray(hi),
        lb=np.zeros(ne),
        row_labels=labels,
        fallback=np.asarray(guess_weights.rho, dtype=float).copy(),
    )
    return lp


def solve_weight_lp(lp):
    """Solve a training LP to a (sparse) vertex optimum."""
    sol = solve_lp(lp)
    rho = np.where(sol.x > 1e-13, sol.x, 0.0)
    return WeightVector(rho), sol


def train_weights(
    law,
    mesh,
    maps,
    bases,
    guess_weights,
    config,
    dist_config,
    lm_config=None,
    return_solutions=False,
):
    """Retrain the quadrature weights for the current bases.

    Solves the weighted reduced problem at every training parameter
    with the guess weights frozen (the plain reduced problem when the
    guess is all ones), builds the LP at those solutions, and returns
    the vertex-optimal weights.  Training points whose solve fails are
    dropped with a warning.
    """
    lm_config = lm_config or LmConfig()
    op = ReducedOperator(law, get_geometry(mesh, maps), bases, dist_config)
    solutions, kept = [], []
    for j, mu in enumerate(config.xi):
        problem = ReducedTrackingProblem(op, mu, rho=guess_weights)
        result = lm_solve(problem, lm_config)
        if not result.converged and not np.isfinite(result.objective):
            warnings.warn(f"EQP training solve failed at parameter {mu}; dropping point")
            continue
        if not result.converged:
            log.info("training solve at %s stopped early (%s)", mu, result.reason)
        solutions.append(ReducedCoords(result.w, result.tau))
        kept.append(j)
    if not solutions:
        raise RuntimeError("all EQP training solves failed")
    sub = EqpTrainingConfig(delta=config.delta, xi=config.xi[kept])
    lp = build_lp(law, mesh, maps, bases, guess_weights, solutions, sub, dist_config)
    weights, sol = solve_weight_lp(lp)
    log.info(
        "EQP weights: %d/%d active (%.1f%%), LP %s in %d iterations",
        len(weights.active),
        mesh.num_elements,
        100.0 * weights.sparsity,
        sol.status,
        sol.n_iters,
    )
    if return_solutions:
        return weights, solutions
    return weights
