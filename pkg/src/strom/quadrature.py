"""Quadrature rules on the unit triangle and the unit interval.

The unit triangle is ``{(x, y) : x >= 0, y >= 0, x + y <= 1}`` with
measure 1/2.  Rules are symmetric with strictly positive weights; above
the tabulated degrees a collapsed (Duffy) tensor-product Gauss rule is
used, which keeps weights positive at any order.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Integration rule on a reference cell.

    Attributes
    ----------
    points : ndarray, shape (nq, dim) or (nq,)
        Quadrature point coordinates.
    weights : ndarray, shape (nq,)
        Positive weights summing to the reference-cell measure.
    order : int
        Highest polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")


def _orbit1(a):
    # permutations of barycentric (a, a, 1-2a)
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


# Tabulated symmetric triangle rules, keyed by exact degree.  Barycentric
# coordinates (l1, l2, l3) map to (x, y) = (l2, l3); weights stored relative
# to a total of 1 and scaled by the triangle measure 1/2 on construction.
_TRI_RULES = {
    1: ([(1.0 / 3.0, 1.0 / 3.0)], [1.0]),
    2: (
        [(1.0 / 6.0, 1.0 / 6.0), (2.0 / 3.0, 1.0 / 6.0), (1.0 / 6.0, 2.0 / 3.0)],
        [1.0 / 3.0] * 3,
    ),
    4: (
        _orbit1(0.445948490915965) + _orbit1(0.091576213509771),
        [0.223381589678011] * 3 + [0.109951743655322] * 3,
    ),
    5: (
        [(1.0 / 3.0, 1.0 / 3.0)]
        + _orbit1(0.470142064105115)
        + _orbit1(0.101286507323456),
        [0.225]
        + [0.132394152788506] * 3
        + [0.125939180544827] * 3,
    ),
}


def interval_rule(order):
    """Gauss-Legendre rule on [0, 1] exact to the given degree."""
    n = max(1, (order + 2) // 2)
    pts, wts = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(
        points=0.5 * (pts + 1.0), weights=0.5 * wts, order=2 * n - 1
    )


def _duffy_rule(order):
    # Collapsed square: (x, y) = (s, t(1-s)), dx dy = (1-s) ds dt.  The extra
    # (1-s) factor raises the s-degree by one, hence the +1 below.
    n = max(1, (order + 3) // 2)
    p1, w1 = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (p1 + 1.0)
    w = 0.5 * w1
    S, T = np.meshgrid(s, s, indexing="ij")
    WS, WT = np.meshgrid(w, w, indexing="ij")
    x = S
    y = T * (1.0 - S)
    wts = WS * WT * (1.0 - S)
    pts = np.column_stack([x.ravel(), y.ravel()])
    return QuadratureRule(points=pts, weights=wts.ravel(), order=order)


def triangle_rule(order):
    """Symmetric positive rule on the unit triangle exact to ``order``."""
    if order < 1:
        order = 1
    for deg in sorted(_TRI_RULES):
        if deg >= order:
            pts, wts = _TRI_RULES[deg]
            return QuadratureRule(
                points=np.asarray(pts, dtype=float),
                weights=0.5 * np.asarray(wts, dtype=float),
                order=deg,
            )
    return _duffy_rule(order)
