"""Nodal Lagrange bases on the unit triangle."""

import numpy as np


def simplex_nodes(degree):
    """Lagrange node layout: vertices, then edge nodes, then interior.

    The first three nodes are always the vertices (0,0), (1,0), (0,1) and
    edge nodes follow the local edge order (0-1, 1-2, 2-0), so geometry
    connectivity conventions hold for any degree.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        return verts
    nodes = [verts]
    edges = [(0, 1), (1, 2), (2, 0)]
    for a, b in edges:
        t = np.arange(1, degree)[:, None] / degree
        nodes.append((1.0 - t) * verts[a] + t * verts[b])
    interior = [
        (i / degree, j / degree)
        for i in range(1, degree)
        for j in range(1, degree - i)
    ]
    if interior:
        nodes.append(np.asarray(interior))
    return np.vstack(nodes)


def _monomials(degree, pts):
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    cols, dxs, dys = [], [], []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            cols.append(x**i * y**j)
            dxs.append(i * x ** max(i - 1, 0) * y**j if i else np.zeros_like(x))
            dys.append(j * x**i * y ** max(j - 1, 0) if j else np.zeros_like(x))
    return np.column_stack(cols), np.column_stack(dxs), np.column_stack(dys)


def simplex_basis(degree, pts):
    """Evaluate the nodal basis and its reference gradients.

    Returns
    -------
    vals : ndarray, shape (npts, nb)
    grads : ndarray, shape (npts, nb, 2)
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    nodes = simplex_nodes(degree)
    V, _, _ = _monomials(degree, nodes)
    coeff = np.linalg.inv(V)  # well conditioned for the low degrees used here
    M, Mx, My = _monomials(degree, pts)
    vals = M @ coeff
    grads = np.stack([Mx @ coeff, My @ coeff], axis=-1)
    return vals, grads
