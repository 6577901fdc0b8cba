"""Mesh-distortion residual penalizing deviation from reference quality.

The elemental distortion integrates the squared ratio of the mapping
gradient's Frobenius norm to a floored Jacobian determinant; the
residual is the excess over the same quantity at the reference
coordinates, scaled by a regularization weight.  Inverted elements
produce large finite values through the determinant floor rather than
errors, so optimizer line searches see a steep but usable landscape.
"""

from dataclasses import dataclass

import numpy as np

from . import dual
from .geometry import get_geometry


@dataclass(frozen=True)
class DistortionConfig:
    kappa: float
    eps: float = 1e-8

    def __post_init__(self):
        if self.kappa <= 0.0 or self.eps <= 0.0:
            raise ValueError("kappa and eps must be positive")


def _det2(G):
    return G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]


def distortion_integral(geom, els, x_e, eps):
    """Elemental distortion integral for a batch, dual-safe in ``x_e``."""
    d = geom.mesh.dim
    Jx = dual.einsum("qgj,bgi->bqij", geom.gdphi, x_e)
    G = dual.einsum("bqik,bkj->bqij", Jx, geom.inv_jac_ref[els])
    g = _det2(G)
    fro2 = (
        G[..., 0, 0] ** 2
        + G[..., 0, 1] ** 2
        + G[..., 1, 0] ** 2
        + G[..., 1, 1] ** 2
    )
    den = dual.maximum(g, eps)
    if d != 2:
        den = den ** (2.0 / d)
    ratio = fro2 / den
    weff = geom.wq[None, :] * geom.det_ref[els, None]
    return dual.einsum("bq,bq->b", weff, ratio**2)


def reference_distortion(geom, eps):
    """Distortion integral at the reference coordinates, per element."""
    key = ("eta_ref", float(eps))
    cache = geom.extras
    if key not in cache:
        els = np.arange(geom.mesh.num_elements)
        X_e = geom.gather_coords(geom.mesh.nodes.ravel(), els)
        cache[key] = distortion_integral(geom, els, X_e, eps)
    return cache[key]


def distortion_eval(geom, els, x_e, config):
    """Elemental distortion residuals for a batch (dual-safe)."""
    eta = distortion_integral(geom, els, x_e, config.eps)
    eta_ref = reference_distortion(geom, config.eps)[els]
    return config.kappa * (eta - eta_ref)


def assemble_distortion(mesh, maps, x, config, want_jacobian=True):
    """All elemental distortion residuals and the sparse gradient.

    Returns ``N`` of shape (ne,) and, when requested, ``dN/dx`` as a CSR
    matrix of shape (ne, N_x).
    """
    import scipy.sparse as sp

    geom = get_geometry(mesh, maps)
    els = np.arange(mesh.num_elements)
    x_e = geom.gather_coords(x, els)
    if not want_jacobian:
        return distortion_eval(geom, els, x_e, config), None
    seeded = dual.seed_batch_identity(x_e, 0, 2 * geom.n_geo)
    out = distortion_eval(geom, els, seeded, config)
    rows = np.repeat(els, 2 * geom.n_geo)
    cols = maps.coord_map.ravel()
    jac = sp.coo_matrix(
        (out.tan.ravel(), (rows, cols)),
        shape=(mesh.num_elements, maps.n_global_coord),
    ).tocsr()
    return out.val, jac


def elemental_distortion(mesh, maps, elem, x_e, config):
    """Distortion residual and gradient of a single element.

    ``x_e`` holds the element's deformation coefficients (node-major,
    interleaved x/y).  Returns the scalar residual and its gradient.
    """
    geom = get_geometry(mesh, maps)
    x_e = np.asarray(x_e, dtype=float).reshape(1, geom.n_geo, 2)
    seeded = dual.seed_batch_identity(x_e, 0, 2 * geom.n_geo)
    out = distortion_eval(geom, np.array([elem]), seeded, config)
    return float(out.val[0]), out.tan[0].copy()
