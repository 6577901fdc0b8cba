"""Reduced bases, reconstruction, and reduced optimality residuals.

The reduced state is ``U = Phi w`` and the reduced deformation is
``x = X + Psi tau``.  All reduced quantities are assembled elementally:
the kernel is seeded with per-element basis slices so one dual pass
yields the residuals, their (w, tau)-Jacobians, and the Gauss-Newton
blocks without ever forming global Jacobians.
"""

from dataclasses import dataclass

import numpy as np

from . import dual
from .dg import element_eval
from .distortion import distortion_eval
from .geometry import get_geometry


class BasisInSpanError(ValueError):
    """New column is numerically inside the span of the basis."""


@dataclass
class ReducedCoords:
    w: np.ndarray
    tau: np.ndarray


class ReducedBases:
    """Orthonormal state and deformation bases with per-element slices.

    Parameters
    ----------
    phi : ndarray (N_u, k_u)
    psi : ndarray (N_x, k_x)
    ref_coords : ndarray (N_x,)
        Reference deformation coefficients X.
    """

    def __init__(self, phi, psi, ref_coords):
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        self.phi = phi[:, None] if phi.ndim == 1 else phi
        self.psi = psi[:, None] if psi.ndim == 1 else psi
        self.ref_coords = np.asarray(ref_coords, dtype=float)
        self._slices = None

    @property
    def k_u(self):
        return self.phi.shape[1]

    @property
    def k_x(self):
        return self.psi.shape[1]

    def check_orthonormal(self, tol=1e-12):
        for mat in (self.phi, self.psi):
            if mat.shape[1] == 0:
                continue
            err = np.max(np.abs(mat.T @ mat - np.eye(mat.shape[1])))
            if err > tol:
                raise ValueError(f"basis not orthonormal (deviation {err:.2e})")
        return True

    def element_slices(self, geom):
        """Per-element slices (phi_e, phi_n, psi_e), cached."""
        if self._slices is None:
            maps = geom.maps
            phi_e = self.phi[maps.state_map]  # (ne, n_u, k_u)
            nmap = maps.neighbor_map
            phi_n = np.where(
                (nmap >= 0)[:, :, None], self.phi[np.clip(nmap, 0, None)], 0.0
            )
            psi_e = self.psi[maps.coord_map]  # (ne, n_x, k_x)
            X_e = self.ref_coords[maps.coord_map]
            self._slices = (phi_e, phi_n, psi_e, X_e)
        return self._slices


def reconstruct(bases, coords):
    """Lift reduced coordinates: ``(Phi w, X + Psi tau)``."""
    U = bases.phi @ coords.w if bases.k_u else np.zeros(bases.phi.shape[0])
    x = bases.ref_coords + (bases.psi @ coords.tau if bases.k_x else 0.0)
    return U, x


def gram_schmidt_append(basis, new_column, tol=1e-10):
    """Extend an orthonormal basis by one column (modified Gram-Schmidt).

    One re-orthogonalization pass is applied.  Raises
    :class:`BasisInSpanError` when the column is numerically inside the
    existing span (projection residual below ``tol`` times the column
    norm).
    """
    col = np.asarray(new_column, dtype=float).copy()
    nrm0 = np.linalg.norm(col)
    if nrm0 == 0.0:
        raise BasisInSpanError("zero column")
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.size == 0:
        return (col / nrm0).reshape(-1, 1)
    if basis.shape[0] != col.shape[0]:
        basis = basis.reshape(col.shape[0], -1)
    v = col
    for _ in range(2):
        v = v - basis @ (basis.T @ v)
    nrm = np.linalg.norm(v)
    if nrm < tol * nrm0:
        raise BasisInSpanError(
            f"column inside span (residual {nrm:.3e} vs norm {nrm0:.3e})"
        )
    return np.column_stack([basis, v / nrm])


class ReducedOperator:
    """Elemental assembler for reduced and weighted reduced quantities.

    One instance binds (law, geometry, bases, distortion config).  The
    ``rho`` argument of every method selects the weighting: ``None``
    means unit weights over all elements (the plain reduced model),
    otherwise only elements in ``rho.active`` are evaluated and their
    contributions scaled, at a cost independent of the mesh size.
    """

    def __init__(self, law, geom, bases, dist_config):
        self.law = law
        self.geom = geom
        self.bases = bases
        self.dist = dist_config
        self.stats = {"kernel_calls": 0, "elements_evaluated": 0}

    # -- gathers ----------------------------------------------------------
    def _batch(self, rho):
        if rho is None:
            els = np.arange(self.geom.mesh.num_elements)
            weights = None
        else:
            els = rho.active
            weights = rho.rho[els]
        return els, weights

    def _inputs(self, els, coords, seeded):
        phi_e, phi_n, psi_e, X_e = self.bases.element_slices(self.geom)
        w, tau = coords.w, coords.tau
        ku, kx = self.bases.k_u, self.bases.k_x
        nb, m, ng = self.geom.n_basis, self.geom.n_comp, self.geom.n_geo
        B = len(els)
        U_e = (phi_e[els] @ w).reshape(B, nb, m)
        U_n = (phi_n[els] @ w).reshape(B, 3, nb, m)
        x_e = (X_e[els] + (psi_e[els] @ tau if kx else 0.0)).reshape(B, ng, 2)
        if not seeded:
            return U_e, U_n, x_e
        T = ku + kx
        tan_Ue = np.zeros((B, nb, m, T))
        tan_Un = np.zeros((B, 3, nb, m, T))
        tan_xe = np.zeros((B, ng, 2, T))
        tan_Ue[..., :ku] = phi_e[els].reshape(B, nb, m, ku)
        tan_Un[..., :ku] = phi_n[els].reshape(B, 3, nb, m, ku)
        tan_xe[..., ku:] = psi_e[els].reshape(B, ng, 2, kx)
        return (
            dual.Dual(U_e, tan_Ue),
            dual.Dual(U_n, tan_Un),
            dual.Dual(x_e, tan_xe),
        )

    def _count(self, els):
        self.stats["kernel_calls"] += 1
        self.stats["elements_evaluated"] += len(els)

    # -- evaluations -------------------------------------------------------
    def objective(self, coords, mu, rho=None):
        """Half squared norm of the (weighted) stacked residual."""
        els, weights = self._batch(rho)
        if len(els) == 0:
            return 0.0
        U_e, U_n, x_e = self._inputs(els, coords, seeded=False)
        self._count(els)
        out = element_eval(self.law, self.geom, els, U_e, U_n, x_e, mu)
        dist = distortion_eval(self.geom, els, x_e, self.dist)
        r2 = np.sum(out.res**2, axis=1) + dist**2
        if weights is None:
            return 0.5 * float(np.sum(r2))
        return 0.5 * float(np.dot(weights, r2))

    def _dual_eval(self, coords, mu, rho):
        els, weights = self._batch(rho)
        U_e, U_n, x_e = self._inputs(els, coords, seeded=True)
        self._count(els)
        out = element_eval(self.law, self.geom, els, U_e, U_n, x_e, mu)
        dist = distortion_eval(self.geom, els, x_e, self.dist)
        rho_b = np.ones(len(els)) if weights is None else weights
        return els, rho_b, out, dist

    def residuals(self, coords, mu, rho=None):
        """First-order optimality residuals (S, T) of the objective."""
        ku, kx = self.bases.k_u, self.bases.k_x
        if self.geom.mesh.num_elements == 0 or (ku == 0 and kx == 0):
            return np.zeros(ku), np.zeros(kx)
        _, rho_b, out, dist = self._dual_eval(coords, mu, rho)
        Jw = out.res.tan[:, :, :ku]
        Jt = out.res.tan[:, :, ku:]
        dN = dist.tan[:, ku:]
        S = np.einsum("b,bik,bi->k", rho_b, Jw, out.res.val)
        T = np.einsum("b,bik,bi->k", rho_b, Jt, out.res.val)
        T += np.einsum("b,bk,b->k", rho_b, dN, dist.val)
        return S, T

    def derivatives(self, coords, mu, rho=None):
        """Objective, gradients, and Gauss-Newton blocks in one pass."""
        ku, kx = self.bases.k_u, self.bases.k_x
        _, rho_b, out, dist = self._dual_eval(coords, mu, rho)
        Jw = out.res.tan[:, :, :ku]
        Jt = out.res.tan[:, :, ku:]
        dN = dist.tan[:, ku:]
        res = out.res.val
        S = np.einsum("b,bik,bi->k", rho_b, Jw, res)
        T = np.einsum("b,bik,bi->k", rho_b, Jt, res) + np.einsum(
            "b,bk,b->k", rho_b, dN, dist.val
        )
        H_ww = np.einsum("b,bik,bil->kl", rho_b, Jw, Jw)
        H_wt = np.einsum("b,bik,bil->kl", rho_b, Jw, Jt)
        H_tt = np.einsum("b,bik,bil->kl", rho_b, Jt, Jt) + np.einsum(
            "b,bk,bl->kl", rho_b, dN, dN
        )
        J = 0.5 * float(
            np.dot(rho_b, np.sum(res**2, axis=1) + dist.val**2)
        )
        return J, S, T, H_ww, H_wt, H_tt

    def elemental_contributions(self, coords, mu, split=False):
        """Per-element optimality-residual contributions over all elements.

        With ``split=True`` the PDE-residual factor is separated into its
        volume and face parts (the distortion term rides with the volume
        block); parts sum to the total contribution exactly.
        """
        ku, kx = self.bases.k_u, self.bases.k_x
        _, _, out, dist = self._dual_eval(coords, mu, rho=None)
        Jw = out.res.tan[:, :, :ku]
        Jt = out.res.tan[:, :, ku:]
        dN = dist.tan[:, ku:]
        if not split:
            S_e = np.einsum("bik,bi->bk", Jw, out.res.val)
            T_e = np.einsum("bik,bi->bk", Jt, out.res.val) + dN * dist.val[:, None]
            return S_e, T_e
        Sv = np.einsum("bik,bi->bk", Jw, out.res_vol.val)
        Sf = np.einsum("bik,bi->bk", Jw, out.res_face.val)
        Tv = np.einsum("bik,bi->bk", Jt, out.res_vol.val) + dN * dist.val[:, None]
        Tf = np.einsum("bik,bi->bk", Jt, out.res_face.val)
        return Sv, Sf, Tv, Tf


class ReducedTrackingProblem:
    """LM problem over reduced coordinates (w, tau) at one parameter."""

    def __init__(self, operator, mu, rho=None, w0=None, tau0=None):
        self.op = operator
        self.mu = np.asarray(mu, dtype=float)
        self.rho = rho
        self._w0 = np.zeros(operator.bases.k_u) if w0 is None else np.asarray(w0, dtype=float)
        self._tau0 = (
            np.zeros(operator.bases.k_x) if tau0 is None else np.asarray(tau0, dtype=float)
        )

    @property
    def nw(self):
        return self.op.bases.k_u

    @property
    def ntau(self):
        return self.op.bases.k_x

    def initial_guess(self):
        return self._w0.copy(), self._tau0.copy()

    def objective(self, w, tau):
        return self.op.objective(ReducedCoords(w, tau), self.mu, self.rho)

    def derivatives(self, w, tau):
        return self.op.derivatives(ReducedCoords(w, tau), self.mu, self.rho)


def _operator(law, mesh, maps, bases, dist_config):
    return ReducedOperator(law, get_geometry(mesh, maps), bases, dist_config)


def reduced_objective(law, mesh, maps, bases, coords, mu, dist_config):
    """Objective of the reduced tracking problem (unit weights)."""
    return _operator(law, mesh, maps, bases, dist_config).objective(coords, mu)


def reduced_residuals(law, mesh, maps, bases, coords, mu, dist_config):
    """Reduced optimality residuals (S, T), the exact gradient of the
    reduced objective with respect to (w, tau)."""
    return _operator(law, mesh, maps, bases, dist_config).residuals(coords, mu)
