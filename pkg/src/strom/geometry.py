"""Precomputed tabulations and reference-element geometry for one mesh.

Everything here is immutable after construction and shared by the DG
residual kernel, the distortion kernel, and the assemblers.  Reference
elements are straight, so reference Jacobians are constant per element;
this is checked at construction.
"""

from dataclasses import dataclass

import numpy as np

from .basis import simplex_basis, simplex_nodes
from .meshing import _LOCAL_EDGES
from .quadrature import interval_rule, triangle_rule


@dataclass
class TestSpace:
    """Residual test-space tabulations (may differ from the trial space)."""

    degree: int
    n_basis: int
    wdphi0: np.ndarray
    wphi: np.ndarray
    wphi_face: np.ndarray


class Geometry:
    """Tabulated bases, quadrature, and adjacency for a (mesh, maps) pair.

    Parameters
    ----------
    mesh : ReferenceMesh
    maps : AssemblyMaps
    quad_order : int, optional
        Volume rule exactness; defaults to ``2*q + 2*p + 1``.
    """

    def __init__(self, mesh, maps, quad_order=None):
        self.mesh = mesh
        self.maps = maps
        self.extras = {}
        p = maps.degree_sol
        q = mesh.degree_geo
        if quad_order is None:
            quad_order = 2 * q + 2 * p + 1
        self.quad_order = quad_order

        self.vol_rule = triangle_rule(quad_order)
        self.face_rule = interval_rule(quad_order)
        self.n_basis = simplex_nodes(p).shape[0]
        self.n_geo = mesh.elements.shape[1]
        self.n_comp = maps.n_comp

        # volume tabulations
        pts = self.vol_rule.points
        self.wq = self.vol_rule.weights
        self.phi, self.dphi = simplex_basis(p, pts)
        self.gphi, self.gdphi = simplex_basis(q, pts)

        # face tabulations: local face f runs from vertex f to (f+1)%3
        s = self.face_rule.points
        self.ws = self.face_rule.weights
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        self.face_pts = np.empty((3, s.size, 2))
        for f, (a, b) in enumerate(_LOCAL_EDGES):
            self.face_pts[f] = (1.0 - s)[:, None] * verts[a] + s[:, None] * verts[b]
        self.phi_face = np.empty((3, s.size, self.n_basis))
        self.gphi_face = np.empty((3, s.size, self.n_geo))
        self.gdphi_face = np.empty((3, s.size, self.n_geo, 2))
        for f in range(3):
            self.phi_face[f], _ = simplex_basis(p, self.face_pts[f])
            self.gphi_face[f], self.gdphi_face[f] = simplex_basis(q, self.face_pts[f])
        # neighbor-side traces for both orientations (0: same, 1: reversed)
        self.phi_face_opp = np.empty((3, 2, s.size, self.n_basis))
        self.phi_face_opp[:, 0] = self.phi_face
        self.phi_face_opp[:, 1] = self.phi_face[:, ::-1]

        # solution-node positions in geometry basis (for initial guesses)
        self.gphi_at_sol, _ = simplex_basis(q, simplex_nodes(p))

        self._build_reference_geometry()
        self._build_adjacency()

    # -- reference-element data ---------------------------------------
    def _build_reference_geometry(self):
        mesh = self.mesh
        verts = mesh.vertex_coords()
        d1 = verts[:, 1] - verts[:, 0]
        d2 = verts[:, 2] - verts[:, 0]
        jac = np.stack([d1, d2], axis=-1)  # (ne, 2, 2), d X / d xi
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        self.jac_ref = jac
        self.det_ref = det
        self.inv_jac_ref = inv
        self.areas = 0.5 * det
        self.total_area = float(np.sum(self.areas))

        # unit outward normals and lengths of the reference faces
        ne = mesh.num_elements
        self.face_normal = np.empty((ne, 3, 2))
        self.face_length = np.empty((ne, 3))
        for f, (a, b) in enumerate(_LOCAL_EDGES):
            t = verts[:, b] - verts[:, a]
            ln = np.hypot(t[:, 0], t[:, 1])
            self.face_length[:, f] = ln
            # CCW elements: outward normal is the right-rotated tangent
            self.face_normal[:, f, 0] = t[:, 1] / ln
            self.face_normal[:, f, 1] = -t[:, 0] / ln

        # reference-space basis gradients, constant per element
        # dphi0[e, q, n, j] = dphi[q, n, k] inv_jac_ref[e, k, j]
        self.dphi0 = np.einsum("qnk,ekj->eqnj", self.dphi, self.inv_jac_ref)
        self.wdphi0 = self.dphi0 * (self.wq[None, :, None, None] * self.det_ref[:, None, None, None])
        self.wphi = self.phi[None, :, :] * (self.wq[None, :, None] * self.det_ref[:, None, None])
        # face-integration weights folded with the trace basis
        self.wphi_face = (
            self.ws[None, None, :, None]
            * self.face_length[:, :, None, None]
            * self.phi_face[None, :, :, :]
        )

    def _build_adjacency(self):
        nbr_elem, nbr_face, nbr_flip, face_tag = self.mesh.neighbor_tables()
        self.nbr_elem = nbr_elem
        self.face_tag = face_tag
        # preselected neighbor trace tabulation per (element, face)
        sel = np.where(nbr_elem >= 0, nbr_face, 0)
        ori = nbr_flip.astype(np.int64)
        self.phi_opp = self.phi_face_opp[sel, ori]  # (ne, 3, ns, nb)
        # face-kind masks per tag id
        self.interior_mask = nbr_elem >= 0

    # -- gathers --------------------------------------------------------
    def gather_state(self, U, els):
        """Element and neighbor state blocks for a batch of elements."""
        maps = self.maps
        nb, m = self.n_basis, self.n_comp
        U = np.asarray(U)
        U_e = U[maps.state_map[els]].reshape(len(els), nb, m)
        idx = maps.neighbor_map[els]
        U_n = np.where(idx >= 0, U[np.clip(idx, 0, None)], 0.0)
        U_n = U_n.reshape(len(els), 3, nb, m)
        return U_e, U_n

    def gather_coords(self, x, els):
        return np.asarray(x)[self.maps.coord_map[els]].reshape(len(els), self.n_geo, 2)

    def state_positions(self, x):
        """Positions of all solution nodes under mapping coefficients x."""
        els = np.arange(self.mesh.num_elements)
        x_e = self.gather_coords(x, els)
        return np.einsum("ng,egi->eni", self.gphi_at_sol, x_e)

    def test_space(self, degree):
        """Tabulations for residuals tested against a richer nodal space.

        Used by the full-space tracking problems, whose objective tests
        the residual against degree p+1 functions so that it cannot be
        driven to zero on feature-misaligned meshes.
        """
        key = ("test_space", degree)
        if key not in self.extras:
            phi_t, dphi_t = simplex_basis(degree, self.vol_rule.points)
            dphi0_t = np.einsum("qnk,ekj->eqnj", dphi_t, self.inv_jac_ref)
            wdphi0_t = dphi0_t * (
                self.wq[None, :, None, None] * self.det_ref[:, None, None, None]
            )
            wphi_t = phi_t[None, :, :] * (
                self.wq[None, :, None] * self.det_ref[:, None, None]
            )
            nbt = phi_t.shape[1]
            s = self.face_rule.points
            phi_face_t = np.empty((3, s.size, nbt))
            for f in range(3):
                phi_face_t[f], _ = simplex_basis(degree, self.face_pts[f])
            wphi_face_t = (
                self.ws[None, None, :, None]
                * self.face_length[:, :, None, None]
                * phi_face_t[None, :, :, :]
            )
            self.extras[key] = TestSpace(
                degree=degree,
                n_basis=nbt,
                wdphi0=wdphi0_t,
                wphi=wphi_t,
                wphi_face=wphi_face_t,
            )
        return self.extras[key]


def get_geometry(mesh, maps, quad_order=None):
    """Cached Geometry for a (mesh, maps) pair."""
    key = (maps.degree_sol, maps.n_comp, quad_order)
    cache = getattr(mesh, "_geometry_cache", None)
    if cache is None:
        cache = {}
        mesh._geometry_cache = cache
    if key not in cache:
        cache[key] = Geometry(mesh, maps, quad_order)
    return cache[key]
