"""Full-space feature tracking and snapshot-alignment problems.

Both are instances of the same split-variable minimization the reduced
solver handles: state coordinates (full DG vector or reduced basis
coefficients) paired with free deformation degrees of freedom.  Nodes
on the domain boundary slide tangentially and corners stay fixed, so
every admissible deformation keeps the computational domain intact; for
axis-aligned boxes the free deformation parameters are simply a subset
of the coordinate DoFs.
"""

import numpy as np
import scipy.sparse as sp

from .dg import assemble_enriched, assemble_global, initial_state
from .distortion import assemble_distortion
from .geometry import get_geometry


def boundary_slide_dofs(mesh, tol_rel=1e-9):
    """Indices of coordinate DoFs free to move under boundary sliding.

    Interior nodes contribute both coordinates, edge nodes of the
    bounding box only their tangential coordinate, corners none.
    """
    pts = mesh.nodes
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    tol = tol_rel * max(x1 - x0, y1 - y0)
    on_v = (np.abs(pts[:, 0] - x0) < tol) | (np.abs(pts[:, 0] - x1) < tol)
    on_h = (np.abs(pts[:, 1] - y0) < tol) | (np.abs(pts[:, 1] - y1) < tol)
    free = []
    for v in range(mesh.num_nodes):
        if not on_v[v]:
            free.append(2 * v)
        if not on_h[v]:
            free.append(2 * v + 1)
    return np.asarray(free, dtype=np.int64)


class TrackingProblem:
    """LM problem over (state, sliding deformation) at one parameter.

    ``state_basis=None`` gives the full-space problem (the state block
    is the whole DG vector, Gauss-Newton blocks stay sparse); passing a
    basis matrix gives the snapshot-alignment problem where only the
    deformation is full-dimensional.

    With ``enrich=True`` the objective tests the PDE residual against a
    degree p+1 space.  The plain residual is a square system that has
    (oscillatory) solutions on arbitrary meshes, so a full-space
    least-squares on it is already at a global minimum and never moves
    the mesh; the enriched residual is overdetermined and is minimized
    by feature-aligned meshes.
    """

    def __init__(
        self,
        law,
        mesh,
        maps,
        mu,
        dist_config,
        state_basis=None,
        U0=None,
        x0=None,
        w0=None,
        enrich=True,
    ):
        self.law = law
        self.mesh = mesh
        self.maps = maps
        self.mu = np.asarray(mu, dtype=float)
        self.dist = dist_config
        self.enrich = enrich
        self.geom = get_geometry(mesh, maps)
        self.X = mesh.nodes.ravel().copy()
        self.free = boundary_slide_dofs(mesh)
        self.phi = None if state_basis is None else np.asarray(state_basis, dtype=float)
        if self.phi is None:
            if U0 is None:
                U0 = initial_state(law, mesh, maps, self.X, mu)
            self._w0 = np.asarray(U0, dtype=float).copy()
        else:
            self._w0 = (
                np.zeros(self.phi.shape[1]) if w0 is None else np.asarray(w0, dtype=float)
            )
        if x0 is None:
            self._z0 = np.zeros(len(self.free))
        else:
            self._z0 = (np.asarray(x0, dtype=float) - self.X)[self.free]

    @property
    def nw(self):
        return len(self._w0)

    @property
    def ntau(self):
        return len(self.free)

    def initial_guess(self):
        return self._w0.copy(), self._z0.copy()

    def coords_from(self, z):
        x = self.X.copy()
        x[self.free] += z
        return x

    def state_from(self, w):
        return w if self.phi is None else self.phi @ w

    def _residual(self, U, x, want_jacobians):
        if self.enrich:
            return assemble_enriched(
                self.law, self.mesh, self.maps, U, x, self.mu,
                want_jacobians=want_jacobians,
            )
        return assemble_global(
            self.law, self.mesh, self.maps, U, x, self.mu,
            want_jacobians=want_jacobians,
        )

    def objective(self, w, z):
        x = self.coords_from(z)
        U = self.state_from(w)
        R, _, _ = self._residual(U, x, want_jacobians=False)
        N, _ = assemble_distortion(self.mesh, self.maps, x, self.dist, want_jacobian=False)
        return 0.5 * float(R @ R + N @ N)

    def derivatives(self, w, z):
        x = self.coords_from(z)
        U = self.state_from(w)
        R, Ju, Jx = self._residual(U, x, want_jacobians=True)
        N, Jn = assemble_distortion(self.mesh, self.maps, x, self.dist)
        J = 0.5 * float(R @ R + N @ N)
        free = self.free
        Jxf = Jx[:, free]
        Jnf = Jn[:, free]
        T = Jxf.T @ R + Jnf.T @ N
        H_tt = (Jxf.T @ Jxf + Jnf.T @ Jnf).tocsr()
        if self.phi is None:
            S = Ju.T @ R
            H_ww = (Ju.T @ Ju).tocsr()
            H_wt = (Ju.T @ Jxf).tocsr()
        else:
            JuP = Ju @ self.phi  # (N_u, k) dense
            S = JuP.T @ R
            H_ww = JuP.T @ JuP
            H_wt = sp.csr_matrix((Jxf.T @ JuP).T)  # dense (k, nfree)
        return J, np.asarray(S), np.asarray(T), H_ww, H_wt, H_tt
