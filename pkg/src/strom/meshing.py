"""Reference simplex meshes, DG assembly maps, and the domain mapping.

The reference mesh lives on a fixed domain; all deformation happens
through :class:`DomainMapping` coefficients (nodal coordinates of the
mesh in the deformed configuration).  State degrees of freedom are laid
out element-major so that element state slices are contiguous and the
per-element index sets are disjoint by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .basis import simplex_basis, simplex_nodes

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


class MeshError(ValueError):
    pass


@dataclass
class ReferenceMesh:
    """Straight-sided simplex mesh of the reference domain.

    Attributes
    ----------
    dim : int
        Spatial dimension (2).
    degree_geo : int
        Polynomial degree of the domain mapping (nodes include edge
        nodes for degree 2).
    nodes : ndarray, shape (nv, 2)
        Reference node coordinates.
    elements : ndarray, shape (ne, n_geo_nodes)
        Node connectivity, counterclockwise vertices first.
    interior_faces : ndarray, shape (nif, 4)
        Rows ``(elem_l, face_l, elem_r, face_r)``.
    boundary_faces : ndarray, shape (nbf, 3)
        Rows ``(elem, face, tag)``.
    boundary_tags : dict
        Name -> integer tag.
    """

    dim: int
    degree_geo: int
    nodes: np.ndarray
    elements: np.ndarray
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.interior_faces = np.asarray(self.interior_faces, dtype=np.int64).reshape(-1, 4)
        self.boundary_faces = np.asarray(self.boundary_faces, dtype=np.int64).reshape(-1, 3)
        self._neighbor_cache = None

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_elements(self):
        return self.elements.shape[0]

    @property
    def num_vertices(self):
        return int(self.elements[:, :3].max()) + 1 if self.num_elements else 0

    def vertex_coords(self):
        """Vertex coordinates per element, shape (ne, 3, 2)."""
        return self.nodes[self.elements[:, :3]]

    def element_areas(self):
        v = self.vertex_coords()
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def neighbor_tables(self):
        """Per-(element, local face) adjacency.

        Returns arrays of shape (ne, 3): neighbor element (-1 on the
        boundary), the neighbor's local face id, a flip flag (True when
        the neighbor traverses the shared edge in reverse, the usual
        case for consistently oriented meshes), and the boundary tag
        (-1 on interior faces).
        """
        if self._neighbor_cache is not None:
            return self._neighbor_cache
        ne = self.num_elements
        nbr_elem = -np.ones((ne, 3), dtype=np.int64)
        nbr_face = -np.ones((ne, 3), dtype=np.int64)
        nbr_flip = np.zeros((ne, 3), dtype=bool)
        face_tag = -np.ones((ne, 3), dtype=np.int64)
        for el, fl, er, fr in self.interior_faces:
            nbr_elem[el, fl], nbr_face[el, fl] = er, fr
            nbr_elem[er, fr], nbr_face[er, fr] = el, fl
            a_l = self.elements[el, _LOCAL_EDGES[fl][0]]
            a_r = self.elements[er, _LOCAL_EDGES[fr][0]]
            flip = a_l != a_r
            nbr_flip[el, fl] = flip
            nbr_flip[er, fr] = flip
        for e, f, tag in self.boundary_faces:
            face_tag[e, f] = tag
        self._neighbor_cache = (nbr_elem, nbr_face, nbr_flip, face_tag)
        return self._neighbor_cache

    def validate(self, tol=1e-12):
        """Check orientation, face bookkeeping, and shared-face geometry."""
        if self.dim != 2:
            raise MeshError("only 2D simplex meshes are supported")
        areas = self.element_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"element {bad} has non-positive orientation")
        seen = {}
        for e in range(self.num_elements):
            for f, (a, b) in enumerate(_LOCAL_EDGES):
                key = tuple(sorted((self.elements[e, a], self.elements[e, b])))
                seen.setdefault(key, []).append((e, f))
        counts = {k: len(v) for k, v in seen.items()}
        n_int = sum(1 for c in counts.values() if c == 2)
        n_bnd = sum(1 for c in counts.values() if c == 1)
        if np.any(np.array(list(counts.values())) > 2):
            raise MeshError("an edge is shared by more than two elements")
        if n_int != len(self.interior_faces) or n_bnd != len(self.boundary_faces):
            raise MeshError("face records inconsistent with element connectivity")
        for el, fl, er, fr in self.interior_faces:
            pl = self.nodes[self._face_nodes(el, fl)]
            pr = self.nodes[self._face_nodes(er, fr)]
            match = np.allclose(pl, pr, atol=tol, rtol=0.0) or np.allclose(
                pl, pr[::-1], atol=tol, rtol=0.0
            )
            if not match:
                raise MeshError(f"shared face of elements {el}/{er} does not match")
        if self.degree_geo >= 2:
            self._check_straight(tol)
        return True

    def _face_nodes(self, e, f):
        a, b = _LOCAL_EDGES[f]
        ids = [self.elements[e, a], self.elements[e, b]]
        if self.degree_geo >= 2:
            per = self.degree_geo - 1
            ids[1:1] = list(self.elements[e, 3 + f * per : 3 + (f + 1) * per])
        return np.asarray(ids)

    def _check_straight(self, tol):
        # reference elements must be straight; edge nodes sit on the chord
        ref = simplex_nodes(self.degree_geo)
        verts = self.vertex_coords()
        lin = (
            (1.0 - ref[:, 0] - ref[:, 1])[None, :, None] * verts[:, None, 0]
            + ref[:, 0][None, :, None] * verts[:, None, 1]
            + ref[:, 1][None, :, None] * verts[:, None, 2]
        )
        actual = self.nodes[self.elements]
        if not np.allclose(actual, lin, atol=1e-9, rtol=0.0):
            raise MeshError("curved reference elements are not supported")


@dataclass
class AssemblyMaps:
    """Index maps scattering element-local DoFs into global vectors.

    ``state_map`` realizes the element state assembly (disjoint,
    element-major slices), ``neighbor_map`` the neighbor-state assembly
    (three blocks in local-face order, -1 where a face has no
    neighbor), and ``coord_map`` the deformation assembly (node-major,
    interleaved x/y).
    """

    state_map: np.ndarray
    neighbor_map: np.ndarray
    coord_map: np.ndarray
    n_global_state: int
    n_global_coord: int
    degree_sol: int
    n_comp: int

    @property
    def n_state_elem(self):
        return self.state_map.shape[1]

    @property
    def n_neighbor_elem(self):
        return self.neighbor_map.shape[1]

    @property
    def n_coord_elem(self):
        return self.coord_map.shape[1]


def build_assembly_maps(mesh, degree_sol=1, n_comp=1):
    ne = mesh.num_elements
    nb = simplex_nodes(degree_sol).shape[0]
    n_u = nb * n_comp
    state = (np.arange(ne)[:, None] * n_u + np.arange(n_u)[None, :]).astype(np.int64)
    nbr_elem, _, _, _ = mesh.neighbor_tables()
    neighbor = -np.ones((ne, 3 * n_u), dtype=np.int64)
    for f in range(3):
        has = nbr_elem[:, f] >= 0
        neighbor[has, f * n_u : (f + 1) * n_u] = state[nbr_elem[has, f]]
    ng = mesh.elements.shape[1]
    coord = np.empty((ne, 2 * ng), dtype=np.int64)
    coord[:, 0::2] = 2 * mesh.elements
    coord[:, 1::2] = 2 * mesh.elements + 1
    return AssemblyMaps(
        state_map=state,
        neighbor_map=neighbor,
        coord_map=coord,
        n_global_state=ne * n_u,
        n_global_coord=2 * mesh.num_nodes,
        degree_sol=degree_sol,
        n_comp=n_comp,
    )


@dataclass
class DomainMapping:
    """Nodal coefficients of the piecewise-polynomial domain mapping."""

    coeffs: np.ndarray
    reference_coeffs: np.ndarray

    @classmethod
    def identity(cls, mesh):
        x = mesh.nodes.ravel().copy()
        return cls(coeffs=x.copy(), reference_coeffs=x)


def reference_coefficients(mesh):
    """Flattened nodal coordinates (the identity-mapping coefficients)."""
    return mesh.nodes.ravel().copy()


def mapping_eval(mesh, maps, mapping, elem, ref_points):
    """Evaluate the elemental mapping, its gradient, and determinant.

    ``ref_points`` are local coordinates in the unit triangle.  Returns
    physical points (n, 2), mapping gradients (n, 2, 2) with respect to
    reference coordinates, and determinants (n,).  Negative determinants
    are returned as-is; callers decide how to treat degeneracy.
    """
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    vals, grads = simplex_basis(mesh.degree_geo, ref_points)
    x_e = mapping.coeffs[maps.coord_map[elem]].reshape(-1, 2)
    X_e = mapping.reference_coeffs[maps.coord_map[elem]].reshape(-1, 2)
    phys = vals @ x_e
    jac_x = np.einsum("pgj,gi->pij", grads, x_e)
    jac_X = np.einsum("pgj,gi->pij", grads, X_e)
    G = jac_x @ np.linalg.inv(jac_X)
    g = np.linalg.det(G)
    return phys, G, g


def _elevate_to_quadratic(nodes, elements):
    edge_mid = {}
    nodes = list(map(tuple, nodes))
    new_elems = []
    for conn in elements:
        extra = []
        for a, b in _LOCAL_EDGES:
            key = tuple(sorted((conn[a], conn[b])))
            if key not in edge_mid:
                mid = 0.5 * (np.asarray(nodes[key[0]]) + np.asarray(nodes[key[1]]))
                edge_mid[key] = len(nodes)
                nodes.append(tuple(mid))
            extra.append(edge_mid[key])
        new_elems.append(list(conn) + extra)
    return np.asarray(nodes, dtype=float), np.asarray(new_elems, dtype=np.int64)


BOX_TAGS = {"left": 0, "right": 1, "bottom": 2, "top": 3}


def build_structured_mesh(domain_box, nx, ny, degree_geo=1, degree_sol=1, n_comp=1):
    """Triangulate a box into ``2*nx*ny`` simplices with assembly maps.

    Parameters
    ----------
    domain_box : array-like
        Two corner points ``((x0, y0), (x1, y1))``.
    nx, ny : int
        Cell counts per direction (>= 1).
    degree_geo : int
        Mapping degree q (1 or 2).
    degree_sol, n_comp : int
        Solution degree and component count used to size the state maps.
    """
    box = np.asarray(domain_box, dtype=float).reshape(2, 2)
    (x0, y0), (x1, y1) = box
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if abs((x1 - x0) * (y1 - y0)) < 1e-300:
        raise ValueError("degenerate domain box (zero area)")
    if degree_geo not in (1, 2):
        raise ValueError("degree_geo must be 1 or 2")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    elems = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = nid(i, j), nid(i + 1, j)
            v11, v01 = nid(i + 1, j + 1), nid(i, j + 1)
            elems.append((v00, v10, v11))
            elems.append((v00, v11, v01))
    elements = np.asarray(elems, dtype=np.int64)
    if degree_geo == 2:
        nodes, elements = _elevate_to_quadratic(nodes, elements)

    interior, boundary = _build_faces(nodes, elements, box)
    mesh = ReferenceMesh(
        dim=2,
        degree_geo=degree_geo,
        nodes=nodes,
        elements=elements,
        interior_faces=interior,
        boundary_faces=boundary,
        boundary_tags=dict(BOX_TAGS),
    )
    mesh.validate()
    maps = build_assembly_maps(mesh, degree_sol=degree_sol, n_comp=n_comp)
    return mesh, maps


def _build_faces(nodes, elements, box):
    (x0, y0), (x1, y1) = box
    seen = {}
    for e, conn in enumerate(elements):
        for f, (a, b) in enumerate(_LOCAL_EDGES):
            key = tuple(sorted((conn[a], conn[b])))
            seen.setdefault(key, []).append((e, f))
    interior, boundary = [], []
    tol = 1e-9 * max(abs(x1 - x0), abs(y1 - y0))
    for key, refs in sorted(seen.items()):
        if len(refs) == 2:
            (el, fl), (er, fr) = refs
            interior.append((el, fl, er, fr))
        else:
            (e, f) = refs[0]
            mid = 0.5 * (nodes[key[0]] + nodes[key[1]])
            if abs(mid[0] - x0) < tol:
                tag = BOX_TAGS["left"]
            elif abs(mid[0] - x1) < tol:
                tag = BOX_TAGS["right"]
            elif abs(mid[1] - y0) < tol:
                tag = BOX_TAGS["bottom"]
            elif abs(mid[1] - y1) < tol:
                tag = BOX_TAGS["top"]
            else:
                raise MeshError("boundary face not on the box boundary")
            boundary.append((e, f, tag))
    return (
        np.asarray(interior, dtype=np.int64).reshape(-1, 4),
        np.asarray(boundary, dtype=np.int64).reshape(-1, 3),
    )


def rebuild_with_nodes(mesh, new_nodes):
    """Same connectivity and tags on relocated nodes (re-referencing)."""
    out = ReferenceMesh(
        dim=mesh.dim,
        degree_geo=mesh.degree_geo,
        nodes=np.asarray(new_nodes, dtype=float).reshape(-1, 2).copy(),
        elements=mesh.elements.copy(),
        interior_faces=mesh.interior_faces.copy(),
        boundary_faces=mesh.boundary_faces.copy(),
        boundary_tags=dict(mesh.boundary_tags),
    )
    out.validate()
    return out


# -- plain-text persistence (stmesh format) ---------------------------
#
# Line 1:  stmesh <dim> <q> <N_v> <N_e>
# N_v lines of node coordinates, N_e lines of 0-based connectivity,
# one line "tags <n>" followed by "<name> <id>" lines, one line
# "faces <n_interior> <n_boundary>", then interior rows
# "i <eL> <fL> <eR> <fR>" and boundary rows "b <e> <f> <tag>".


def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(
            f"stmesh {mesh.dim} {mesh.degree_geo} "
            f"{mesh.num_nodes} {mesh.num_elements}\n"
        )
        for p in mesh.nodes:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for conn in mesh.elements:
            fh.write(" ".join(str(int(i)) for i in conn) + "\n")
        fh.write(f"tags {len(mesh.boundary_tags)}\n")
        for name, tag in sorted(mesh.boundary_tags.items(), key=lambda kv: kv[1]):
            fh.write(f"{name} {tag}\n")
        fh.write(
            f"faces {len(mesh.interior_faces)} {len(mesh.boundary_faces)}\n"
        )
        for row in mesh.interior_faces:
            fh.write("i " + " ".join(str(int(v)) for v in row) + "\n")
        for row in mesh.boundary_faces:
            fh.write("b " + " ".join(str(int(v)) for v in row) + "\n")


def load_mesh(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != "stmesh":
        raise MeshError("not an stmesh file")
    dim, q, nv, ne = (int(v) for v in head[1:5])
    k = 1
    nodes = np.array([[float(v) for v in lines[k + i].split()] for i in range(nv)])
    k += nv
    elements = np.array(
        [[int(v) for v in lines[k + i].split()] for i in range(ne)], dtype=np.int64
    )
    k += ne
    ntags = int(lines[k].split()[1])
    k += 1
    tags = {}
    for i in range(ntags):
        name, tid = lines[k + i].split()
        tags[name] = int(tid)
    k += ntags
    nif, nbf = (int(v) for v in lines[k].split()[1:3])
    k += 1
    interior, boundary = [], []
    for ln in lines[k : k + nif + nbf]:
        parts = ln.split()
        if parts[0] == "i":
            interior.append([int(v) for v in parts[1:5]])
        else:
            boundary.append([int(v) for v in parts[1:4]])
    mesh = ReferenceMesh(
        dim=dim,
        degree_geo=q,
        nodes=nodes,
        elements=elements,
        interior_faces=np.asarray(interior, dtype=np.int64).reshape(-1, 4),
        boundary_faces=np.asarray(boundary, dtype=np.int64).reshape(-1, 3),
        boundary_tags=tags,
    )
    mesh.validate()
    return mesh
