"""Nodal DG residuals on the deformed domain, assembly, and the HDM solve.

The elemental kernel is batched over elements and written against
:mod:`strom.dual`, so values and exact directional derivatives share
one code path.  Seeding the inputs with identity tangents yields the
elemental Jacobian blocks; seeding with reduced-basis slices yields
reduced quantities directly.

Face terms use a local Lax-Friedrichs flux applied to the transformed
flux dotted with the area-weighted reference normal ``adj(G)^T N``,
which equals the physical flux through the deformed face.  Prescribed
boundaries impose their data weakly through a ghost state; extrapolation
boundaries reuse the interior trace.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dual
from .geometry import get_geometry


class DegenerateMappingError(RuntimeError):
    """Mapping Jacobian non-positive at a quadrature point."""

    def __init__(self, elements):
        self.elements = np.atleast_1d(np.asarray(elements))
        super().__init__(
            f"mapping degeneracy (g <= 0) on elements {self.elements[:8].tolist()}"
        )


@dataclass
class HdmState:
    """Global DG coefficients, element-major."""

    values: np.ndarray
    degree_sol: int


@dataclass
class ElementalResidualOutput:
    res: np.ndarray
    res_vol: np.ndarray
    res_face: np.ndarray
    jac_self: np.ndarray = None
    jac_neigh: np.ndarray = None
    jac_coord: np.ndarray = None


@dataclass
class KernelResult:
    """Batched kernel output; fields are Dual when inputs were seeded."""

    res: object
    res_vol: object
    res_face: object


def _det2(G):
    return G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]


def _adj2(G):
    row0 = dual.stack([G[..., 1, 1], -G[..., 0, 1]], axis=-1)
    row1 = dual.stack([-G[..., 1, 0], G[..., 0, 0]], axis=-1)
    return dual.stack([row0, row1], axis=-2)


def _masked_assign(dst, mask, src):
    if dual.is_dual(dst):
        return dst.set_where(mask, src)
    if dual.is_dual(src):
        src = src.val
    dst[mask] = np.broadcast_to(src, dst.shape)[mask] if np.ndim(src) == dst.ndim else src
    return dst


def element_eval(law, geom, els, U_e, U_n, x_e, mu, check_degenerate=True, test=None):
    """Batched elemental DG residual of the transformed conservation law.

    Parameters
    ----------
    els : int array (B,)
        Element indices of the batch.
    U_e, U_n, x_e :
        Element states (B, nb, m), neighbor states (B, 3, nb, m), and
        deformation coefficients (B, ng, 2); any of them may be Dual.
    test : TestSpace, optional
        Test the weak form against a different (richer) nodal space;
        the trial side is untouched.
    """
    els = np.asarray(els)
    B = len(els)
    m = geom.n_comp
    nb = geom.n_basis if test is None else test.n_basis
    wdphi0 = geom.wdphi0 if test is None else test.wdphi0
    wphi = geom.wphi if test is None else test.wphi
    wphi_face = geom.wphi_face if test is None else test.wphi_face
    bad = set()

    # -- volume term ----------------------------------------------------
    Jx = dual.einsum("qgj,bgi->bqij", geom.gdphi, x_e)
    G = dual.einsum("bkj,bqik->bqij", geom.inv_jac_ref[els], Jx)
    g = _det2(G)
    if check_degenerate and np.any(dual.value(g) <= 0.0):
        bad.update(els[np.any(dual.value(g) <= 0.0, axis=1)].tolist())
    adj = _adj2(G)
    u = dual.einsum("qn,bnc->bqc", geom.phi, U_e)
    pos = dual.einsum("qg,bgi->bqi", geom.gphi, x_e)
    if law.needs_gradient:
        du0 = dual.einsum("bqnj,bnc->bqcj", geom.dphi0[els], U_e)
        gradu = dual.einsum("bqcj,bqji->bqci", du0, adj) / dual.expand(g, 2)
    else:
        gradu = None
    f = law.flux(u, gradu, mu)
    F = dual.einsum("bqci,bqji->bqcj", f, adj)
    S = dual.expand(g, 1) * law.source(pos, u, gradu, mu)
    res_vol = -(
        dual.einsum("bqnj,bqcj->bnc", wdphi0[els], F)
        + dual.einsum("bqn,bqc->bnc", wphi[els], S)
    )

    # -- face terms -------------------------------------------------------
    tag_names = {tid: name for name, tid in geom.mesh.boundary_tags.items()}
    res_face = None
    for fidx in range(3):
        JxF = dual.einsum("sgj,bgi->bsij", geom.gdphi_face[fidx], x_e)
        GF = dual.einsum("bkj,bsik->bsij", geom.inv_jac_ref[els], JxF)
        gF = _det2(GF)
        if check_degenerate and np.any(dual.value(gF) <= 0.0):
            bad.update(els[np.any(dual.value(gF) <= 0.0, axis=1)].tolist())
        adjF = _adj2(GF)
        ntil = dual.einsum("bsji,bj->bsi", adjF, geom.face_normal[els, fidx])
        sigma = dual.sqrt(ntil[..., 0] ** 2 + ntil[..., 1] ** 2)
        nhat = ntil / dual.expand(sigma, 1)
        u_in = dual.einsum("sn,bnc->bsc", geom.phi_face[fidx], U_e)
        u_out = dual.einsum("bsn,bnc->bsc", geom.phi_opp[els, fidx], U_n[:, fidx])
        tags = geom.face_tag[els, fidx]
        posF = None
        for tid in np.unique(tags):
            if tid < 0:
                continue
            bc = law.bc(tag_names[int(tid)])
            mask = tags == tid
            if bc.kind == "extrapolate":
                u_out = _masked_assign(u_out, mask, u_in)
            else:
                if posF is None:
                    posF = dual.value(
                        dual.einsum("sg,bgi->bsi", geom.gphi_face[fidx], x_e)
                    )
                ghost = np.asarray(bc.value(posF[mask], mu), dtype=float)
                if dual.is_dual(u_out):
                    u_out.val[mask] = ghost
                    u_out.tan[mask] = 0.0
                else:
                    u_out[mask] = ghost
        f_in = law.flux(u_in, None, mu)
        f_out = law.flux(u_out, None, mu)
        fn = dual.einsum("bsci,bsi->bsc", f_in, ntil) + dual.einsum(
            "bsci,bsi->bsc", f_out, ntil
        )
        if law.dissipation is not None:
            lam = law.dissipation(u_in, u_out, nhat, mu)
        else:
            lam = dual.maximum(
                law.wavespeed(u_in, nhat, mu), law.wavespeed(u_out, nhat, mu)
            )
        H = 0.5 * fn - 0.5 * dual.expand(lam * sigma, 1) * (u_out - u_in)
        contrib = dual.einsum("bsn,bsc->bnc", wphi_face[els, fidx], H)
        res_face = contrib if res_face is None else res_face + contrib

    if bad:
        raise DegenerateMappingError(sorted(bad))
    res_vol = dual.reshape(res_vol, (B, nb * m))
    res_face = dual.reshape(res_face, (B, nb * m))
    return KernelResult(res=res_vol + res_face, res_vol=res_vol, res_face=res_face)


def seed_elemental(geom, U_e, U_n, x_e):
    """Identity-seeded inputs; tangent layout [U_e | U_n | x_e]."""
    n_u = geom.n_basis * geom.n_comp
    n_un = 3 * n_u
    n_x = 2 * geom.n_geo
    T = n_u + n_un + n_x
    return (
        dual.seed_batch_identity(U_e, 0, T),
        dual.seed_batch_identity(U_n, n_u, T),
        dual.seed_batch_identity(x_e, n_u + n_un, T),
    )


def elemental_residual(law, mesh, maps, elem, U_e, U_neigh, x_e, mu, want_jacobians=False):
    """DG residual of one element, with optional exact Jacobian blocks.

    ``U_neigh`` is the flat neighbor-state vector (three blocks in local
    face order; entries for missing neighbors are ignored).
    """
    geom = get_geometry(mesh, maps)
    nb, m, ng = geom.n_basis, geom.n_comp, geom.n_geo
    n_u = nb * m
    U_e = np.asarray(U_e, dtype=float).reshape(1, nb, m)
    U_n = np.asarray(U_neigh, dtype=float).reshape(1, 3, nb, m)
    x_e = np.asarray(x_e, dtype=float).reshape(1, ng, 2)
    els = np.array([elem])
    if not want_jacobians:
        out = element_eval(law, geom, els, U_e, U_n, x_e, mu)
        return ElementalResidualOutput(
            res=out.res[0], res_vol=out.res_vol[0], res_face=out.res_face[0]
        )
    Ue_d, Un_d, xe_d = seed_elemental(geom, U_e, U_n, x_e)
    out = element_eval(law, geom, els, Ue_d, Un_d, xe_d, mu)
    tan = out.res.tan[0]
    return ElementalResidualOutput(
        res=out.res.val[0],
        res_vol=out.res_vol.val[0],
        res_face=out.res_face.val[0],
        jac_self=tan[:, :n_u].copy(),
        jac_neigh=tan[:, n_u : n_u + 3 * n_u].copy(),
        jac_coord=tan[:, n_u + 3 * n_u :].copy(),
    )


def assemble_global(law, mesh, maps, U, x, mu, want_jacobians=True):
    """Assembled residual and sparse Jacobians over the whole mesh.

    Returns ``R`` and, when requested, CSR matrices ``dR/dU`` of shape
    (N_u, N_u) and ``dR/dx`` of shape (N_u, N_x).
    """
    geom = get_geometry(mesh, maps)
    els = np.arange(mesh.num_elements)
    U_e, U_n = geom.gather_state(U, els)
    x_e = geom.gather_coords(x, els)
    if not want_jacobians:
        out = element_eval(law, geom, els, U_e, U_n, x_e, mu)
        return out.res.reshape(-1), None, None
    Ue_d, Un_d, xe_d = seed_elemental(geom, U_e, U_n, x_e)
    out = element_eval(law, geom, els, Ue_d, Un_d, xe_d, mu)
    n_u = geom.n_basis * geom.n_comp
    R = out.res.val.reshape(-1)
    tan = out.res.tan  # (ne, n_u, T)
    rows = maps.state_map[:, :, None]

    jac_self = tan[:, :, :n_u]
    jac_neigh = tan[:, :, n_u : 4 * n_u]
    jac_coord = tan[:, :, 4 * n_u :]

    r1 = np.broadcast_to(rows, jac_self.shape).ravel()
    c1 = np.broadcast_to(maps.state_map[:, None, :], jac_self.shape).ravel()
    nmap = maps.neighbor_map
    valid = nmap >= 0
    r2 = np.broadcast_to(rows, jac_neigh.shape).ravel()
    c2 = np.broadcast_to(np.clip(nmap, 0, None)[:, None, :], jac_neigh.shape).ravel()
    d2 = (jac_neigh * valid[:, None, :]).ravel()
    dRdU = sp.coo_matrix(
        (
            np.concatenate([jac_self.ravel(), d2]),
            (np.concatenate([r1, r2]), np.concatenate([c1, c2])),
        ),
        shape=(maps.n_global_state, maps.n_global_state),
    ).tocsr()
    r3 = np.broadcast_to(rows, jac_coord.shape).ravel()
    c3 = np.broadcast_to(maps.coord_map[:, None, :], jac_coord.shape).ravel()
    dRdx = sp.coo_matrix(
        (jac_coord.ravel(), (r3, c3)),
        shape=(maps.n_global_state, maps.n_global_coord),
    ).tocsr()
    return R, dRdU, dRdx


def assemble_enriched(law, mesh, maps, U, x, mu, test_degree=None, want_jacobians=True):
    """Residual tested against a degree p+1 nodal space, with Jacobians.

    The enriched residual cannot vanish on feature-misaligned meshes,
    which is what turns the full-space least-squares problem into a
    feature-tracking problem.  Returns ``Rbar`` of length
    ``N_e * n_test * m`` (element-major) and sparse ``dRbar/dU``,
    ``dRbar/dx``.
    """
    geom = get_geometry(mesh, maps)
    test = geom.test_space(
        maps.degree_sol + 1 if test_degree is None else test_degree
    )
    els = np.arange(mesh.num_elements)
    U_e, U_n = geom.gather_state(U, els)
    x_e = geom.gather_coords(x, els)
    if not want_jacobians:
        out = element_eval(law, geom, els, U_e, U_n, x_e, mu, test=test)
        return out.res.reshape(-1), None, None
    Ue_d, Un_d, xe_d = seed_elemental(geom, U_e, U_n, x_e)
    out = element_eval(law, geom, els, Ue_d, Un_d, xe_d, mu, test=test)
    n_u = geom.n_basis * geom.n_comp
    n_t = test.n_basis * geom.n_comp
    ne = mesh.num_elements
    Rbar = out.res.val.reshape(-1)
    tan = out.res.tan  # (ne, n_t, T)
    test_map = (np.arange(ne)[:, None] * n_t + np.arange(n_t)[None, :]).astype(np.int64)
    rows = test_map[:, :, None]

    jac_self = tan[:, :, :n_u]
    jac_neigh = tan[:, :, n_u : 4 * n_u]
    jac_coord = tan[:, :, 4 * n_u :]
    r1 = np.broadcast_to(rows, jac_self.shape).ravel()
    c1 = np.broadcast_to(maps.state_map[:, None, :], jac_self.shape).ravel()
    nmap = maps.neighbor_map
    valid = nmap >= 0
    r2 = np.broadcast_to(rows, jac_neigh.shape).ravel()
    c2 = np.broadcast_to(np.clip(nmap, 0, None)[:, None, :], jac_neigh.shape).ravel()
    d2 = (jac_neigh * valid[:, None, :]).ravel()
    dRdU = sp.coo_matrix(
        (
            np.concatenate([jac_self.ravel(), d2]),
            (np.concatenate([r1, r2]), np.concatenate([c1, c2])),
        ),
        shape=(ne * n_t, maps.n_global_state),
    ).tocsr()
    r3 = np.broadcast_to(rows, jac_coord.shape).ravel()
    c3 = np.broadcast_to(maps.coord_map[:, None, :], jac_coord.shape).ravel()
    dRdx = sp.coo_matrix(
        (jac_coord.ravel(), (r3, c3)), shape=(ne * n_t, maps.n_global_coord)
    ).tocsr()
    return Rbar, dRdU, dRdx


def initial_state(law, mesh, maps, x, mu):
    """Law-provided initial guess sampled at the deformed solution nodes."""
    geom = get_geometry(mesh, maps)
    pos = geom.state_positions(x)
    return np.asarray(law.initial_state(pos, mu), dtype=float).reshape(-1)


class HdmSolveError(RuntimeError):
    def __init__(self, message, residual_norm, state):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.state = state


def solve_hdm(law, mesh, maps, x, mu, U_init=None, tol=1e-10, max_iters=80):
    """Damped Newton solve of the DG system on a frozen deformed mesh.

    Falls back to pseudo-transient continuation when the line search
    stalls; converges to ``|R| <= tol * max(1, |R(U_init)|)``.
    """
    if U_init is None:
        U = initial_state(law, mesh, maps, x, mu)
    else:
        U = np.asarray(U_init, dtype=float).copy()
    R, J, _ = assemble_global(law, mesh, maps, U, x, mu)
    rnorm0 = np.linalg.norm(R)
    target = tol * max(1.0, rnorm0)
    rnorm = rnorm0
    ptc = 0.0  # inverse pseudo-timestep; 0 = plain Newton
    ident = sp.identity(maps.n_global_state, format="csr")
    for _ in range(max_iters):
        if rnorm <= target:
            return HdmState(values=U, degree_sol=maps.degree_sol)
        A = J + ptc * ident if ptc > 0.0 else J
        try:
            dU = spla.splu(A.tocsc()).solve(-R)
        except RuntimeError:
            ptc = max(10.0 * ptc, 1e-4 * rnorm)
            continue
        alpha, best = 1.0, None
        for _ in range(30):
            try:
                Rt, _, _ = assemble_global(
                    law, mesh, maps, U + alpha * dU, x, mu, want_jacobians=False
                )
                nt = np.linalg.norm(Rt)
            except DegenerateMappingError:
                nt = np.inf
            if nt < (1.0 - 1e-4 * alpha) * rnorm or nt <= target:
                best = (alpha, nt)
                break
            alpha *= 0.5
        if best is None:
            # line search stalled: engage / strengthen pseudo-transient damping
            ptc = max(4.0 * ptc, 1e-3 * max(rnorm, 1.0))
            continue
        U = U + best[0] * dU
        rnorm = best[1]
        # relax damping as the residual drops (switched-evolution style)
        if ptc > 0.0:
            ptc = ptc / 4.0 if best[0] == 1.0 else ptc
            if ptc < 1e-12 * max(rnorm, 1.0):
                ptc = 0.0
        R, J, _ = assemble_global(law, mesh, maps, U, x, mu)
        rnorm = np.linalg.norm(R)
    if rnorm <= target:
        return HdmState(values=U, degree_sol=maps.degree_sol)
    raise HdmSolveError(
        f"HDM solve did not converge: |R| = {rnorm:.3e} (target {target:.3e})",
        rnorm,
        HdmState(values=U, degree_sol=maps.degree_sol),
    )
