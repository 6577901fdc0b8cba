"""Levenberg-Marquardt solver over split (state, deformation) coordinates.

Works on any problem exposing the small protocol below; the same solver
drives the reduced (hyperreduced) optimization, snapshot alignment, and
full-space feature tracking.  The regularization acts only on the
deformation block, steps come from the Gauss-Newton normal system, the
step length is chosen by a backtracking Armijo search with a weak-Wolfe
curvature check, and the damping parameter follows a gain-ratio rule.

Problem protocol
----------------
``nw, ntau``            block dimensions
``initial_guess()``     -> (w0, tau0)
``objective(w, tau)``   -> float, may raise DegenerateMappingError
``derivatives(w, tau)`` -> (J, S, T, H_ww, H_wt, H_tt); blocks may be
                           scipy sparse matrices for large problems
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg import DegenerateMappingError


@dataclass
class LmConfig:
    eps1: float = 1e-8
    eps2: float = 1e-8
    lambda0: float = None  # None: 1e-4 * trace(H_tt) / k_x
    lambda_inc: float = 2.0
    lambda_dec: float = 1.0 / 3.0
    ratio_hi: float = 0.75
    ratio_lo: float = 0.25
    max_iters: int = 200
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_backtracks: int = 30
    lambda_cap: float = 1e14
    w0_inner_tol: float = 1e-10
    w0_inner_iters: int = 50

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("termination tolerances must be positive")
        if not (0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0):
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class LmResult:
    w: np.ndarray
    tau: np.ndarray
    converged: bool
    objective: float
    grad_w_norm: float
    grad_tau_norm: float
    n_iters: int
    history: np.ndarray  # rows (iter, J, |S|, |T|, lambda, alpha)
    reason: str = ""


def history_csv(history, path):
    """Write a convergence history as CSV rows (iter, J, |S|, |T|, lambda, alpha)."""
    header = "iter,objective,grad_w_norm,grad_tau_norm,lambda,alpha"
    np.savetxt(path, np.atleast_2d(history), delimiter=",", header=header, comments="")


def _is_sparse(M):
    return sp.issparse(M)


def lm_step(blocks, grads, lam):
    """Solve the regularized Gauss-Newton system for (dw, dtau).

    ``blocks = (H_ww, H_wt, H_tt)``, ``grads = (S, T)``; the damping
    ``lam`` is added to the tau-tau block only.  Raises
    ``numpy.linalg.LinAlgError`` when the system is singular, which
    callers treat as a request to increase ``lam``.
    """
    H_ww, H_wt, H_tt = blocks
    S, T = grads
    nw, nt = len(S), len(T)
    if nw == 0 and nt == 0:
        return np.zeros(0), np.zeros(0)
    sparse = any(_is_sparse(M) for M in blocks if M is not None)
    if sparse:
        if nt == 0:
            K = sp.csc_matrix(H_ww)
        elif nw == 0:
            K = sp.csc_matrix(H_tt) + lam * sp.identity(nt, format="csc")
        else:
            K = sp.bmat(
                [
                    [sp.csr_matrix(H_ww), sp.csr_matrix(H_wt)],
                    [
                        sp.csr_matrix(H_wt).T,
                        sp.csr_matrix(H_tt) + lam * sp.identity(nt, format="csr"),
                    ],
                ],
                format="csc",
            )
        try:
            dz = spla.splu(K).solve(-np.concatenate([S, T]))
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc
    else:
        if nt == 0:
            K = np.atleast_2d(H_ww)
        elif nw == 0:
            K = np.atleast_2d(H_tt) + lam * np.eye(nt)
        else:
            K = np.block(
                [
                    [np.atleast_2d(H_ww), np.atleast_2d(H_wt)],
                    [np.atleast_2d(H_wt).T, np.atleast_2d(H_tt) + lam * np.eye(nt)],
                ]
            )
        dz = scipy.linalg.solve(K, -np.concatenate([S, T]), assume_a="sym")
    if not np.all(np.isfinite(dz)):
        raise np.linalg.LinAlgError("singular regularized system")
    return dz[:nw], dz[nw:]


def _state_init(problem, w, tau, config):
    """Gauss-Newton on the state block with the deformation frozen."""
    _, S, _, H_ww, _, _ = problem.derivatives(w, tau)
    target = config.w0_inner_tol * max(1.0, np.linalg.norm(S))
    J = None
    for _ in range(config.w0_inner_iters):
        if np.linalg.norm(S) <= target:
            break
        try:
            if _is_sparse(H_ww):
                dw = spla.splu(sp.csc_matrix(H_ww)).solve(-S)
            else:
                dw = scipy.linalg.solve(np.atleast_2d(H_ww), -S, assume_a="sym")
        except (np.linalg.LinAlgError, RuntimeError):
            break
        if J is None:
            J = problem.objective(w, tau)
        alpha, accepted = 1.0, False
        for _ in range(30):
            try:
                Jt = problem.objective(w + alpha * dw, tau)
            except DegenerateMappingError:
                Jt = math.inf
            if Jt <= J + 1e-4 * alpha * float(S @ dw):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        w = w + alpha * dw
        J = Jt
        _, S, _, H_ww, _, _ = problem.derivatives(w, tau)
    return w


def lm_solve(problem, config=None, w0_mode="lsq"):
    """Minimize the split-residual objective; see the module docstring.

    ``w0_mode="lsq"`` replaces the initial state coordinates by the
    minimizer of the residual norm at frozen deformation before the
    main iteration; ``"keep"`` trusts the problem's initial guess.
    """
    config = config or LmConfig()
    w, tau = problem.initial_guess()
    w = np.asarray(w, dtype=float).copy()
    tau = np.asarray(tau, dtype=float).copy()
    if w0_mode == "lsq" and len(w):
        w = _state_init(problem, w, tau, config)
    elif w0_mode not in ("lsq", "keep"):
        raise ValueError(f"unknown w0_mode {w0_mode!r}")

    lam = config.lambda0
    lam_floor = 0.0
    history = []
    best = None
    reason = "max-iters"
    J, S, T, H_ww, H_wt, H_tt = problem.derivatives(w, tau)
    n_done = 0
    for it in range(config.max_iters):
        nS, nT = np.linalg.norm(S), np.linalg.norm(T)
        if best is None or J < best[0]:
            best = (J, w.copy(), tau.copy(), nS, nT)
        if lam is None:
            if len(tau):
                diag_sum = (
                    H_tt.diagonal().sum()
                    if _is_sparse(H_tt)
                    else np.trace(np.atleast_2d(H_tt))
                )
                lam = 1e-4 * diag_sum / len(tau)
            else:
                lam = 0.0
            lam_floor = 1e-10 * lam if lam > 0 else 0.0
        history.append((it, J, nS, nT, lam, np.nan))
        if nS <= config.eps1 and nT <= config.eps2:
            history[-1] = (it, J, nS, nT, lam, 0.0)
            return LmResult(
                w, tau, True, J, nS, nT, it, np.array(history), "first-order"
            )
        n_done = it + 1

        # -- step with lambda escalation on singular systems or bad search
        accepted = False
        for _attempt in range(60):
            try:
                dw, dtau = lm_step((H_ww, H_wt, H_tt), (S, T), lam)
            except np.linalg.LinAlgError:
                lam = max(2.0 * lam, 1e-12) * 10.0
                if lam > config.lambda_cap:
                    break
                continue
            gdot = float(S @ dw + T @ dtau)
            if not np.isfinite(gdot) or gdot >= 0.0:
                lam = max(4.0 * lam, 1e-12)
                if lam > config.lambda_cap:
                    break
                continue
            alpha = 1.0
            J_new = None
            for _ in range(config.max_backtracks):
                try:
                    Jt = problem.objective(w + alpha * dw, tau + alpha * dtau)
                except DegenerateMappingError:
                    Jt = math.inf
                if Jt <= J + config.wolfe_c1 * alpha * gdot:
                    J_new = Jt
                    break
                alpha *= 0.5
            if J_new is None:
                lam = max(4.0 * lam, 1e-12)
                if lam > config.lambda_cap:
                    break
                continue
            accepted = True
            break
        if not accepted:
            reason = "line-search-failure"
            break

        w = w + alpha * dw
        tau = tau + alpha * dtau
        pred = -0.5 * alpha * gdot
        ratio = (J - J_new) / pred if pred > 0 else 1.0
        J_prev = J
        J, S, T, H_ww, H_wt, H_tt = problem.derivatives(w, tau)
        J = J_new if np.isfinite(J_new) else J
        # weak-Wolfe curvature check informs the damping update; a heavily
        # cut step means the model is poor at unit scale, so damp more
        # even when the gain ratio of the short step looks good
        curv_ok = float(S @ dw + T @ dtau) >= config.wolfe_c2 * gdot
        if alpha < 0.25 or ratio < config.ratio_lo:
            lam *= config.lambda_inc
        elif alpha == 1.0 and ratio > config.ratio_hi and curv_ok:
            lam *= config.lambda_dec
        lam = min(max(lam, lam_floor), config.lambda_cap)
        history[-1] = (it, J_prev, history[-1][2], history[-1][3], lam, alpha)

    nS, nT = np.linalg.norm(S), np.linalg.norm(T)
    if best is not None and best[0] < J:
        J, w, tau, nS, nT = best
    return LmResult(
        w, tau, False, J, nS, nT, n_done, np.array(history), reason
    )
