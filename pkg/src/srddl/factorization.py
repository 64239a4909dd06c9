"""Structure-weighted dynamic dictionary factorization.

A cohort of window-correlation sequences {Gamma_t} is factorized as
``Gamma_t ~ B diag(c_t) B^T`` with a shared orthonormal basis B (P x K) and
nonnegative per-window loadings c_t, under the graph-weighted reconstruction
penalty ``Tr(X^T L X)``. The bilinear coupling is split with auxiliary
variables ``D_t = B diag(c_t)`` and scaled duals ``Lambda_t``, giving

* a basis update that is an orthogonal Procrustes problem,
* closed-form primal updates and gradient-ascent dual updates per window,
* a parametric loading gradient (combined by the trainer with the prediction
  head's input gradient), and
* nonnegative quadratic programs that recover loadings for unseen subjects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

logger = logging.getLogger("srddl.factorization")

ORTHO_TOL = 1e-8


class RankDeficiencyError(ValueError):
    """Procrustes target is numerically rank deficient."""


class QPConvergenceError(RuntimeError):
    """Nonnegative QP failed to reach the KKT tolerance."""


def check_orthonormal(basis: np.ndarray, tol: float = ORTHO_TOL) -> float:
    """Return ``||B^T B - I||_F``; raise if it exceeds ``tol``."""
    k = basis.shape[1]
    err = float(np.linalg.norm(basis.T @ basis - np.eye(k)))
    if err > tol:
        raise ValueError(f"basis columns not orthonormal: ||B^T B - I|| = {err:.3e}")
    return err


@dataclass
class LoadingSequence:
    """Pre-activation loadings for one subject; ``c`` is their ReLU."""

    c_hat: np.ndarray  # (T, K)

    def __post_init__(self):
        self.c_hat = np.asarray(self.c_hat, dtype=float)
        if self.c_hat.ndim != 2:
            raise ValueError(f"c_hat must be (T, K), got shape {self.c_hat.shape}")

    @property
    def c(self) -> np.ndarray:
        return np.maximum(self.c_hat, 0.0)

    @property
    def n_windows(self) -> int:
        return self.c_hat.shape[0]

    @property
    def k(self) -> int:
        return self.c_hat.shape[1]


def _as_loading_matrix(loadings) -> np.ndarray:
    c = loadings.c if isinstance(loadings, LoadingSequence) else np.asarray(loadings, float)
    if c.ndim != 2:
        raise ValueError(f"loadings must be (T, K), got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("loadings must be nonnegative")
    return c


@dataclass
class ConstraintState:
    """Per-subject splitting variables: primal D, dual Lambda, penalty weight."""

    d: np.ndarray  # (T, P, K)
    lam: np.ndarray  # (T, P, K)
    gamma: float

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.d.shape != self.lam.shape or self.d.ndim != 3:
            raise ValueError(
                f"primal/dual shapes must match as (T, P, K); got {self.d.shape} "
                f"and {self.lam.shape}"
            )
        # gamma = 0 is tolerated so the penalty can be evaluated in the
        # unconstrained limit; updates that need positivity check it themselves.
        if self.gamma < 0:
            raise ValueError(f"penalty weight must be nonnegative, got {self.gamma}")


@dataclass
class QPProblem:
    """Nonnegativity-constrained quadratic program ``min 1/2 c^T H c + f^T c``."""

    h: np.ndarray
    f: np.ndarray
    a_ineq: np.ndarray = field(default=None)
    b_ineq: np.ndarray = field(default=None)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        k = self.f.shape[0]
        if self.h.shape != (k, k):
            raise ValueError(f"H must be ({k}, {k}), got {self.h.shape}")
        if np.abs(self.h - self.h.T).max(initial=0.0) > 1e-10:
            raise ValueError("H must be symmetric within 1e-10")
        eigmin = np.linalg.eigvalsh(self.h)[0]
        if eigmin < -1e-10:
            raise ValueError(f"H must be PSD; min eigenvalue {eigmin:.3e}")
        if self.a_ineq is None:
            self.a_ineq = -np.eye(k)
        if self.b_ineq is None:
            self.b_ineq = np.zeros(k)

    @property
    def k(self) -> int:
        return self.f.shape[0]


@dataclass
class Hyperparameters:
    """Configuration for the coupled factorization/prediction fit.

    k and lambda_tradeoff default to the grid-searched operating point; the
    penalty weight, dual step and iteration budgets are surfaced here because
    no reference values exist for them.
    """

    k: int = 15
    lambda_tradeoff: float = 3.0
    gamma: float = 1.0
    dual_step: float | None = None  # defaults to gamma
    epochs_outer: int = 30
    epochs_loadings: int = 10
    epochs_network: int = 10
    dual_rounds: int = 20
    lr_network: float = 1e-4
    lr_loadings: float = 0.05
    lr_decay: float = 0.95
    lr_decay_every: int = 5
    hidden_width: int = 40
    head_epochs: int | None = None  # decoupled baseline; defaults to outer*network
    tol: float = 1e-4
    residual_tol: float = 1e-3
    qp_max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.lambda_tradeoff < 0:
            raise ValueError("lambda_tradeoff must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.dual_step is None:
            self.dual_step = self.gamma
        if self.dual_step <= 0:
            raise ValueError("dual_step must be positive")
        for name in ("epochs_outer", "epochs_loadings", "epochs_network",
                     "dual_rounds", "hidden_width", "qp_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr_network", "lr_loadings", "tol", "residual_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def weighted_frobenius(x: np.ndarray, laplacian: np.ndarray) -> float:
    """Graph-weighted squared norm ``Tr(X^T L X)``.

    Parameters
    ----------
    x : (P, Q) array
    laplacian : (P, P) symmetric PSD array

    Returns
    -------
    float, nonnegative up to roundoff for PSD weights.
    """
    x = np.asarray(x, dtype=float)
    laplacian = np.asarray(laplacian, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {x.shape}")
    if laplacian.shape != (x.shape[0], x.shape[0]):
        raise ValueError(
            f"weight matrix {laplacian.shape} incompatible with X of shape {x.shape}"
        )
    if np.abs(laplacian - laplacian.T).max(initial=0.0) > 1e-9:
        raise ValueError("weight matrix must be symmetric")
    return float(np.sum(x * (laplacian @ x)))


def _reconstruction_stack(basis, c):
    # (T, P, P) stack of B diag(c_t) B^T
    return np.matmul(basis * c[:, None, :], basis.T)


def srddl_loss(basis, loadings, gammas, laplacian) -> float:
    """Window-averaged weighted reconstruction error of the factorization.

    ``(1/T) sum_t Tr[(Gamma_t - B diag(c_t) B^T)^T L (Gamma_t - B diag(c_t) B^T)]``
    """
    c = _as_loading_matrix(loadings)
    gammas = np.asarray(gammas, dtype=float)
    basis = np.asarray(basis, dtype=float)
    t_n, p = gammas.shape[0], gammas.shape[1]
    if gammas.shape != (t_n, p, p) or basis.shape[0] != p or c.shape != (t_n, basis.shape[1]):
        raise ValueError(
            f"inconsistent shapes: gammas {gammas.shape}, basis {basis.shape}, "
            f"loadings {c.shape}"
        )
    residual = gammas - _reconstruction_stack(basis, c)
    weighted = np.matmul(np.asarray(laplacian, dtype=float), residual)
    return float(np.sum(residual * weighted) / t_n)


def augmented_penalty(basis, loadings, state: ConstraintState) -> float:
    """Lagrangian coupling penalty for one subject.

    ``(gamma/T) sum_t [ Tr(Lambda_t^T (D_t - B diag(c_t)))
                        + 1/2 ||D_t - B diag(c_t)||_F^2 ]``
    """
    c = _as_loading_matrix(loadings)
    basis = np.asarray(basis, dtype=float)
    t_n = state.d.shape[0]
    if c.shape[0] != t_n or state.d.shape[1:] != basis.shape:
        raise ValueError(
            f"inconsistent shapes: D {state.d.shape}, basis {basis.shape}, "
            f"loadings {c.shape}"
        )
    gap = state.d - c[:, None, :] * basis
    linear = float(np.sum(state.lam * gap))
    quad = 0.5 * float(np.sum(gap * gap))
    return state.gamma / t_n * (linear + quad)


def coupling_gap(basis, loadings, state: ConstraintState) -> np.ndarray:
    """``D_t - B diag(c_t)`` stacked over windows."""
    c = _as_loading_matrix(loadings)
    return state.d - c[:, None, :] * np.asarray(basis, dtype=float)


# ---------------------------------------------------------------------------
# basis update (orthogonal Procrustes)
# ---------------------------------------------------------------------------

def procrustes_target_terms(gammas, laplacian, loadings, state: ConstraintState):
    """One subject's contribution to the Procrustes target matrix.

    ``(1/T) sum_t (Gamma_t L + L Gamma_t) D_t + gamma (D_t + Lambda_t) diag(c_t)``
    """
    c = _as_loading_matrix(loadings)
    gammas = np.asarray(gammas, dtype=float)
    laplacian = np.asarray(laplacian, dtype=float)
    t_n = gammas.shape[0]
    gl = gammas @ laplacian
    cross = gl + np.transpose(gl, (0, 2, 1))  # Gamma L + L Gamma for symmetric inputs
    target = np.matmul(cross, state.d).sum(axis=0)
    target += state.gamma * ((state.d + state.lam) * c[:, None, :]).sum(axis=0)
    return target / t_n


def procrustes_target(cohort, loadings, states) -> np.ndarray:
    """Procrustes target summed over all subjects of a cohort.

    Parameters
    ----------
    cohort : Cohort
    loadings : mapping subject_id -> LoadingSequence (or (T, K) array)
    states : mapping subject_id -> ConstraintState
    """
    if len(cohort.subjects) == 0:
        raise ValueError("cannot build a Procrustes target from an empty cohort")
    total = None
    for subject in cohort.subjects:
        sid = subject.subject_id
        term = procrustes_target_terms(
            subject.connectome.gammas,
            subject.structure.laplacian,
            loadings[sid],
            states[sid],
        )
        total = term if total is None else total + term
    return total


def procrustes_update(target: np.ndarray, allow_rank_deficient: bool = False) -> np.ndarray:
    """Orthonormal matrix maximizing ``Tr(B^T M)`` via the SVD of the target.

    With thin SVD ``M = U S V^T`` the optimum is ``B = U V^T``. A numerically
    rank-deficient target makes the optimum non-unique; that is an error
    unless ``allow_rank_deficient`` is set, in which case the solver's
    arbitrary completion is used and a warning is logged.
    """
    target = np.asarray(target, dtype=float)
    if target.ndim != 2 or target.shape[0] < target.shape[1]:
        raise ValueError(f"target must be P x K with P >= K, got {target.shape}")
    u, s, vt = np.linalg.svd(target, full_matrices=False)
    if s[0] == 0 or s[-1] < 1e-10 * s[0]:
        if not allow_rank_deficient:
            raise RankDeficiencyError(
                f"Procrustes target is rank deficient (sigma_min/sigma_max = "
                f"{0.0 if s[0] == 0 else s[-1] / s[0]:.3e}); pass "
                f"allow_rank_deficient=True to accept an arbitrary completion"
            )
        logger.warning(
            "rank-deficient Procrustes target (sigma ratio %.3e); basis "
            "completion is arbitrary", 0.0 if s[0] == 0 else s[-1] / s[0],
        )
    basis = u @ vt
    check_orthonormal(basis)
    return basis


# ---------------------------------------------------------------------------
# constraint-variable updates
# ---------------------------------------------------------------------------

def update_constraint_primal(state: ConstraintState, basis, loadings, gammas,
                             laplacian) -> np.ndarray:
    """Closed-form primal update: solve ``(2L + gamma I) D = 2 L Gamma B - gamma Lambda + gamma B diag(c)``.

    The system matrix is positive definite for gamma > 0 because L is PSD, so
    a single Cholesky factorization serves every window.
    """
    if state.gamma <= 0:
        raise ValueError("primal update requires a positive penalty weight")
    c = _as_loading_matrix(loadings)
    basis = np.asarray(basis, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    laplacian = np.asarray(laplacian, dtype=float)
    if not (np.isfinite(gammas).all() and np.isfinite(basis).all()
            and np.isfinite(c).all() and np.isfinite(state.lam).all()):
        raise ValueError("non-finite inputs to primal update")
    t_n, p = gammas.shape[0], gammas.shape[1]
    k = basis.shape[1]
    rhs = 2.0 * np.matmul(np.matmul(laplacian, gammas), basis)
    rhs -= state.gamma * state.lam
    rhs += state.gamma * (c[:, None, :] * basis)
    system = 2.0 * laplacian + state.gamma * np.eye(p)
    factor = cho_factor(system)
    flat = np.moveaxis(rhs, 0, 2).reshape(p, t_n * k)
    solved = cho_solve(factor, flat)
    return np.moveaxis(solved.reshape(p, k, t_n), 2, 0).copy()


def update_constraint_dual(state: ConstraintState, basis, loadings,
                           dual_step: float) -> np.ndarray:
    """Gradient-ascent dual update ``Lambda <- Lambda + step (D - B diag(c))``."""
    if dual_step < 0:
        raise ValueError(f"dual_step must be nonnegative, got {dual_step}")
    return state.lam + dual_step * coupling_gap(basis, loadings, state)


def constraint_gradient(d, basis, loadings, gammas, laplacian,
                        lam, gamma: float) -> np.ndarray:
    """Gradient of the constrained objective with respect to the primal D.

    ``(1/T) [ 2 L D (B^T B) - 2 L Gamma B + gamma Lambda + gamma (D - B diag(c)) ]``
    per window; used to certify the closed-form update.
    """
    c = _as_loading_matrix(loadings)
    basis = np.asarray(basis, dtype=float)
    t_n = gammas.shape[0]
    btb = basis.T @ basis
    grad = 2.0 * np.matmul(np.matmul(laplacian, d), btb)
    grad -= 2.0 * np.matmul(np.matmul(laplacian, gammas), basis)
    grad += gamma * lam
    grad += gamma * (d - c[:, None, :] * basis)
    return grad / t_n


# ---------------------------------------------------------------------------
# loading gradient (parametric part)
# ---------------------------------------------------------------------------

def loading_objective_gradient(c_hat, basis, state: ConstraintState, gammas,
                               laplacian) -> np.ndarray:
    """Gradient of reconstruction + coupling penalty with respect to ``c_hat``.

    The reconstruction term is the factorized form ``Gamma - B diag(c) B^T``.
    For window t and component k,

        d/dc = -(2/T) diag(B^T E_t L B) - (gamma/T) diag(B^T (Lambda_t + D_t - B diag(c_t)))

    with ``E_t = Gamma_t - B diag(c_t) B^T``, then masked by the ReLU
    subgradient (zero wherever ``c_hat <= 0``).
    """
    c_hat = np.asarray(c_hat, dtype=float)
    basis = np.asarray(basis, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    laplacian = np.asarray(laplacian, dtype=float)
    c = np.maximum(c_hat, 0.0)
    t_n = gammas.shape[0]
    if c_hat.shape != (t_n, basis.shape[1]):
        raise ValueError(
            f"c_hat shape {c_hat.shape} inconsistent with T={t_n}, K={basis.shape[1]}"
        )
    residual = gammas - _reconstruction_stack(basis, c)
    lb = laplacian @ basis
    grad = -2.0 / t_n * np.sum(basis * np.matmul(residual, lb), axis=1)
    gap = state.lam + state.d - c[:, None, :] * basis
    grad -= state.gamma / t_n * np.sum(basis * gap, axis=1)
    grad = grad * (c_hat > 0)
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite loading gradient")
    return grad


# ---------------------------------------------------------------------------
# loading inference for unseen subjects (nonnegative QP per window)
# ---------------------------------------------------------------------------

def qp_build(basis, gamma_bar, l_bar) -> QPProblem:
    """Per-window QP whose solution is the unseen subject's loading vector.

    ``H = 2 B^T L B`` and ``f = -[(B^T (Gamma L + L Gamma) B) o I] 1``, with
    nonnegativity written as ``-I c <= 0``.
    """
    basis = np.asarray(basis, dtype=float)
    gamma_bar = np.asarray(gamma_bar, dtype=float)
    l_bar = np.asarray(l_bar, dtype=float)
    p = basis.shape[0]
    if gamma_bar.shape != (p, p) or l_bar.shape != (p, p):
        raise ValueError(
            f"window {gamma_bar.shape} / weight {l_bar.shape} matrices must be "
            f"({p}, {p}) to match the basis"
        )
    lb = l_bar @ basis
    h = 2.0 * basis.T @ lb
    h = (h + h.T) / 2.0
    cross = gamma_bar @ l_bar
    f = -np.einsum("pk,pq,qk->k", basis, cross + cross.T, basis)
    return QPProblem(h=h, f=f)


def _solve_free(h, f, idx):
    sub = h[np.ix_(idx, idx)]
    try:
        return np.linalg.solve(sub, -f[idx])
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(sub, -f[idx], rcond=None)[0]


def qp_solve(problem: QPProblem, max_iter: int = 500, tol: float = 1e-8) -> np.ndarray:
    """Solve ``min 1/2 c^T H c + f^T c  s.t.  c >= 0`` by an active-set sweep.

    Starts from the origin, frees the most negative dual coordinate, and
    clips primal steps at the nonnegativity boundary: the nonnegative
    least-squares strategy applied to the QP's KKT system. The result
    satisfies feasibility, dual feasibility ``(Hc + f)_i >= -tol`` and
    complementarity ``c_i (Hc + f)_i <= tol`` (scaled by the data magnitude);
    failure to reach that within the sweep budget raises with a residual
    report.
    """
    h, f = problem.h, problem.f
    k = problem.k
    scale = max(1.0, float(np.abs(f).max(initial=0.0)))
    c = np.zeros(k)
    free = np.zeros(k, dtype=bool)

    for _ in range(max_iter):
        w = h @ c + f
        candidates = ~free & (w < -tol * scale)
        if not candidates.any():
            feas, stat, comp = kkt_residuals(problem, c)
            if max(feas, stat, comp) <= 10 * tol * scale:
                return c
            break
        free[int(np.argmin(np.where(candidates, w, np.inf)))] = True
        for _ in range(max_iter):
            idx = np.flatnonzero(free)
            z = np.zeros(k)
            z[idx] = _solve_free(h, f, idx)
            if z[idx].min() > 0:
                c = z
                break
            # back off toward the last feasible point until the first
            # coordinate hits zero, then drop it from the free set
            neg = idx[z[idx] <= 0]
            denom = c[neg] - z[neg]
            with np.errstate(divide="ignore", invalid="ignore"):
                alphas = np.where(denom > 0, c[neg] / denom, 0.0)
            alpha = float(np.min(alphas))
            c = c + alpha * (z - c)
            c[neg] = np.maximum(c[neg], 0.0)
            drop = free & (c <= tol * 1e-4)
            c[drop] = 0.0
            free &= ~drop
            if not free.any():
                c = np.zeros(k)
                break
        else:
            break
    feas, stat, comp = kkt_residuals(problem, c)
    raise QPConvergenceError(
        f"QP did not meet KKT tolerance within {max_iter} sweeps: feasibility "
        f"{feas:.3e}, stationarity {stat:.3e}, complementarity {comp:.3e}"
    )


def kkt_residuals(problem: QPProblem, c) -> tuple[float, float, float]:
    """(feasibility, stationarity, complementarity) violations at ``c``."""
    w = problem.h @ c + problem.f
    feas = float(np.maximum(-c, 0.0).max(initial=0.0))
    stat = float(np.maximum(-w, 0.0).max(initial=0.0))
    comp = float(np.abs(c * w).max(initial=0.0))
    return feas, stat, comp
