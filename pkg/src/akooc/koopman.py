"""Ensemble Koopman identification from rolling PMU windows.

State ordering throughout: ``x = [Δθ_1..Δθ_n, ΔV_1..ΔV_n]`` and
``z = [sinΔθ_1..n, cosΔθ_1..n, Δω_1..n]``; the lifted vector is ``χ = [x; z]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindow, DimensionMismatch, InsufficientHistory, NonFiniteUpdate

PINV_RTOL = 1e-10
EM_ARGMIN = "argmin"
EM_ZPRIME = "zprime"
ETA_OFFSET = 0


@dataclass
class LearnerParams:
    N: int = 10
    gamma: float = 5.0
    N_ITER: int = 150
    epsilon: float = 1e-16
    em_update: str = EM_ARGMIN
    pinv_rtol: float = PINV_RTOL

    def __post_init__(self):
        if self.em_update not in (EM_ARGMIN, EM_ZPRIME):
            raise ValueError(f"unknown em_update {self.em_update!r}")
        if self.N < 2:
            raise ValueError("window size N must be at least 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.N_ITER < 1:
            raise ValueError("N_ITER must be at least 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 <= self.pinv_rtol < 1:
            raise ValueError("pinv_rtol must lie in [0, 1)")


@dataclass
class KoopmanDataset:
    X: np.ndarray
    Xp: np.ndarray
    Z: np.ndarray
    Zp: np.ndarray
    U: np.ndarray
    T_s: float
    N: int

    @property
    def n_der(self) -> int:
        return self.X.shape[0] // 2


def embed(x_k, x_prev, T_s):
    """Nonlinear observables ``[sinΔθ; cosΔθ; (Δθ − Δθ_prev)/T_s]``.

    Works column-wise when given matrices.
    """
    x_k = np.asarray(x_k, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    n = x_k.shape[0] // 2
    th = x_k[:n]
    th_prev = x_prev[:n]
    return np.concatenate([np.sin(th), np.cos(th), (th - th_prev) / T_s], axis=0)


def lift(x_k, x_prev, T_s):
    """Full observable vector ``χ = [x; z]``."""
    return np.concatenate([np.asarray(x_k, dtype=float), embed(x_k, x_prev, T_s)], axis=0)


def assemble_window(xs, us, N: int, T_s: float) -> KoopmanDataset:
    """Build the regression matrices from the latest ``N+1`` states.

    ``xs`` is ``2n × M`` (oldest column first) and ``us`` holds the control
    issued at each of those samples (``us[:, j]`` pairs with ``xs[:, j]``;
    only the first ``M−1`` columns are used). The window has ``N−1`` columns.
    """
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    if xs.ndim != 2 or us.ndim != 2:
        raise DimensionMismatch("xs and us must be 2-D (channels × samples)")
    if xs.shape[1] < N + 1 or us.shape[1] < xs.shape[1] - 1 or us.shape[1] < N:
        raise InsufficientHistory(f"need {N + 1} states and {N} controls, "
                                  f"have {xs.shape[1]} and {us.shape[1]}")
    m = xs.shape[1]
    win = xs[:, m - N - 1:]
    # u_{k-N+1} .. u_{k-1} pair with x_{k-N+1} .. x_{k-1}
    U = us[:, m - N:m - 1]
    if not (np.all(np.isfinite(win)) and np.all(np.isfinite(U))):
        raise InsufficientHistory("window contains non-finite samples")
    n = xs.shape[0] // 2
    X, Xp = win[:, 1:N], win[:, 2:N + 1]
    Z = embed(X, win[:, 0:N - 1], T_s)
    Zp = embed(Xp, X, T_s)
    return KoopmanDataset(X, Xp, Z, Zp, U, T_s, N)


def pinv(M, rel_tol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD, dropping singular values below ``rel_tol·σ_max``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(M.shape[::-1])
    keep = s > rel_tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def estimate_cm_bm(X, Z, B, rel_tol: float = PINV_RTOL):
    """``C_M = X Z†`` and ``B̂_M = C_M† B``."""
    Z = np.asarray(Z, dtype=float)
    if not np.any(Z):
        raise DegenerateWindow("lifted window Z is identically zero")
    C_M = np.asarray(X, dtype=float) @ pinv(Z, rel_tol)
    B_M_hat = pinv(C_M, rel_tol) @ np.asarray(B, dtype=float)
    return C_M, B_M_hat


def regression_error(ds: KoopmanDataset, A_E, A_EM, C_M, B_M_hat, B) -> float:
    """Frobenius residual of the ensemble model scaled by ``1/√(N − N_r)``.

    ``N_r = 2·n_der``; when the window is shorter than the state dimension the
    scale falls back to 1.
    """
    R = ds.Xp - (A_E @ ds.X + B @ ds.U) - C_M @ (A_EM @ ds.Z + B_M_hat @ ds.U)
    dof = max(ds.N - ds.X.shape[0], 1)
    return float(np.linalg.norm(R) / np.sqrt(dof))


def iterate_ensemble(ds: KoopmanDataset, init, C_M, B_M_hat, B, params: LearnerParams,
                     rel_tol: float = PINV_RTOL):
    """Alternating relaxed least-squares updates of ``A_EM`` and ``A_E``.

    The learning rate is ``η_l = γ/(γ + l)`` with ``l = 0, 1, …`` so the first
    pass is unrelaxed. Stops when consecutive regression errors differ by at
    most ``epsilon`` or after ``N_ITER`` passes. Returns ``(A_E, A_EM, trace)``
    where ``trace[0]`` is the error of ``init``.

    ``params.em_update`` picks the ``A_EM`` target. ``"argmin"`` minimizes the
    state residual over ``A_EM`` with ``A_E`` held, i.e.
    ``C_M†(X′ − A_E X − (B + C_M B̂_M) U) Z†``. ``"zprime"`` regresses the
    lifted one-step map instead, ``(Z′ − C_M† A_E X − (B̂_M + C_M† B) U) Z†``,
    which in general does not decrease the state residual.
    """
    A_E = np.array(init[0], dtype=float, copy=True)
    A_EM = np.array(init[1], dtype=float, copy=True)
    X, Xp, Z, Zp, U = ds.X, ds.Xp, ds.Z, ds.Zp, ds.U
    X_pinv = pinv(X, rel_tol)
    Z_pinv = pinv(Z, rel_tol)
    C_pinv = pinv(C_M, rel_tol)
    B_x = B + C_M @ B_M_hat

    # loop-invariant pieces of the two closed-form updates
    if params.em_update == EM_ARGMIN:
        z_target = C_pinv @ (Xp - B_x @ U) @ Z_pinv
    else:
        z_target = (Zp - (B_M_hat + C_pinv @ B) @ U) @ Z_pinv
    XZp = X @ Z_pinv
    x_target = (Xp - B_x @ U) @ X_pinv
    ZXp = Z @ X_pinv

    e_prev = regression_error(ds, A_E, A_EM, C_M, B_M_hat, B)
    trace = [e_prev]
    for l in range(params.N_ITER):
        eta = params.gamma / (params.gamma + l + ETA_OFFSET)
        A_EM = (1 - eta) * A_EM + eta * (z_target - C_pinv @ A_E @ XZp)
        A_E = (1 - eta) * A_E + eta * (x_target - C_M @ A_EM @ ZXp)
        e = regression_error(ds, A_E, A_EM, C_M, B_M_hat, B)
        if not (np.isfinite(e) and np.all(np.isfinite(A_E)) and np.all(np.isfinite(A_EM))):
            raise NonFiniteUpdate(f"non-finite iterate at pass {l}")
        trace.append(e)
        if abs(e - e_prev) <= params.epsilon:
            break
        e_prev = e
    return A_E, A_EM, trace


def assemble_koopman(A_E, A_EM, C_M, B_M_hat, B, rel_tol: float = PINV_RTOL):
    """Lifted ``(A_C, B_C)`` of the ensemble model."""
    A_E, A_EM, C_M, B_M_hat, B = (np.asarray(a, dtype=float) for a in (A_E, A_EM, C_M, B_M_hat, B))
    nx, nz = A_E.shape[0], A_EM.shape[0]
    nu = B.shape[1]
    if (A_E.shape != (nx, nx) or A_EM.shape != (nz, nz) or C_M.shape != (nx, nz)
            or B_M_hat.shape != (nz, nu) or B.shape != (nx, nu)):
        raise DimensionMismatch("inconsistent ensemble block dimensions")
    C_pinv = pinv(C_M, rel_tol)
    A_C = np.block([[A_E, C_M @ A_EM], [C_pinv @ A_E, A_EM]])
    B_C = np.vstack([B + C_M @ B_M_hat, B_M_hat + C_pinv @ B])
    return A_C, B_C


@dataclass
class EnsembleModel:
    A_E: np.ndarray
    A_EM: np.ndarray
    C_M: np.ndarray
    B_M_hat: np.ndarray
    B: np.ndarray
    A_C: np.ndarray = None
    B_C: np.ndarray = None
    regression_error: float = float("nan")
    iterations_used: int = 0
    error_trace: list = field(default_factory=list)
    rel_tol: float = PINV_RTOL

    def __post_init__(self):
        if self.A_C is None or self.B_C is None:
            self.A_C, self.B_C = assemble_koopman(self.A_E, self.A_EM, self.C_M,
                                                  self.B_M_hat, self.B, self.rel_tol)

    def predict(self, x_k, z_k, u_k):
        return predict_one_step(self, x_k, z_k, u_k)


@dataclass
class LiftedLinearModel:
    """Plain EDMDc model ``χ⁺ = A_C χ + B_C u`` fitted jointly without the ensemble split."""

    A_C: np.ndarray
    B_C: np.ndarray
    n_x: int

    def predict(self, x_k, z_k, u_k):
        chi = np.concatenate([x_k, z_k])
        return (self.A_C @ chi + self.B_C @ u_k)[:self.n_x]


def predict_one_step(model: EnsembleModel, x_k, z_k, u_k):
    return (model.A_E @ x_k + model.B @ u_k
            + model.C_M @ (model.A_EM @ z_k + model.B_M_hat @ u_k))


def prediction_error(x_true, x_hat, dim=None) -> float:
    diff = np.asarray(x_true, dtype=float) - np.asarray(x_hat, dtype=float)
    dim = diff.size if dim is None else dim
    return float(np.linalg.norm(diff) / np.sqrt(dim))


def residual_comparison(ds: KoopmanDataset, model: EnsembleModel, rel_tol: float = PINV_RTOL):
    """Frobenius residuals of the ensemble and of each sub-model refit on its own.

    Returns ``(ensemble, linear_only, nonlinear_only)`` where the linear model
    is ``A_E X + B U`` with ``A_E`` refit and the nonlinear one is
    ``C_M (A_EM Z + B̂_M U)`` with ``A_EM`` refit.
    """
    X, Xp, Z, U = ds.X, ds.Xp, ds.Z, ds.U
    C_M, B_M_hat, B = model.C_M, model.B_M_hat, model.B
    R_ens = Xp - (model.A_E @ X + B @ U) - C_M @ (model.A_EM @ Z + B_M_hat @ U)
    A_lin = (Xp - B @ U) @ pinv(X, rel_tol)
    R_lin = Xp - (A_lin @ X + B @ U)
    A_nl = pinv(C_M, rel_tol) @ (Xp - C_M @ B_M_hat @ U) @ pinv(Z, rel_tol)
    R_nl = Xp - C_M @ (A_nl @ Z + B_M_hat @ U)
    return float(np.linalg.norm(R_ens)), float(np.linalg.norm(R_lin)), float(np.linalg.norm(R_nl))


def fit_full_no_ensemble(ds: KoopmanDataset, rel_tol: float = PINV_RTOL) -> LiftedLinearModel:
    """Single-pass joint least-squares fit of ``[A_C, B_C]`` on ``χ`` and ``u``."""
    chi = np.vstack([ds.X, ds.Z])
    chi_p = np.vstack([ds.Xp, ds.Zp])
    G = chi_p @ pinv(np.vstack([chi, ds.U]), rel_tol)
    n_chi = chi.shape[0]
    return LiftedLinearModel(G[:, :n_chi], G[:, n_chi:], ds.X.shape[0])


class EnsembleLearner:
    """Rolling identifier that warm-starts each window from the previous fit."""

    def __init__(self, params: LearnerParams, B, linear_only: bool = False,
                 rel_tol: float | None = None):
        self.params = params
        self.B = np.asarray(B, dtype=float)
        self.linear_only = linear_only
        self.rel_tol = params.pinv_rtol if rel_tol is None else rel_tol
        self.warm = None

    def reset(self):
        self.warm = None

    def fit(self, ds: KoopmanDataset) -> EnsembleModel:
        nx, nz = ds.X.shape[0], ds.Z.shape[0]
        if self.linear_only:
            C_M = np.zeros((nx, nz))
            B_M_hat = np.zeros((nz, self.B.shape[1]))
        else:
            C_M, B_M_hat = estimate_cm_bm(ds.X, ds.Z, self.B, self.rel_tol)
        init = self.warm if self.warm is not None else (np.eye(nx), np.eye(nz))
        A_E, A_EM, trace = iterate_ensemble(ds, init, C_M, B_M_hat, self.B, self.params,
                                            self.rel_tol)
        self.warm = (A_E, A_EM)
        return EnsembleModel(A_E, A_EM, C_M, B_M_hat, self.B,
                             regression_error=trace[-1], iterations_used=len(trace) - 1,
                             error_trace=trace, rel_tol=self.rel_tol)
